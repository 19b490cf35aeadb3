"""Per-frame stage: pairwise relation proposal and GCN message passing.

The proposal scores every ordered pair with a two-layer perceptron on the
concatenated node encodings; its output doubles as the edge features of
the graph (L == H). Message passing follows

    updated_i = relu(nu_i + sum_j theta_ij (W_node nu_j + W_edge eps_ij) + bias)

with theta fixed to 1 off the diagonal and 0 on it: the residual term
already carries self-information.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .params import ModelParams, linear
from .scene import ObjectNode, SpatialSceneGraph


def pair_indices(n_subj: int, n_obj: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/col indices of all ordered pairs, subject-major."""
    subj = np.repeat(np.arange(n_subj), n_obj)
    obj = np.tile(np.arange(n_obj), n_subj)
    return subj, obj


def pairwise_scores(feats: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                    out_dim: int) -> Tensor:
    """sigmoid(mlp(feat_i ++ feat_j)) for every ordered pair, diagonal zeroed.

    Returns an (N, N, out_dim) tensor.
    """
    n = feats.shape[0]
    subj, obj = pair_indices(n, n)
    pairs = ad.concat([ad.gather_rows(feats, subj), ad.gather_rows(feats, obj)], axis=1)
    hidden = ad.relu(ad.add(ad.matmul(pairs, w1), b1))
    logits = ad.add(ad.matmul(hidden, w2), b2)
    probs = ad.reshape(ad.sigmoid(logits), (n, n, out_dim))
    mask = np.ones((n, n, 1))
    mask[np.arange(n), np.arange(n), 0] = 0.0
    return ad.mul(probs, Tensor(mask))


def propose_relations(feats: Tensor, params: ModelParams) -> Tensor:
    """Initial relation distribution R: (N, N, H), R[i][i] = 0."""
    if feats.shape[0] < 1:
        raise ContractError("propose_relations: need at least one node")
    return pairwise_scores(
        feats, params["prop.w1"], params["prop.b1"], params["prop.w2"], params["prop.b2"],
        params.dims.h,
    )


def full_connectivity(n: int) -> np.ndarray:
    theta = np.ones((n, n))
    np.fill_diagonal(theta, 0.0)
    return theta


def gcn_layer(feats: Tensor, theta: Tensor, edge_feats: Tensor,
              w_node: Tensor, w_edge: Tensor, bias: Tensor) -> Tensor:
    """One propagation step over the frame graph; returns updated (N, m) features.

    The bias sits inside the theta-weighted message, so an empty neighborhood
    reduces the layer to relu(feats) regardless of parameter values.
    """
    node_msg = ad.matmul(theta, ad.add(ad.matmul(feats, w_node), bias))
    # sum_j theta_ij eps_ij before the edge transform (linearity lets us
    # aggregate first and apply w_edge once per node)
    weighted = ad.mul(edge_feats, ad.reshape(theta, (*theta.shape, 1)))
    edge_msg = ad.matmul(ad.reduce_sum(weighted, axis=1), w_edge)
    return ad.relu(ad.add(feats, ad.add(node_msg, edge_msg)))


def gcn_propagate(feats: Tensor, theta: Tensor, edge_feats: Tensor,
                  params: ModelParams) -> Tensor:
    """Apply the configured stack of propagation layers sequentially."""
    out = feats
    for layer in range(params.gcn_layers):
        out = gcn_layer(
            out, theta, edge_feats,
            params[f"gcn.{layer}.w_node"],
            params[f"gcn.{layer}.w_edge"],
            params[f"gcn.{layer}.bias"],
        )
    return out


def build_frame_graph(nodes: list[ObjectNode], params: ModelParams) -> SpatialSceneGraph:
    """Value-level convenience: proposal + propagation with no tape active."""
    if not nodes:
        m = params.dims.m
        return SpatialSceneGraph([], np.zeros((0, 0)), np.zeros((0, 0, params.dims.h)),
                                 np.zeros((0, 0, params.dims.h)), np.zeros((0, m)))
    feats = Tensor(np.stack([o.node_feat for o in nodes]))
    relation = propose_relations(feats, params)
    theta = Tensor(full_connectivity(len(nodes)))
    updated = gcn_propagate(feats, theta, relation, params)
    return SpatialSceneGraph(
        nodes=nodes,
        connectivity=theta.data,
        edge_feats=relation.data,
        relation_dist=relation.data,
        updated_feats=updated.data,
    )
