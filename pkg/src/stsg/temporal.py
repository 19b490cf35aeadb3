"""Cross-frame stage: relevance scoring, sparse link selection, temporal
relation encoding, and joint refinement into relation predictions.

Links always span adjacent frames. The relevance score projects every node
once and takes pairwise inner products; the concatenate-and-score
alternative would cost a projection per pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import MODES, VARIANTS
from .errors import ContractError
from .params import ModelParams, linear, mlp2
from .scene import FrameRecord, ObjectNode, SceneSequence, TemporalLink
from .spatial import full_connectivity, gcn_propagate, pair_indices, propose_relations

DENOM_GUARD = 1e-8


class CallCounter:
    """Counts node-projection applications (rows pushed through the kernel map)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def relevance_scores(feats_t: Tensor, feats_tm1: Tensor, phi: Tensor,
                     counter: CallCounter | None = None) -> Tensor:
    """gamma[j, k] = <phi(feat_t[j]), phi(feat_tm1[k])>, projecting each node once."""
    proj_t = ad.matmul(feats_t, phi)
    proj_tm1 = ad.matmul(feats_tm1, phi)
    if counter is not None:
        counter.add(feats_t.shape[0])
        counter.add(feats_tm1.shape[0])
    return ad.matmul(proj_t, ad.transpose(proj_tm1))


def select_topk(gamma: np.ndarray, k: int) -> np.ndarray:
    """Binary mask with min(k, N_prev) ones per row at the largest scores.

    Ties go to the lowest previous-frame index (stable sort on (-score, index)).
    """
    if k < 1:
        raise ContractError(f"select_topk: need k >= 1, got {k}")
    n_t, n_prev = gamma.shape
    eta = np.zeros((n_t, n_prev), dtype=np.int64)
    take = min(k, n_prev)
    for j in range(n_t):
        order = np.lexsort((np.arange(n_prev), -gamma[j]))
        eta[j, order[:take]] = 1
    return eta


def frame_context(feats: Tensor) -> Tensor:
    """Mean of the GCN-updated node features; undefined for empty frames."""
    if feats.shape[0] < 1:
        raise ContractError("frame_context: empty frame has no context")
    return ad.reduce_mean(feats, axis=0)


def encode_temporal_pairs(feats_t: Tensor, feats_tm1: Tensor,
                          curr_idx: np.ndarray, prev_idx: np.ndarray,
                          context: Tensor, params: ModelParams) -> Tensor:
    """Encode every selected (current j, previous k) pair into an m-vector.

    tau = f_tau(context ++ f_g(feat_t[j] ++ feat_tm1[k])), batched over pairs.
    """
    m = params.dims.m
    pairs = ad.concat(
        [ad.gather_rows(feats_t, curr_idx), ad.gather_rows(feats_tm1, prev_idx)], axis=1
    )
    inner = mlp2(pairs, params["temporal.fg.w1"], params["temporal.fg.b1"],
                 params["temporal.fg.w2"], params["temporal.fg.b2"])
    tiled = ad.add(ad.reshape(context, (1, m)), Tensor(np.zeros((len(curr_idx), m))))
    joined = ad.concat([tiled, inner], axis=1)
    return mlp2(joined, params["temporal.ftau.w1"], params["temporal.ftau.b1"],
                params["temporal.ftau.w2"], params["temporal.ftau.b2"])


def encode_temporal(feat_j: Tensor, feat_k: Tensor, context: Tensor,
                    params: ModelParams) -> Tensor:
    """Single-pair convenience around the batched encoder."""
    m = params.dims.m
    out = encode_temporal_pairs(
        ad.reshape(feat_j, (1, m)), ad.reshape(feat_k, (1, m)),
        np.array([0]), np.array([0]), context, params,
    )
    return ad.reshape(out, (m,))


def aggregate_links(gamma_sel: Tensor, tau: Tensor, curr_idx: np.ndarray,
                    n_curr: int) -> Tensor:
    """Relevance-weighted mean of tau per current node.

    Rows whose selected-weight sum is within DENOM_GUARD of zero fall back to
    a uniform average (gradient then skips gamma); rows with no links get 0.
    """
    n_links = tau.shape[0]
    member = np.zeros((n_curr, n_links))
    member[curr_idx, np.arange(n_links)] = 1.0
    denom_vals = member @ gamma_sel.data
    counts = member.sum(axis=1)
    uniform_rows = (np.abs(denom_vals) < DENOM_GUARD) & (counts > 0)
    keep_gamma = (~uniform_rows[curr_idx]).astype(np.float64)
    force_one = uniform_rows[curr_idx].astype(np.float64)
    weights = ad.add(ad.mul(gamma_sel, Tensor(keep_gamma)), Tensor(force_one))
    col = ad.reshape(weights, (n_links, 1))
    numer = ad.matmul(Tensor(member), ad.mul(tau, col))
    denom = ad.matmul(Tensor(member), col)
    # empty rows divide 0 by 1, yielding the exact zero vector
    safe = ad.add(denom, Tensor((counts == 0).astype(np.float64).reshape(-1, 1)))
    return ad.div(numer, safe)


def fuse(updated: Tensor, aggregated: Tensor) -> Tensor:
    """Final node representation: elementwise sum of spatial and temporal context."""
    if updated.shape != aggregated.shape:
        raise ContractError(
            f"fuse: shapes {updated.shape} and {aggregated.shape} differ"
        )
    return ad.add(updated, aggregated)


def relation_logits(fused: Tensor, params: ModelParams) -> Tensor:
    """Pre-sigmoid pair scores f_r(fused_i ++ fused_j), shape (N, N, H)."""
    n = fused.shape[0]
    subj, obj = pair_indices(n, n)
    pairs = ad.concat([ad.gather_rows(fused, subj), ad.gather_rows(fused, obj)], axis=1)
    return ad.reshape(linear(pairs, params["rel.w"], params["rel.b"]),
                      (n, n, params.dims.h))


def _diag_mask(n: int) -> Tensor:
    mask = np.ones((n, n, 1))
    mask[np.arange(n), np.arange(n), 0] = 0.0
    return Tensor(mask)


def classify_relations(fused: Tensor, params: ModelParams) -> Tensor:
    """p[i, j] = sigmoid(f_r(fused_i ++ fused_j)) off-diagonal, 0 on it."""
    n = fused.shape[0]
    return ad.mul(ad.sigmoid(relation_logits(fused, params)), _diag_mask(n))


def tracking_connections(nodes_t: list[ObjectNode], nodes_tm1: list[ObjectNode]) -> np.ndarray:
    """Link each node to the spatially closest previous node with the same argmax label."""
    eta = np.zeros((len(nodes_t), len(nodes_tm1)), dtype=np.int64)
    for j, node in enumerate(nodes_t):
        cx, cy = node.box.center()
        best, best_d = -1, np.inf
        for k, prev in enumerate(nodes_tm1):
            if prev.label != node.label:
                continue
            px, py = prev.box.center()
            d = np.hypot(cx - px, cy - py)
            if d < best_d:
                best, best_d = k, d
        if best >= 0:
            eta[j, best] = 1
    return eta


# ---------------------------------------------------------------------------
# whole-sequence forward


@dataclass
class FrameOutput:
    """Taped per-frame results (tensors stay live for the loss)."""

    nodes: list[ObjectNode]
    label_dists: Tensor | None = None
    relation_probs: Tensor | None = None
    relation_logits: Tensor | None = None   # pre-sigmoid scores for stable losses
    fused: Tensor | None = None
    gcn: Tensor | None = None
    proposal: Tensor | None = None
    links: list[TemporalLink] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.nodes)


@dataclass
class FramePrediction:
    """Value-level per-frame prediction for metrics, banks and serialization."""

    boxes: np.ndarray
    label_dists: np.ndarray
    relation_probs: np.ndarray
    fused: np.ndarray
    gcn: np.ndarray
    links: list[TemporalLink] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.boxes.shape[0]


def nodes_for_mode(frame: FrameRecord, mode: str, g: int) -> list[ObjectNode]:
    """Node inputs per evaluation protocol.

    predcls: gt boxes and labels; sgcls: gt boxes with the simulated
    detector's label distributions; sgdet: simulated detections.
    """
    if mode == "predcls":
        return [o.as_node(g) for o in frame.objects]
    if mode == "sgcls":
        return [o.as_node(g, use_detector_labels=True) for o in frame.objects]
    if mode == "sgdet":
        return list(frame.detections)
    raise ContractError(f"mode: must be one of {MODES}, got {mode!r}")


def _link_mask(variant: str, k: int, gamma: np.ndarray,
               nodes_t: list[ObjectNode], nodes_tm1: list[ObjectNode]) -> np.ndarray:
    if variant == "sparse":
        return select_topk(gamma, k)
    if variant == "dense":
        return np.ones(gamma.shape, dtype=np.int64)
    if variant == "tracking":
        return tracking_connections(nodes_t, nodes_tm1)
    raise ContractError(f"variant: must be one of {VARIANTS}, got {variant!r}")


def forward_sequence(sequence: SceneSequence, params: ModelParams, mode: str,
                     variant: str = "sparse", k: int = 1,
                     counter: CallCounter | None = None,
                     link_mask_fn=None) -> list[FrameOutput]:
    """Run the full pipeline over one sequence.

    The first frame (and any frame after an empty one) has no predecessor and
    keeps its spatial features unchanged. `link_mask_fn(gamma, nodes_t,
    nodes_tm1) -> mask` overrides link selection when given.
    """
    if mode not in MODES:
        raise ContractError(f"mode: must be one of {MODES}, got {mode!r}")
    if variant not in VARIANTS:
        raise ContractError(f"variant: must be one of {VARIANTS}, got {variant!r}")
    if variant == "sparse" and k < 1:
        raise ContractError(f"sparse variant requires k >= 1, got {k}")

    dims = params.dims
    outputs: list[FrameOutput] = []
    prev: FrameOutput | None = None
    for frame in sequence.frames:
        nodes = nodes_for_mode(frame, mode, dims.g)
        if not nodes:
            outputs.append(FrameOutput(nodes=[]))
            prev = None
            continue
        feats = Tensor(np.stack([o.node_feat for o in nodes]))
        proposal = propose_relations(feats, params)
        theta = Tensor(full_connectivity(len(nodes)))
        updated = gcn_propagate(feats, theta, proposal, params)

        links: list[TemporalLink] = []
        fused = updated
        if prev is not None and variant != "spatial":
            gamma = relevance_scores(updated, prev.gcn, params["temporal.phi"], counter)
            if link_mask_fn is not None:
                eta = np.asarray(link_mask_fn(gamma.data, nodes, prev.nodes))
            else:
                eta = _link_mask(variant, k, gamma.data, nodes, prev.nodes)
            curr_idx, prev_idx = np.nonzero(eta)
            if len(curr_idx) > 0:
                context = frame_context(updated)
                tau = encode_temporal_pairs(updated, prev.gcn, curr_idx, prev_idx,
                                            context, params)
                flat = ad.reshape(gamma, (gamma.size,))
                gamma_sel = ad.gather_rows(flat, curr_idx * gamma.shape[1] + prev_idx)
                zeta = aggregate_links(gamma_sel, tau, curr_idx, len(nodes))
                fused = fuse(updated, zeta)
                links = [
                    TemporalLink(int(p), int(c), float(gamma.data[c, p]), 1, tau.data[i])
                    for i, (c, p) in enumerate(zip(curr_idx, prev_idx))
                ]

        logits = relation_logits(fused, params)
        probs = ad.mul(ad.sigmoid(logits), _diag_mask(len(nodes)))
        if mode == "predcls":
            label_dists = Tensor(np.stack([o.label_dist for o in nodes]))
        else:
            label_dists = ad.softmax(linear(fused, params["label.w"], params["label.b"]), axis=-1)

        out = FrameOutput(nodes=nodes, label_dists=label_dists, relation_probs=probs,
                          relation_logits=logits, fused=fused, gcn=updated,
                          proposal=proposal, links=links)
        outputs.append(out)
        prev = out
    return outputs


def to_predictions(outputs: list[FrameOutput], dims) -> list[FramePrediction]:
    preds = []
    for out in outputs:
        if out.n == 0:
            preds.append(FramePrediction(
                boxes=np.zeros((0, 4)),
                label_dists=np.zeros((0, dims.g)),
                relation_probs=np.zeros((0, 0, dims.h)),
                fused=np.zeros((0, dims.m)),
                gcn=np.zeros((0, dims.m)),
            ))
            continue
        preds.append(FramePrediction(
            boxes=np.stack([o.box.as_array() for o in out.nodes]),
            label_dists=out.label_dists.data,
            relation_probs=out.relation_probs.data,
            fused=out.fused.data,
            gcn=out.gcn.data,
            links=out.links,
        ))
    return preds
