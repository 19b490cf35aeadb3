"""Named, checkpointable model parameters and small layer helpers.

All weights use the row-vector convention: a layer mapping a -> b is a
matrix of shape (a, b) applied as `x @ W + bias`. Hidden widths of the
two-layer perceptrons equal the node width m.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import Dims
from .errors import ContractError
from .rng import RngStream


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    return ad.add(out, b) if b is not None else out


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return linear(ad.relu(linear(x, w1, b1)), w2, b2)


def _glorot(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal_array((fan_in, fan_out), 0.0, 1.0 / np.sqrt(fan_in))


class ModelParams:
    """All learned weights of the pipeline, keyed by dotted name."""

    def __init__(self, dims: Dims, tensors: dict[str, Tensor], gcn_layers: int):
        self.dims = dims
        self.gcn_layers = gcn_layers
        self._tensors = dict(tensors)

    @classmethod
    def init(cls, dims: Dims, seed: int, gcn_layers: int = 2) -> "ModelParams":
        m, g, h, d = dims.m, dims.g, dims.h, dims.d
        rng = RngStream(seed, stream=17)
        t: dict[str, np.ndarray] = {}
        # pairwise relation proposal: 2m -> m -> h
        t["prop.w1"] = _glorot(rng, 2 * m, m)
        t["prop.b1"] = np.zeros(m)
        t["prop.w2"] = _glorot(rng, m, h)
        t["prop.b2"] = np.zeros(h)
        for layer in range(gcn_layers):
            t[f"gcn.{layer}.w_node"] = _glorot(rng, m, m)
            t[f"gcn.{layer}.w_edge"] = _glorot(rng, h, m)
            t[f"gcn.{layer}.bias"] = np.zeros(m)
        # cross-frame relevance projection (linear, no bias)
        t["temporal.phi"] = _glorot(rng, m, d)
        # pair encoder f_g: 2m -> m -> m ; relation encoder f_tau: 2m -> m -> m
        t["temporal.fg.w1"] = _glorot(rng, 2 * m, m)
        t["temporal.fg.b1"] = np.zeros(m)
        t["temporal.fg.w2"] = _glorot(rng, m, m)
        t["temporal.fg.b2"] = np.zeros(m)
        t["temporal.ftau.w1"] = _glorot(rng, 2 * m, m)
        t["temporal.ftau.b1"] = np.zeros(m)
        t["temporal.ftau.w2"] = _glorot(rng, m, m)
        t["temporal.ftau.b2"] = np.zeros(m)
        # relation classifier (single fully connected layer) and label head
        t["rel.w"] = _glorot(rng, 2 * m, h)
        t["rel.b"] = np.zeros(h)
        t["label.w"] = _glorot(rng, m, g)
        t["label.b"] = np.zeros(g)
        return cls(dims, {k: Tensor(v) for k, v in t.items()}, gcn_layers)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractError(f"params: unknown parameter {name!r}") from None

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def watch_all(self, tape: Tape) -> None:
        tape.watch(*self._tensors.values())

    def replaced(self, new_tensors: dict[str, Tensor]) -> "ModelParams":
        merged = dict(self._tensors)
        merged.update(new_tensors)
        return ModelParams(self.dims, merged, self.gcn_layers)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._tensors.items()}

    @classmethod
    def from_arrays(cls, dims: Dims, arrays: dict[str, np.ndarray], gcn_layers: int) -> "ModelParams":
        return cls(dims, {k: Tensor(v) for k, v in arrays.items()}, gcn_layers)

    def count(self) -> int:
        return sum(v.size for v in self._tensors.values())
