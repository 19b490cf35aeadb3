"""Losses, optimizers, gradient verification and the training loop.

The relation loss is a binary cross-entropy normalized separately over
positive and negative slots, with the no-relation branch down-weighted by
a factor of 5 (multiplier 0.2). Node classification supervises the label
head in the gt-box and detection protocols.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .config import RunConfig
from .errors import ContractError, TrainingError
from .params import ModelParams
from .rng import RngStream
from .scene import BoundingBox, FrameRecord, SceneSequence, iou
from .temporal import FrameOutput, forward_sequence, to_predictions

NEGATIVE_WEIGHT = 0.2  # no-relation terms down-weighted by a factor of 5
IOU_MATCH = 0.5


@dataclass
class LossReport:
    relation_loss: float = 0.0
    node_loss: float = 0.0
    total: float = 0.0
    n_positive: int = 0
    n_negative: int = 0


def relation_targets(frame: FrameRecord, output: FrameOutput, mode: str,
                     h: int) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Positive/negative flat indices into the (N, N, H) grid plus node->gt map.

    Index-aligned in predcls/sgcls; sgdet matches each node to its highest-IoU
    gt object at the 0.5 threshold before transferring triplets.
    """
    n = output.n
    if mode in ("predcls", "sgcls"):
        node_to_gt = {i: i for i in range(n)}
    else:
        node_to_gt = {}
        for i, node in enumerate(output.nodes):
            best, best_iou = -1, 0.0
            for gi, obj in enumerate(frame.objects):
                v = iou(node.box, obj.box)
                if v > best_iou:
                    best, best_iou = gi, v
            if best >= 0 and best_iou >= IOU_MATCH:
                node_to_gt[i] = best

    gt_pairs = {(i, j): [] for i in range(len(frame.objects)) for j in range(len(frame.objects))}
    for (i, j, p) in frame.triplets:
        gt_pairs[(i, j)].append(p)

    positive = np.zeros((n, n, h), dtype=bool)
    for i in range(n):
        gi = node_to_gt.get(i)
        if gi is None:
            continue
        for j in range(n):
            if i == j:
                continue
            gj = node_to_gt.get(j)
            if gj is None or gi == gj:
                continue
            for p in gt_pairs.get((gi, gj), ()):
                positive[i, j, p] = True

    off_diag = ~np.eye(n, dtype=bool)[:, :, None] & np.ones((n, n, h), dtype=bool)
    negative = off_diag & ~positive
    return (np.flatnonzero(positive), np.flatnonzero(negative), node_to_gt)


def relation_loss(probs: Tensor, pos_idx: np.ndarray, neg_idx: np.ndarray) -> tuple[Tensor, LossReport]:
    """Mean BCE over positives plus 0.2 * mean BCE over negatives (natural log)."""
    n_pos, n_neg = len(pos_idx), len(neg_idx)
    flat = ad.reshape(probs, (probs.size,))
    total = None
    if n_pos:
        p = ad.gather_rows(flat, pos_idx)
        total = ad.scale(ad.reduce_sum(ad.log(p)), -1.0 / n_pos)
    if n_neg:
        p = ad.gather_rows(flat, neg_idx)
        one_minus = ad.add(Tensor(np.ones(n_neg)), ad.scale(p, -1.0))
        neg_term = ad.scale(ad.reduce_sum(ad.log(one_minus)), -NEGATIVE_WEIGHT / n_neg)
        total = neg_term if total is None else ad.add(total, neg_term)
    if total is None:
        total = Tensor(0.0)
    report = LossReport(relation_loss=total.item(), total=total.item(),
                        n_positive=n_pos, n_negative=n_neg)
    return total, report


def relation_loss_from_logits(logits: Tensor, pos_idx: np.ndarray,
                              neg_idx: np.ndarray) -> tuple[Tensor, LossReport]:
    """Same BCE computed from pre-sigmoid scores.

    -log(sigmoid(z)) = softplus(-z) and -log(1 - sigmoid(z)) = softplus(z),
    which stays finite where the probability form underflows to log(0).
    """
    n_pos, n_neg = len(pos_idx), len(neg_idx)
    flat = ad.reshape(logits, (logits.size,))
    total = None
    if n_pos:
        z = ad.gather_rows(flat, pos_idx)
        total = ad.scale(ad.reduce_sum(ad.softplus(ad.scale(z, -1.0))), 1.0 / n_pos)
    if n_neg:
        z = ad.gather_rows(flat, neg_idx)
        neg_term = ad.scale(ad.reduce_sum(ad.softplus(z)), NEGATIVE_WEIGHT / n_neg)
        total = neg_term if total is None else ad.add(total, neg_term)
    if total is None:
        total = Tensor(0.0)
    report = LossReport(relation_loss=total.item(), total=total.item(),
                        n_positive=n_pos, n_negative=n_neg)
    return total, report


def node_loss(label_dists: Tensor, node_to_gt: dict[int, int],
              gt_labels: list[int], g: int) -> Tensor:
    """Mean categorical cross-entropy over gt-matched nodes; 0 with no matches."""
    if not node_to_gt:
        return Tensor(0.0)
    idx = sorted(node_to_gt)
    onehot = np.zeros((len(idx), g))
    for row, i in enumerate(idx):
        onehot[row, gt_labels[node_to_gt[i]]] = 1.0
    picked = ad.gather_rows(label_dists, np.array(idx))
    # pick the gt-class probability first so off-class zeros never reach log
    gt_prob = ad.reduce_sum(ad.mul(picked, Tensor(onehot)), axis=1)
    return ad.scale(ad.reduce_sum(ad.log(gt_prob)), -1.0 / len(idx))


def sequence_loss(sequence: SceneSequence, outputs: list[FrameOutput], mode: str,
                  dims, lambda_node: float) -> tuple[Tensor, LossReport]:
    """Frame-averaged total loss; empty frames are skipped."""
    terms = []
    report = LossReport()
    for frame, out in zip(sequence.frames, outputs):
        if out.n == 0:
            continue
        pos_idx, neg_idx, node_map = relation_targets(frame, out, mode, dims.h)
        rel, rep = relation_loss_from_logits(out.relation_logits, pos_idx, neg_idx)
        report.n_positive += rep.n_positive
        report.n_negative += rep.n_negative
        report.relation_loss += rep.relation_loss
        term = rel
        if mode in ("sgcls", "sgdet") and lambda_node != 0.0:
            nl = node_loss(out.label_dists, node_map,
                           [o.label for o in frame.objects], dims.g)
            report.node_loss += nl.item()
            term = ad.add(term, ad.scale(nl, lambda_node))
        terms.append(term)
    if not terms:
        return Tensor(0.0), report
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    total = ad.scale(total, 1.0 / len(terms))
    report.relation_loss /= len(terms)
    report.node_loss /= len(terms)
    report.total = total.item()
    return total, report


# ---------------------------------------------------------------------------
# optimizers


class Optimizer:
    """Adaptive-moment update with a plain gradient-descent option."""

    def __init__(self, kind: str = "adam", lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ContractError(f"optimizer: unknown kind {kind!r}")
        self.kind = kind
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step_tensors(self, tensors: dict[str, Tensor],
                     grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
        self.step_count += 1
        updated: dict[str, Tensor] = {}
        for name, tensor in tensors.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.kind == "sgd":
                updated[name] = Tensor(tensor.data - self.lr * g)
                continue
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            mhat = m / (1 - self.beta1 ** self.step_count)
            vhat = v / (1 - self.beta2 ** self.step_count)
            updated[name] = Tensor(tensor.data - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return updated

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> ModelParams:
        return params.replaced(self.step_tensors(dict(params.items()), grads))


# ---------------------------------------------------------------------------
# gradient verification


def loss_value(sequence: SceneSequence, params: ModelParams, mode: str,
               variant: str, k: int, lambda_node: float) -> float:
    outputs = forward_sequence(sequence, params, mode, variant, k)
    total, _ = sequence_loss(sequence, outputs, mode, params.dims, lambda_node)
    return total.item()


def grad_check(sequence: SceneSequence, params: ModelParams, mode: str = "sgcls",
               variant: str = "sparse", k: int = 1, lambda_node: float = 1.0,
               h: float = 1e-5, max_entries: int = 600, seed: int = 0) -> float:
    """Max relative error of tape gradients vs central finite differences.

    Checks every parameter entry when the model is small enough, otherwise a
    seeded subsample of at least max(500, one per tensor) entries. The error
    metric is |a - b| / max(1e-12, |a| + |b|).
    """
    tape = Tape()
    params.watch_all(tape)
    with tape:
        outputs = forward_sequence(sequence, params, mode, variant, k)
        total, _ = sequence_loss(sequence, outputs, mode, params.dims, lambda_node)
    grads = backward(tape, total)
    named = {name: grads[tensor].data for name, tensor in params.items()}

    entries: list[tuple[str, int]] = []
    total_entries = params.count()
    if total_entries <= max_entries:
        for name, tensor in params.items():
            entries.extend((name, i) for i in range(tensor.size))
    else:
        rng = RngStream(seed, stream=99)
        budget = max(max_entries, 500)
        names = params.names()
        # at least one entry per tensor, remainder proportional to size
        for name in names:
            entries.append((name, rng.integer(params[name].size)))
        while len(entries) < budget:
            name = names[rng.integer(len(names))]
            entries.append((name, rng.integer(params[name].size)))

    arrays = params.as_arrays()
    # central differences cannot resolve differences below the rounding noise
    # of the loss itself (~eps*|loss|/2h); exactly-zero gradients (e.g. the
    # relevance projection under k=1, where the link weight cancels in the
    # normalization) would otherwise compare 0 against pure ulp noise
    fd_floor = 8.0 * np.finfo(np.float64).eps * max(1.0, abs(total.item())) / (2 * h)
    worst = 0.0
    for name, flat_idx in entries:
        base = arrays[name]
        bumped = {k2: v for k2, v in arrays.items()}
        plus = base.copy()
        plus.reshape(-1)[flat_idx] += h
        bumped[name] = plus
        hi = loss_value(sequence, ModelParams.from_arrays(params.dims, bumped, params.gcn_layers),
                        mode, variant, k, lambda_node)
        minus = base.copy()
        minus.reshape(-1)[flat_idx] -= h
        bumped[name] = minus
        lo = loss_value(sequence, ModelParams.from_arrays(params.dims, bumped, params.gcn_layers),
                        mode, variant, k, lambda_node)
        numeric = (hi - lo) / (2 * h)
        analytic = named[name].reshape(-1)[flat_idx]
        if abs(analytic - numeric) <= fd_floor:
            continue
        err = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# training loop


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale the whole gradient down to a global L2 norm of max_norm.

    Near-cancelling link-weight sums can spike the aggregated features and
    with them the gradient; an unclipped step then launches the parameters
    into saturation.
    """
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_recall20: float | None = None


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochLog] = field(default_factory=list)


def train(dataset: list[SceneSequence], cfg: RunConfig,
          val: list[SceneSequence] | None = None,
          eval_fn=None) -> TrainResult:
    """Deterministic training: data order, init and updates derive from the seed.

    eval_fn(params) -> float supplies the per-epoch validation metric.
    """
    if not dataset:
        raise ContractError("train: dataset is empty")
    tc = cfg.train
    params = ModelParams.init(cfg.dims, seed=tc.seed, gcn_layers=tc.gcn_layers)
    opt = Optimizer(tc.optimizer, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
    log: list[EpochLog] = []
    order_rng = RngStream(tc.seed, stream=31)
    for epoch in range(tc.epochs):
        order = order_rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), tc.batch_size):
            batch = [dataset[i] for i in order[start:start + tc.batch_size]]
            tape = Tape()
            params.watch_all(tape)
            with tape:
                total = None
                for seq in batch:
                    outputs = forward_sequence(seq, params, tc.mode, tc.variant, tc.k)
                    loss, _ = sequence_loss(seq, outputs, tc.mode, cfg.dims, tc.lambda_node)
                    total = loss if total is None else ad.add(total, loss)
                total = ad.scale(total, 1.0 / len(batch))
            value = total.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch + 1}, batch {start // tc.batch_size + 1}"
                )
            epoch_losses.append(value)
            grads = backward(tape, total)
            named = {name: grads[t].data for name, t in params.items()}
            params = opt.step(params, clip_gradients(named, tc.clip_norm))
        entry = EpochLog(epoch=epoch + 1, train_loss=float(np.mean(epoch_losses)))
        if eval_fn is not None and (epoch + 1) % max(1, tc.val_every) == 0:
            entry.val_recall20 = float(eval_fn(params))
        log.append(entry)
    return TrainResult(params=params, log=log)
