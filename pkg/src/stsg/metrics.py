"""Scene-graph evaluation and analytic efficiency accounting.

Triplets are ranked by subject-label score * object-label score * predicate
probability. The with-constraint setting keeps the best predicate per
ordered pair; no-constraint keeps up to six. Mean recall and relation AP
evaluate the per-frame list capped at 50 triplets; plain recall@K does not
cap. Detection-protocol matching requires label equality and both boxes at
IoU >= 0.5 (an IoU of exactly 0.5 counts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Dims
from .errors import ContractError
from .scene import FrameRecord, GroundTruthObject
from .temporal import FramePrediction

IOU_THRESHOLD = 0.5
NO_CONSTRAINT_PER_PAIR = 6
FRAME_TRIPLET_CAP = 50


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two (x, y, w, h) arrays."""
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class RankedTriplet:
    subj_idx: int
    obj_idx: int
    subj_label: int
    obj_label: int
    predicate: int
    score: float
    subj_box: tuple[float, float, float, float]
    obj_box: tuple[float, float, float, float]

    def __post_init__(self):
        if self.subj_idx == self.obj_idx:
            raise ContractError("triplet: subject and object must differ")
        if not np.isfinite(self.score):
            raise ContractError("triplet: score must be finite")


def rank_triplets(pred: FramePrediction, constraint: bool,
                  per_pair_cap: int = NO_CONSTRAINT_PER_PAIR,
                  frame_cap: int | None = None) -> list[RankedTriplet]:
    """Globally sorted triplet list for one frame; ties break on (i, j, h)."""
    n = pred.n
    if n < 2:
        return []
    labels = np.argmax(pred.label_dists, axis=1)
    label_scores = np.max(pred.label_dists, axis=1)
    h = pred.relation_probs.shape[2]
    keep = 1 if constraint else min(per_pair_cap, h)
    out: list[RankedTriplet] = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pair = pred.relation_probs[i, j]
            order = np.lexsort((np.arange(h), -pair))
            for p in order[:keep]:
                out.append(RankedTriplet(
                    subj_idx=i, obj_idx=j,
                    subj_label=int(labels[i]), obj_label=int(labels[j]),
                    predicate=int(p),
                    score=float(label_scores[i] * label_scores[j] * pair[p]),
                    subj_box=tuple(pred.boxes[i]), obj_box=tuple(pred.boxes[j]),
                ))
    out.sort(key=lambda t: (-t.score, t.subj_idx, t.obj_idx, t.predicate))
    return out[:frame_cap] if frame_cap is not None else out


def constrained_view(ranked: list[RankedTriplet]) -> list[RankedTriplet]:
    """Best predicate per ordered pair, preserving global rank order."""
    seen: set[tuple[int, int]] = set()
    out = []
    for t in ranked:
        key = (t.subj_idx, t.obj_idx)
        if key in seen:
            continue
        seen.add(key)
        out.append(t)
    return out


@dataclass
class FrameEval:
    """One frame's ranked predictions plus its ground truth."""

    ranked: list[RankedTriplet]
    gt_triplets: list[tuple[int, int, int]]
    gt_objects: list[GroundTruthObject]


def build_frame_eval(pred: FramePrediction, frame: FrameRecord) -> FrameEval:
    return FrameEval(
        ranked=rank_triplets(pred, constraint=False),
        gt_triplets=list(frame.triplets),
        gt_objects=list(frame.objects),
    )


def _matches_gt(t: RankedTriplet, gi: int, gj: int, p: int,
                objects: list[GroundTruthObject], mode: str) -> bool:
    if t.predicate != p:
        return False
    subj, obj = objects[gi], objects[gj]
    if mode in ("predcls", "sgcls"):
        return (t.subj_idx == gi and t.obj_idx == gj
                and t.subj_label == subj.label and t.obj_label == obj.label)
    return (t.subj_label == subj.label and t.obj_label == obj.label
            and box_iou(np.asarray(t.subj_box), subj.box.as_array()) >= IOU_THRESHOLD
            and box_iou(np.asarray(t.obj_box), obj.box.as_array()) >= IOU_THRESHOLD)


def match_frame(ranked: list[RankedTriplet], gt_triplets, gt_objects, mode: str) -> set[int]:
    """Greedy matching in rank order; each gt triplet is consumed at most once."""
    matched: set[int] = set()
    for t in ranked:
        for gi, (i, j, p) in enumerate(gt_triplets):
            if gi in matched:
                continue
            if _matches_gt(t, i, j, p, gt_objects, mode):
                matched.add(gi)
                break
    return matched


def recall_at_k(frames: list[FrameEval], k: int, mode: str,
                constraint: bool) -> float:
    """Fraction of gt triplets recovered in the top-k list, averaged over frames."""
    recalls = []
    for fe in frames:
        if not fe.gt_triplets:
            continue
        ranked = constrained_view(fe.ranked) if constraint else fe.ranked
        matched = match_frame(ranked[:k], fe.gt_triplets, fe.gt_objects, mode)
        recalls.append(len(matched) / len(fe.gt_triplets))
    return float(np.mean(recalls)) if recalls else 0.0


def mean_recall(frames: list[FrameEval], k: int, mode: str,
                constraint: bool, frame_cap: int = FRAME_TRIPLET_CAP) -> float:
    """Per-predicate recall@k macro-averaged over classes present in the gt."""
    per_class: dict[int, list[float]] = {}
    for fe in frames:
        if not fe.gt_triplets:
            continue
        ranked = constrained_view(fe.ranked) if constraint else fe.ranked
        ranked = ranked[:frame_cap]
        matched = match_frame(ranked[:k], fe.gt_triplets, fe.gt_objects, mode)
        classes = {p for (_, _, p) in fe.gt_triplets}
        for c in classes:
            total = sum(1 for (_, _, p) in fe.gt_triplets if p == c)
            got = sum(1 for gi in matched if fe.gt_triplets[gi][2] == c)
            per_class.setdefault(c, []).append(got / total)
    if not per_class:
        return 0.0
    return float(np.mean([np.mean(v) for v in per_class.values()]))


def average_precision_from_flags(flags: list[int], n_pos: int) -> float:
    """Exact precision-envelope integration over the PR staircase."""
    if n_pos == 0:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum([1 - f for f in flags], dtype=np.float64)
    recall = tp / n_pos
    precision = tp / np.maximum(tp + fp, 1e-12)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def relation_map(frames: list[FrameEval], weighted: bool, constraint: bool = False,
                 frame_cap: int = FRAME_TRIPLET_CAP) -> float:
    """Per-predicate AP over the corpus-wide score-sorted list.

    Matching is always detection style (labels plus IoU on both boxes);
    classes absent from the gt are excluded from the mean.
    """
    pooled: dict[int, list[tuple[float, int, RankedTriplet]]] = {}
    gt_count: dict[int, int] = {}
    for fi, fe in enumerate(frames):
        for (_, _, p) in fe.gt_triplets:
            gt_count[p] = gt_count.get(p, 0) + 1
        ranked = constrained_view(fe.ranked) if constraint else fe.ranked
        for t in ranked[:frame_cap]:
            pooled.setdefault(t.predicate, []).append((t.score, fi, t))

    aps: dict[int, float] = {}
    for c, n_pos in sorted(gt_count.items()):
        entries = pooled.get(c, [])
        entries.sort(key=lambda e: (-e[0], e[1], e[2].subj_idx, e[2].obj_idx))
        used: dict[int, set[int]] = {}
        flags = []
        for score, fi, t in entries:
            fe = frames[fi]
            taken = used.setdefault(fi, set())
            hit = 0
            for gi, (i, j, p) in enumerate(fe.gt_triplets):
                if p != c or gi in taken:
                    continue
                if _matches_gt(t, i, j, p, fe.gt_objects, "sgdet"):
                    taken.add(gi)
                    hit = 1
                    break
            flags.append(hit)
        aps[c] = average_precision_from_flags(flags, n_pos)

    if not aps:
        return 0.0
    if not weighted:
        return float(np.mean(list(aps.values())))
    total = sum(gt_count.values())
    return float(sum(gt_count[c] / total * aps[c] for c in aps))


def evaluate(frames: list[FrameEval], mode: str, constraint: bool,
             ks: tuple[int, ...] = (10, 20, 50)) -> dict:
    """Full metric report for one corpus under one protocol."""
    report = {"mode": mode, "constraint": constraint}
    for k in ks:
        report[f"recall@{k}"] = recall_at_k(frames, k, mode, constraint)
    for k in ks:
        report[f"mean_recall@{k}"] = mean_recall(frames, k, mode, constraint)
    report["map_rel"] = relation_map(frames, weighted=False, constraint=constraint)
    report["wmap_rel"] = relation_map(frames, weighted=True, constraint=constraint)
    return report


# ---------------------------------------------------------------------------
# efficiency accounting


@dataclass
class EfficiencyReport:
    parameter_count: int
    flops_per_frame: int
    n_objects: int
    variant: str
    k: int = 1
    breakdown: dict = field(default_factory=dict)


def _linear_cost(a: int, b: int, bias: bool = True) -> tuple[int, int]:
    """(parameters, flops per application) for a dense a -> b layer."""
    return a * b + (b if bias else 0), 2 * a * b


def count_params_flops(dims: Dims, n: int, variant: str = "sparse", k: int = 1,
                       gcn_layers: int = 2) -> EfficiencyReport:
    """Analytic counts; multiply-add pairs cost 2 FLOPs, only dense layers and
    the relevance dots are counted. Parameters do not depend on the variant."""
    if n < 0:
        raise ContractError(f"count_params_flops: need n >= 0, got {n}")
    m, g, h, d = dims.m, dims.g, dims.h, dims.d
    hidden = m
    params = 0
    flops = 0
    breakdown = {}

    p1, f1 = _linear_cost(2 * m, hidden)
    p2, f2 = _linear_cost(hidden, h)
    params += p1 + p2
    prop_flops = n * n * (f1 + f2)
    flops += prop_flops
    breakdown["proposal"] = prop_flops

    gcn_flops = 0
    for _ in range(gcn_layers):
        pn, fn = _linear_cost(m, m)
        pe, fe = _linear_cost(h, m, bias=False)
        params += pn + pe
        gcn_flops += n * fn + n * fe   # edge features aggregate before the transform
    flops += gcn_flops
    breakdown["gcn"] = gcn_flops

    pp, fp = _linear_cost(m, d, bias=False)
    params += pp
    temporal_on = variant != "spatial"
    proj_flops = n * fp if temporal_on else 0
    dot_flops = n * n * 2 * d if temporal_on else 0
    flops += proj_flops + dot_flops
    breakdown["relevance"] = proj_flops + dot_flops

    pg1, fg1 = _linear_cost(2 * m, hidden)
    pg2, fg2 = _linear_cost(hidden, m)
    pt1, ft1 = _linear_cost(2 * m, hidden)
    pt2, ft2 = _linear_cost(hidden, m)
    params += pg1 + pg2 + pt1 + pt2
    if variant == "dense":
        links = n * n
    elif variant == "sparse":
        links = n * min(k, n)
    elif variant == "tracking":
        links = n
    else:
        links = 0
    link_flops = links * (fg1 + fg2 + ft1 + ft2)
    flops += link_flops
    breakdown["temporal_encoding"] = link_flops

    pr, fr = _linear_cost(2 * m, h)
    params += pr
    rel_flops = n * n * fr
    flops += rel_flops
    breakdown["relation_head"] = rel_flops

    pl, fl = _linear_cost(m, g)
    params += pl
    label_flops = n * fl
    flops += label_flops
    breakdown["label_head"] = label_flops

    return EfficiencyReport(parameter_count=params, flops_per_frame=flops,
                            n_objects=n, variant=variant, k=k, breakdown=breakdown)
