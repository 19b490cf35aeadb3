import numpy as np
import pytest

from fixtures import exhaustive_recall_at_k, three_frame_fixture, _pred, _gt, G, H
from stsg.config import Dims
from stsg.errors import ContractError
from stsg.metrics import (
    EfficiencyReport,
    FrameEval,
    RankedTriplet,
    average_precision_from_flags,
    box_iou,
    constrained_view,
    count_params_flops,
    evaluate,
    mean_recall,
    rank_triplets,
    recall_at_k,
    relation_map,
)
from stsg.rng import RngStream


def random_frame_eval(rng, n=3, n_gt=2):
    rel = rng.uniform_array((n, n, H), 0.0, 1.0)
    for i in range(n):
        rel[i, i] = 0.0
    boxes = []
    for _ in range(n):
        w = rng.uniform(0.1, 0.3)
        boxes.append([rng.uniform(0, 0.6), rng.uniform(0, 0.6), w, w])
    labels = [rng.integer(G) for _ in range(n)]
    pred = _pred(boxes, labels, [rng.uniform(0.5, 1.0) for _ in range(n)], rel)
    gt_objects = [_gt(b[0], b[1], b[2], b[3], lab) for b, lab in zip(boxes, labels)]
    triplets = []
    for _ in range(n_gt):
        i, j = rng.integer(n), rng.integer(n)
        if i != j:
            triplets.append((i, j, rng.integer(H)))
    return FrameEval(rank_triplets(pred, constraint=False), sorted(set(triplets)), gt_objects)


# ---------------------------------------------------------------------------
# ranking


def test_constraint_keeps_one_predicate_per_pair():
    fe = three_frame_fixture()[0]
    pairs = [(t.subj_idx, t.obj_idx) for t in constrained_view(fe.ranked)]
    assert len(pairs) == len(set(pairs))


def test_no_constraint_keeps_at_most_six_per_pair():
    rng = RngStream(60)
    rel = rng.uniform_array((2, 2, 8), 0.0, 1.0)
    rel[0, 0] = rel[1, 1] = 0.0
    pred = _pred([[0.1, 0.1, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]], [0, 1], [1.0, 1.0], rel)
    ranked = rank_triplets(pred, constraint=False)
    from collections import Counter

    counts = Counter((t.subj_idx, t.obj_idx) for t in ranked)
    assert max(counts.values()) <= 6


def test_ranking_matches_hand_sort():
    rel = np.zeros((2, 2, 3))
    rel[0, 1] = [0.9, 0.1, 0.5]
    rel[1, 0] = [0.2, 0.8, 0.3]
    pred = _pred([[0.1, 0.1, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]], [0, 1], [1.0, 0.5], rel)
    ranked = rank_triplets(pred, constraint=False)
    got = [(t.subj_idx, t.obj_idx, t.predicate, t.score) for t in ranked]
    want = [(0, 1, 0, 0.45), (1, 0, 1, 0.4), (0, 1, 2, 0.25), (1, 0, 2, 0.15),
            (1, 0, 0, 0.1), (0, 1, 1, 0.05)]
    for (gi, gj, gp, gs), (wi, wj, wp, ws) in zip(got, want):
        assert (gi, gj, gp) == (wi, wj, wp)
        assert abs(gs - ws) < 1e-12


def test_triplet_requires_distinct_endpoints():
    with pytest.raises(ContractError):
        RankedTriplet(0, 0, 1, 1, 0, 0.5, (0, 0, 1, 1), (0, 0, 1, 1))


# ---------------------------------------------------------------------------
# recall


def test_recall_perfect_retrieval():
    frames = three_frame_fixture()[:1]
    assert recall_at_k(frames, 20, "predcls", constraint=False) == 1.0


def test_recall_half_retrieval():
    fe = three_frame_fixture()[0]
    # keep only the rank-1 prediction
    clipped = FrameEval(fe.ranked[:1], fe.gt_triplets, fe.gt_objects)
    assert recall_at_k([clipped], 20, "predcls", constraint=False) == 0.5


def test_sgdet_iou_edge_counts_as_match():
    frames = three_frame_fixture()
    subj = np.array(frames[1].ranked[0].subj_box)
    gt_box = frames[1].gt_objects[0].box.as_array()
    assert box_iou(subj, gt_box) == 0.5
    assert recall_at_k(frames[1:2], 10, "sgdet", constraint=False) == 1.0


def test_recall_matches_exhaustive_oracle_on_fixture():
    frames = three_frame_fixture()
    for mode in ("predcls", "sgcls", "sgdet"):
        for constraint in (False, True):
            for k in (1, 2, 5, 20):
                got = recall_at_k(frames, k, mode, constraint)
                want = exhaustive_recall_at_k(frames, k, mode, constraint)
                assert got == want, (mode, constraint, k)


def test_recall_monotone_in_k():
    rng = RngStream(61)
    for trial in range(100):
        fe = random_frame_eval(rng.split(trial))
        prev = 0.0
        for k in (1, 2, 4, 8, 16, 32):
            r = recall_at_k([fe], k, "sgdet", constraint=False)
            assert r >= prev - 1e-15
            prev = r


def test_constraint_never_beats_no_constraint():
    # guaranteed once k covers the candidate pool (n=3, H=3: 18 candidates);
    # the constrained list is then a sublist of the unconstrained one
    rng = RngStream(61)
    for trial in range(300):
        fe = random_frame_eval(rng.split(trial))
        for k in (18, 50):
            with_c = recall_at_k([fe], k, "sgdet", constraint=True)
            without = recall_at_k([fe], k, "sgdet", constraint=False)
            assert with_c <= without + 1e-15


def test_empty_gt_frames_are_skipped():
    fe = three_frame_fixture()[0]
    empty = FrameEval(fe.ranked, [], fe.gt_objects)
    assert recall_at_k([fe, empty], 20, "predcls", False) == \
        recall_at_k([fe], 20, "predcls", False)


# ---------------------------------------------------------------------------
# mean recall


def test_mean_recall_single_class_equals_recall():
    frames = three_frame_fixture()[1:2]   # only predicate 1 in gt
    assert mean_recall(frames, 10, "predcls", False) == \
        recall_at_k(frames, 10, "predcls", False)


def test_mean_recall_macro_average():
    # k=4 keeps the scored predictions and excludes the zero-score tail
    frames = three_frame_fixture()[2:]
    assert mean_recall(frames, 4, "predcls", False) == 0.5


def test_mean_recall_differs_from_micro_on_imbalance():
    frames = three_frame_fixture()[2:]
    micro = recall_at_k(frames, 4, "predcls", False)
    macro = mean_recall(frames, 4, "predcls", False)
    assert micro == pytest.approx(2 / 3)
    assert macro == 0.5


# ---------------------------------------------------------------------------
# average precision


def test_ap_perfect_ranking_is_one():
    assert average_precision_from_flags([1, 1, 1], 3) == 1.0


def test_ap_hand_staircase():
    # precisions at hits: 1/1, 2/3, 3/4, 4/6; envelope lifts 2/3 to 3/4
    flags = [1, 0, 1, 1, 0, 1]
    want = 0.2 * 1.0 + 0.4 * 0.75 + 0.2 * (4 / 6)
    assert abs(average_precision_from_flags(flags, 5) - want) < 1e-12


def test_ap_bounds():
    rng = RngStream(62)
    for _ in range(100):
        n = rng.integer(8) + 1
        flags = [int(rng.uniform() < 0.5) for _ in range(n)]
        n_pos = max(1, sum(flags) + rng.integer(3))
        ap = average_precision_from_flags(flags, n_pos)
        assert 0.0 <= ap <= 1.0


def test_relation_map_perfect_and_weighted():
    frames = three_frame_fixture()[:1]
    assert relation_map(frames, weighted=False) == 1.0
    # equal class frequencies: weighted mean equals plain mean
    assert relation_map(frames, weighted=True) == relation_map(frames, weighted=False)


def test_wmap_between_min_and_max_class_ap():
    frames = three_frame_fixture()
    m = relation_map(frames, weighted=False)
    w = relation_map(frames, weighted=True)
    assert 0.0 <= min(m, w) and max(m, w) <= 1.0


def test_evaluate_report_shape():
    report = evaluate(three_frame_fixture(), "sgdet", constraint=True)
    for key in ("recall@10", "recall@20", "recall@50", "mean_recall@20", "map_rel", "wmap_rel"):
        assert key in report


# ---------------------------------------------------------------------------
# efficiency accounting


def test_single_linear_layer_counting_rule():
    from stsg.metrics import _linear_cost

    m = 28
    params, flops = _linear_cost(m, m)
    assert params == m * m + m
    assert flops == 2 * m * m


def test_sparse_flops_below_dense_with_exact_gap():
    dims = Dims()
    m = dims.m
    link_cost = 2 * (2 * m) * m + 2 * m * m + 2 * (2 * m) * m + 2 * m * m
    for n in range(2, 9):
        sparse = count_params_flops(dims, n, "sparse", k=1)
        dense = count_params_flops(dims, n, "dense")
        assert sparse.flops_per_frame < dense.flops_per_frame
        assert dense.flops_per_frame - sparse.flops_per_frame == (n * n - n) * link_cost
        assert sparse.parameter_count == dense.parameter_count


def test_flops_monotone_in_k_and_saturating():
    dims = Dims()
    n = 5
    flops = [count_params_flops(dims, n, "sparse", k=k).flops_per_frame for k in range(1, 8)]
    assert all(a <= b for a, b in zip(flops, flops[1:]))
    dense = count_params_flops(dims, n, "dense").flops_per_frame
    assert flops[-1] == dense
    assert count_params_flops(dims, n, "sparse", k=n).flops_per_frame == dense


def test_parameter_count_matches_model():
    from stsg.params import ModelParams

    dims = Dims()
    report = count_params_flops(dims, 3)
    assert report.parameter_count == ModelParams.init(dims, seed=0).count()


def test_paper_scale_ratio_reported():
    dims = Dims()
    sparse = count_params_flops(dims, 3, "sparse", k=1)
    dense = count_params_flops(dims, 3, "dense")
    ratio = dense.flops_per_frame / sparse.flops_per_frame
    assert ratio > 1.0
