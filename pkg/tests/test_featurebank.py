import numpy as np
import pytest

from conftest import random_sequence, zero_params
from stsg.autodiff import Tensor
from stsg.config import Dims
from stsg.errors import ContractError
from stsg.featurebank import (
    FeatureBank,
    build_feature_bank,
    classify_events,
    event_mean_ap,
    pooled_feature,
    train_event_head,
)
from stsg.rng import RngStream
from stsg.temporal import FramePrediction, forward_sequence, to_predictions


def prediction_with(labels, scores, dims, fused=None, gcn=None):
    n = len(labels)
    dists = np.zeros((n, dims.g))
    for i, (lab, s) in enumerate(zip(labels, scores)):
        dists[i, lab] = s
        dists[i, (lab + 1) % dims.g] = 1.0 - s
    if fused is None:
        fused = np.arange(n * dims.m, dtype=float).reshape(n, dims.m) + 1.0
    if gcn is None:
        gcn = fused * 2.0
    return FramePrediction(
        boxes=np.tile([0.1, 0.1, 0.2, 0.2], (n, 1)),
        label_dists=dists,
        relation_probs=np.zeros((n, n, dims.h)),
        fused=fused,
        gcn=gcn,
    )


def test_present_classes_fill_rows_absent_stay_zero():
    dims = Dims(g=4, c=2, h=2, d=2)
    pred = prediction_with([1, 3], [0.9, 0.8], dims)
    bank = build_feature_bank([pred], "spatial_temporal", dims)
    assert bank.z.shape == (1, 4, dims.m)
    np.testing.assert_array_equal(bank.z[0, 1], pred.fused[0])
    np.testing.assert_array_equal(bank.z[0, 3], pred.fused[1])
    assert np.all(bank.z[0, 0] == 0.0)
    assert np.all(bank.z[0, 2] == 0.0)


def test_duplicate_class_keeps_highest_label_score():
    dims = Dims(g=4, c=2, h=2, d=2)
    pred = prediction_with([2, 2], [0.6, 0.9], dims)
    bank = build_feature_bank([pred], "spatial_temporal", dims)
    np.testing.assert_array_equal(bank.z[0, 2], pred.fused[1])


def test_bank_is_order_invariant():
    dims = Dims(g=4, c=2, h=2, d=2)
    fused = np.array([[1.0] * dims.m, [2.0] * dims.m])
    a = prediction_with([2, 1], [0.9, 0.8], dims, fused=fused)
    b = prediction_with([1, 2], [0.8, 0.9], dims, fused=fused[::-1].copy())
    bank_a = build_feature_bank([a], "spatial_temporal", dims)
    bank_b = build_feature_bank([b], "spatial_temporal", dims)
    np.testing.assert_array_equal(bank_a.z, bank_b.z)


def test_spatial_variant_banks_gcn_features():
    dims = Dims(g=4, c=2, h=2, d=2)
    pred = prediction_with([0], [1.0], dims)
    bank = build_feature_bank([pred], "spatial", dims)
    np.testing.assert_array_equal(bank.z[0, 0], pred.gcn[0])


def test_variants_coincide_without_temporal_links(dims, params):
    seq = random_sequence(RngStream(70), dims, n_frames=3)
    outs = forward_sequence(seq, params, mode="sgcls", variant="spatial")
    preds = to_predictions(outs, dims)
    bank_s = build_feature_bank(preds, "spatial", dims)
    bank_st = build_feature_bank(preds, "spatial_temporal", dims)
    np.testing.assert_array_equal(bank_s.z, bank_st.z)


def test_banks_differ_with_temporal_links(dims, params):
    seq = random_sequence(RngStream(71), dims, n_frames=3)
    outs = forward_sequence(seq, params, mode="sgcls", variant="sparse", k=1)
    preds = to_predictions(outs, dims)
    bank_s = build_feature_bank(preds, "spatial", dims)
    bank_st = build_feature_bank(preds, "spatial_temporal", dims)
    assert not np.array_equal(bank_s.z, bank_st.z)


def test_zero_head_gives_half_probabilities():
    dims = Dims(g=4, c=2, h=2, d=2)
    pred = prediction_with([1], [0.9], dims)
    bank = build_feature_bank([pred], "spatial_temporal", dims)
    probs = classify_events(bank, Tensor(np.zeros((dims.m, 4))))
    np.testing.assert_array_equal(probs, np.full(4, 0.5))


def test_all_zero_bank_gives_half_probabilities():
    dims = Dims(g=4, c=2, h=2, d=2)
    bank = FeatureBank(z=np.zeros((2, 4, dims.m)), variant="spatial")
    head = Tensor(RngStream(72).normal_array((dims.m, 4)))
    np.testing.assert_array_equal(classify_events(bank, head), np.full(4, 0.5))


def test_classify_matches_direct_substitution():
    dims = Dims(g=4, c=2, h=2, d=2)
    pred = prediction_with([0, 2], [1.0, 0.9], dims)
    bank = build_feature_bank([pred], "spatial_temporal", dims)
    head = RngStream(73).normal_array((dims.m, 3))
    got = classify_events(bank, Tensor(head))
    pooled = (bank.z[0, 0] + bank.z[0, 2]) / 2.0
    want = 1.0 / (1.0 + np.exp(-(pooled @ head)))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert got.shape == (3,)


def test_bank_variant_validation():
    dims = Dims(g=4, c=2, h=2, d=2)
    with pytest.raises(ContractError):
        build_feature_bank([prediction_with([0], [1.0], dims)], "temporal", dims)


def test_event_head_learns_separable_banks():
    dims = Dims(g=4, c=2, h=2, d=2)
    rng = RngStream(74)
    banks, labels = [], []
    for i in range(40):
        cls = i % 2
        base = np.zeros((1, 2, dims.m))
        base[0, cls % 2, :] = rng.normal_array(dims.m, 3.0 if cls else -3.0, 0.3)
        banks.append(FeatureBank(z=base.repeat(2, axis=1).reshape(1, -1, dims.m)[:, :2],
                                 variant="spatial"))
        labels.append([1.0, 0.0] if cls else [0.0, 1.0])
    labels = np.array(labels)
    head = train_event_head(banks, labels, n_events=2, seed=0, epochs=150)
    scores = np.stack([classify_events(b, head) for b in banks])
    assert event_mean_ap(scores, labels) > 0.95


def test_event_mean_ap_perfect_ranking():
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]])
    labels = np.array([[1, 0], [1, 0], [0, 1]])
    assert event_mean_ap(scores, labels) == 1.0
