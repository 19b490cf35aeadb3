import numpy as np
import pytest

from stsg.config import Dims, NoiseConfig, WorldConfig
from stsg.errors import ConfigError
from stsg.rng import RngStream
from stsg.scene import BoundingBox, GroundTruthObject
from stsg.synthgen import (
    APPROACHING,
    BENEATH,
    HOLDING,
    NEAR,
    RELEASING,
    _frame_triplets,
    _holding_pairs,
    class_prototypes,
    generate_scene,
    simulate_detector,
)

DIMS = Dims()
WORLD = WorldConfig()


def sequences_equal(a, b) -> bool:
    if len(a.frames) != len(b.frames) or not np.array_equal(a.event_labels, b.event_labels):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if fa.triplets != fb.triplets or len(fa.objects) != len(fb.objects):
            return False
        for oa, ob in zip(fa.objects, fb.objects):
            if oa.box != ob.box or oa.label != ob.label or oa.occluded != ob.occluded:
                return False
            if not np.array_equal(oa.visual_feat, ob.visual_feat):
                return False
            if not np.array_equal(oa.detector_label_dist, ob.detector_label_dist):
                return False
        if len(fa.detections) != len(fb.detections):
            return False
        for da, db in zip(fa.detections, fb.detections):
            if da.box != db.box or not np.array_equal(da.node_feat, db.node_feat):
                return False
    return True


def test_generate_scene_is_deterministic():
    a = generate_scene(DIMS, WORLD, seed=123)
    b = generate_scene(DIMS, WORLD, seed=123)
    assert sequences_equal(a, b)
    c = generate_scene(DIMS, WORLD, seed=124)
    assert not sequences_equal(a, c)


def test_static_scene_has_no_motion_predicates():
    boxes = [BoundingBox(0.1, 0.1, 0.1, 0.1), BoundingBox(0.5, 0.5, 0.1, 0.1)]
    centers = np.array([b.center() for b in boxes])
    vels = np.zeros((2, 2))
    held = _holding_pairs(boxes, vels)
    # identical previous frame: no velocity, no holding transitions
    trips = _frame_triplets(boxes, centers, centers, vels, held, held)
    predicates = {p for (_, _, p) in trips}
    assert APPROACHING not in predicates
    assert RELEASING not in predicates


def test_predicate_consistency_invariants():
    for seed in range(60):
        seq = generate_scene(DIMS, WORLD, seed=seed)
        prev = None
        for frame in seq.frames:
            trips = set(frame.triplets)
            for (i, j, p) in trips:
                if p == HOLDING:
                    assert (i, j, NEAR) in trips, f"seed {seed}: holding without near"
                if p == RELEASING:
                    assert prev is not None and (i, j, HOLDING) in prev, \
                        f"seed {seed}: releasing without prior holding"
            prev = trips


def test_every_predicate_reaches_two_percent_of_frames():
    counts = np.zeros(DIMS.h)
    frames = 0
    for seed in range(1000):
        seq = generate_scene(DIMS, WORLD, seed=seed)
        for frame in seq.frames:
            frames += 1
            present = {p for (_, _, p) in frame.triplets}
            for p in present:
                counts[p] += 1
    rates = counts / frames
    assert np.all(rates >= 0.02), rates


def test_event_labels_cover_all_classes():
    seen = np.zeros(4)
    for seed in range(200):
        seen += generate_scene(DIMS, WORLD, seed=seed).event_labels
    assert np.all(seen > 0)


def test_zero_noise_detector_is_identity():
    seq = generate_scene(DIMS, WorldConfig(noise=NoiseConfig().zeroed()), seed=5)
    for frame in seq.frames:
        assert len(frame.detections) == len(frame.objects)
        for det, obj in zip(frame.detections, frame.objects):
            assert det.box == obj.box
            onehot = np.zeros(DIMS.g)
            onehot[obj.label] = 1.0
            np.testing.assert_array_equal(det.label_dist, onehot)
            np.testing.assert_array_equal(det.visual_feat, obj.visual_feat)


def test_full_miss_prob_drops_everything():
    noise = NoiseConfig(box_jitter_sigma=0.0, label_confusion_prob=0.0,
                        miss_prob=1.0, false_positive_rate=0.0, occlusion_prob=0.0)
    objects = [GroundTruthObject(BoundingBox(0.4, 0.4, 0.1, 0.1), 1, np.zeros(DIMS.c))]
    assert simulate_detector(objects, noise, DIMS, RngStream(1)) == []


def test_jitter_folded_normal_statistics():
    sigma = 0.02
    noise = NoiseConfig(box_jitter_sigma=sigma, label_confusion_prob=0.0,
                        miss_prob=0.0, false_positive_rate=0.0, occlusion_prob=0.0)
    obj = GroundTruthObject(BoundingBox(0.45, 0.45, 0.1, 0.1), 1, np.zeros(DIMS.c))
    stream = RngStream(77)
    total = 0.0
    n = 10_000
    for _ in range(n):
        det = simulate_detector([obj], noise, DIMS, stream)[0]
        (cx, cy), (gx, gy) = det.box.center(), obj.box.center()
        total += abs(cx - gx) + abs(cy - gy)
    expected = 2.0 * sigma * np.sqrt(2.0 / np.pi)
    assert abs(total / n - expected) < 0.1 * expected


def test_occlusion_produces_missing_then_present():
    hit = False
    for seed in range(100):
        seq = generate_scene(DIMS, WORLD, seed=seed)
        for t in range(1, len(seq.frames)):
            prev_occ = {i for i, o in enumerate(seq.frames[t - 1].objects) if o.occluded}
            cur_occ = {i for i, o in enumerate(seq.frames[t].objects) if o.occluded}
            if prev_occ - cur_occ:
                hit = True
    assert hit


def test_label_confusion_moves_mass_to_one_class():
    noise = NoiseConfig(box_jitter_sigma=0.0, label_confusion_prob=0.25,
                        miss_prob=0.0, false_positive_rate=0.0, occlusion_prob=0.0)
    obj = GroundTruthObject(BoundingBox(0.4, 0.4, 0.1, 0.1), 2, np.zeros(DIMS.c))
    det = simulate_detector([obj], noise, DIMS, RngStream(9))[0]
    assert det.label_dist[2] == 0.75
    assert np.isclose(det.label_dist.sum(), 1.0)
    assert np.count_nonzero(det.label_dist) == 2


def test_false_positives_get_uniform_labels():
    noise = NoiseConfig(box_jitter_sigma=0.0, label_confusion_prob=0.0,
                        miss_prob=0.0, false_positive_rate=1.0, occlusion_prob=0.0)
    det = simulate_detector([], noise, DIMS, RngStream(10))
    assert len(det) == 1
    np.testing.assert_allclose(det[0].label_dist, np.full(DIMS.g, 1.0 / DIMS.g))


def test_prototypes_are_stable_unit_rows():
    p1 = class_prototypes(DIMS.g, DIMS.c)
    p2 = class_prototypes(DIMS.g, DIMS.c)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_allclose(np.linalg.norm(p1, axis=1), 1.0)


def test_impossible_config_rejected():
    with pytest.raises(ConfigError):
        generate_scene(DIMS, WorldConfig(frames=0), seed=0)
