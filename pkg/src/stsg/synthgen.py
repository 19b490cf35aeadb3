"""Deterministic synthetic benchmark of scripted agent-object scenes.

Each sequence scripts one event (pick_up, put_down, carry or swap) for a
single agent among drifting distractor objects. Ground-truth predicates are
derived purely from geometry and motion, which makes two of them
(approaching, releasing) undecidable from any single frame: that is the
regime where cross-frame context must carry the signal. A detector
simulator adds box jitter, label confusion, misses, occlusion dropouts and
false positives so all three evaluation protocols are meaningful.
"""

from __future__ import annotations

import numpy as np

from .config import EVENT_NAMES, Dims, NoiseConfig, WorldConfig
from .errors import ConfigError
from .rng import RngStream
from .scene import (
    BoundingBox,
    FrameRecord,
    GroundTruthObject,
    ObjectNode,
    SceneSequence,
    overlap_fraction,
)

NEAR_DIST = 0.22
HOLD_COVER = 0.5
COMOVE_TOL = 1e-6
APPROACH_DECREASE = 0.01
MOVE_TOL = 1e-9
ABOVE_MIN_DY = 0.01
ABOVE_MAX_DY = 0.35
DRIFT_SIGMA = 0.025

NEAR, HOLDING, ABOVE, BENEATH, APPROACHING, RELEASING = range(6)

_PROTO_SEED = 90210
_VISUAL_NOISE_SIGMA = 0.1


def class_prototypes(g: int, c: int) -> np.ndarray:
    """Fixed per-class visual anchors, unit rows, identical across runs."""
    raw = RngStream(_PROTO_SEED).normal_array((g, c))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _clamp_corner(v: float, size: float) -> float:
    return float(min(max(v, 0.01), max(0.01, 0.99 - size)))


def _box(corner: np.ndarray, size: np.ndarray) -> BoundingBox:
    return BoundingBox(_clamp_corner(corner[0], size[0]),
                       _clamp_corner(corner[1], size[1]),
                       float(size[0]), float(size[1]))


def _centers(corners: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    return corners + sizes / 2.0


def _holding_pairs(boxes: list[BoundingBox], vels: np.ndarray) -> set[tuple[int, int]]:
    held = set()
    n = len(boxes)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if overlap_fraction(boxes[j], boxes[i]) >= HOLD_COVER and \
                    float(np.max(np.abs(vels[i] - vels[j]))) <= COMOVE_TOL:
                held.add((i, j))
    return held


def _frame_triplets(boxes: list[BoundingBox], centers: np.ndarray,
                    prev_centers: np.ndarray | None, vels: np.ndarray,
                    held: set[tuple[int, int]],
                    prev_held: set[tuple[int, int]]) -> list[tuple[int, int, int]]:
    n = len(boxes)
    triplets: list[tuple[int, int, int]] = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            bi, bj = boxes[i], boxes[j]
            dist = float(np.hypot(*(centers[i] - centers[j])))
            touching = overlap_fraction(bi, bj) > 0 or overlap_fraction(bj, bi) > 0
            if touching or dist < NEAR_DIST:
                triplets.append((i, j, NEAR))
            if (i, j) in held:
                triplets.append((i, j, HOLDING))
            dx_overlap = min(bi.x + bi.w, bj.x + bj.w) - max(bi.x, bj.x)
            dy = centers[j][1] - centers[i][1]
            if dx_overlap > 0 and ABOVE_MIN_DY < dy < ABOVE_MAX_DY:
                triplets.append((i, j, ABOVE))
                triplets.append((j, i, BENEATH))
            if prev_centers is not None and float(np.max(np.abs(vels[i]))) > MOVE_TOL:
                prev_dist = float(np.hypot(*(prev_centers[i] - prev_centers[j])))
                if dist < prev_dist - APPROACH_DECREASE:
                    triplets.append((i, j, APPROACHING))
            if (i, j) in prev_held and (i, j) not in held:
                triplets.append((i, j, RELEASING))
    return triplets


def _noisy_label_dist(label: int, g: int, confusion: float, stream: RngStream) -> np.ndarray:
    dist = np.zeros(g)
    dist[label] = 1.0
    if confusion > 0.0:
        wrong = stream.integer(g - 1)
        if wrong >= label:
            wrong += 1
        dist[label] -= confusion
        dist[wrong] += confusion
    return dist


def simulate_detector(objects: list[GroundTruthObject], noise: NoiseConfig,
                      dims: Dims, stream: RngStream) -> list[ObjectNode]:
    """Noisy detections: occluded objects are always dropped, others are
    dropped with miss_prob; survivors get jittered boxes and confused labels;
    false positives carry uniform label distributions."""
    protos = class_prototypes(dims.g, dims.c)
    detections: list[ObjectNode] = []
    for obj in objects:
        if obj.occluded:
            continue
        if noise.miss_prob > 0 and stream.uniform() < noise.miss_prob:
            continue
        if noise.box_jitter_sigma > 0:
            # jitter hits the center and the size; corner is rebuilt after
            dcx, dcy, dw, dh = stream.normal_array(4, 0.0, noise.box_jitter_sigma)
            w = float(np.clip(obj.box.w + dw, 1e-3, 1.0))
            h = float(np.clip(obj.box.h + dh, 1e-3, 1.0))
            cx = obj.box.x + obj.box.w / 2.0 + dcx
            cy = obj.box.y + obj.box.h / 2.0 + dcy
            box = BoundingBox(float(np.clip(cx - w / 2.0, 0.0, 1.0)),
                              float(np.clip(cy - h / 2.0, 0.0, 1.0)), w, h)
        else:
            box = obj.box
        dist = _noisy_label_dist(obj.label, dims.g, noise.label_confusion_prob, stream)
        detections.append(ObjectNode(box, dist, obj.visual_feat))
    n_fp = int(noise.false_positive_rate)
    frac = noise.false_positive_rate - n_fp
    if frac > 0 and stream.uniform() < frac:
        n_fp += 1
    for _ in range(n_fp):
        w = stream.uniform(0.05, 0.2)
        h = stream.uniform(0.05, 0.2)
        box = BoundingBox(stream.uniform(0.0, 1.0 - w), stream.uniform(0.0, 1.0 - h), w, h)
        cls = stream.integer(dims.g)
        visual = protos[cls] + stream.normal_array(dims.c, 0.0, _VISUAL_NOISE_SIGMA)
        detections.append(ObjectNode(box, np.full(dims.g, 1.0 / dims.g), visual))
    return detections


def _plan_event(n: int, rng: RngStream) -> tuple[int, int, int]:
    """(event id, target, secondary target); swap needs two objects."""
    event = rng.integer(len(EVENT_NAMES)) if n >= 3 else rng.integer(len(EVENT_NAMES) - 1)
    target = 1 + rng.integer(n - 1)
    other = target
    if n >= 3:
        while other == target:
            other = 1 + rng.integer(n - 1)
    return event, target, other


def generate_scene(dims: Dims, world: WorldConfig, seed: int) -> SceneSequence:
    """Simulate one scripted sequence; a pure function of (config, seed)."""
    world.validate(dims)
    if world.frames < 1:
        raise ConfigError("world.frames: cannot simulate an empty sequence")
    rng = RngStream(seed)
    layout = rng.split(0)
    motion = rng.split(1)
    feat = rng.split(2)
    occl = rng.split(3)

    f = world.frames
    n = world.n_objects_min + layout.integer(world.n_objects_max - world.n_objects_min + 1)
    classes = np.zeros(n, dtype=int)
    for i in range(1, n):
        classes[i] = 1 + layout.integer(dims.g - 1)
    sizes = np.zeros((n, 2))
    sizes[0] = [layout.uniform(0.14, 0.18), layout.uniform(0.14, 0.18)]
    for i in range(1, n):
        sizes[i] = [layout.uniform(0.08, 0.14), layout.uniform(0.08, 0.14)]

    corners = np.zeros((n, 2))
    corners[0] = [layout.uniform(0.02, 0.8), layout.uniform(0.02, 0.8)]
    for i in range(1, n):
        for _attempt in range(10):
            corners[i] = [layout.uniform(0.02, 0.98 - sizes[i][0]),
                          layout.uniform(0.02, 0.98 - sizes[i][1])]
            inner = _box(corners[i], sizes[i])
            if overlap_fraction(inner, _box(corners[0], sizes[0])) < 0.2:
                break

    event, target, other = _plan_event(n, motion)
    # distractor drift directions are invisible in any single frame, which
    # is what keeps drift-driven approaching labels temporal-only
    drift = np.zeros((n, 2))
    for i in range(1, n):
        drift[i] = motion.normal_array(2, 0.0, DRIFT_SIGMA)
    agent_drift = motion.normal_array(2, 0.0, 0.01)
    speed = motion.uniform(0.07, 0.15)
    drop_above = n >= 3 and motion.uniform() < 0.5
    drop_point = np.array([motion.uniform(0.1, 0.8), motion.uniform(0.1, 0.8)])

    def attach_corner(i: int) -> np.ndarray:
        # centered grasp: the object sits fully inside the agent box
        return corners[0] + (sizes[0] - sizes[i]) / 2.0

    grasp_t = max(1, f // 2 - 1)
    release_t = max(1, f // 2)
    swap_release_t = max(1, f // 3)
    swap_grasp_t = max(swap_release_t + 1, (2 * f) // 3)

    holding: int | None = None
    if event in (1, 2, 3):  # put_down, carry, swap start already holding
        holding = target
        corners[target] = attach_corner(target)

    occluded = np.zeros((f, n), dtype=bool)
    for i in range(1, n):
        if world.noise.occlusion_prob > 0 and occl.uniform() < world.noise.occlusion_prob:
            start = occl.integer(f)
            length = 1 + (1 if occl.uniform() < 0.3 else 0)
            occluded[start:start + length, i] = True

    def step_toward(src: np.ndarray, dst: np.ndarray, remaining: int) -> np.ndarray:
        if remaining <= 0:
            return dst.copy()
        return src + (dst - src) / remaining

    frame_corners = np.zeros((f, n, 2))
    for t in range(f):
        if t > 0:
            corners = corners.copy()
            # agent motion by phase
            if event == 0:  # pick_up: approach, then grasp and drift
                if t <= grasp_t:
                    goal = corners[target] + (sizes[target] - sizes[0]) / 2.0
                    corners[0] = step_toward(corners[0], goal, grasp_t - t + 1)
                    if t == grasp_t:
                        holding = target
                else:
                    corners[0] = corners[0] + agent_drift
            elif event == 1:  # put_down: carry to drop point, release, move away
                if t < release_t:
                    goal = drop_point if not drop_above else np.array([
                        corners[other][0] + (sizes[other][0] - sizes[target][0]) / 2.0,
                        corners[other][1] - sizes[target][1] - 0.02,
                    ]) - (sizes[0] - sizes[target]) / 2.0
                    corners[0] = step_toward(corners[0], goal, release_t - t)
                elif t == release_t:
                    holding = None
                    corners[0] = corners[0] + np.array([speed, 0.0])
                else:
                    corners[0] = corners[0] + np.array([speed * 0.6, 0.0])
            elif event == 2:  # carry: keep holding, tour waypoints
                corners[0] = corners[0] + np.array([speed * 0.7, speed * 0.35]) * (1 if (t // 3) % 2 == 0 else -1)
            elif event == 3:  # swap: release first object, fetch the second
                if t < swap_release_t:
                    corners[0] = corners[0] + agent_drift
                elif t == swap_release_t:
                    holding = None
                    corners[0] = corners[0] + np.array([speed, 0.0])
                elif t <= swap_grasp_t:
                    goal = corners[other] + (sizes[other] - sizes[0]) / 2.0
                    corners[0] = step_toward(corners[0], goal, swap_grasp_t - t + 1)
                    if t == swap_grasp_t:
                        holding = other
                else:
                    corners[0] = corners[0] + agent_drift
            corners[0] = np.clip(corners[0], 0.01, 0.99 - sizes[0])
            # free objects drift; the held object rides the agent
            for i in range(1, n):
                if i == holding:
                    corners[i] = attach_corner(i)
                elif event == 0 and i == target and t <= grasp_t:
                    pass  # pick-up target waits in place
                else:
                    corners[i] = np.clip(corners[i] + drift[i], 0.01, 0.99 - sizes[i])
        frame_corners[t] = corners

    # derive ground truth per frame
    protos = class_prototypes(dims.g, dims.c)
    frames: list[FrameRecord] = []
    prev_centers = None
    prev_held: set[tuple[int, int]] = set()
    for t in range(f):
        boxes = [_box(frame_corners[t, i], sizes[i]) for i in range(n)]
        centers = np.array([b.center() for b in boxes])
        vels = np.zeros((n, 2)) if prev_centers is None else centers - prev_centers
        held = _holding_pairs(boxes, vels)
        triplets = _frame_triplets(boxes, centers, prev_centers, vels, held, prev_held)
        objects = []
        for i in range(n):
            visual = protos[classes[i]] + feat.normal_array(dims.c, 0.0, _VISUAL_NOISE_SIGMA)
            det_dist = _noisy_label_dist(int(classes[i]), dims.g,
                                         world.noise.label_confusion_prob, feat)
            objects.append(GroundTruthObject(
                box=boxes[i], label=int(classes[i]), visual_feat=visual,
                occluded=bool(occluded[t, i]), detector_label_dist=det_dist,
            ))
        det_stream = rng.split(100 + t)
        detections = simulate_detector(objects, world.noise, dims, det_stream)
        record = FrameRecord(objects=objects, triplets=sorted(set(triplets)),
                             detections=detections)
        record.validate(dims.h)
        frames.append(record)
        prev_centers = centers
        prev_held = held

    labels = np.zeros(len(EVENT_NAMES))
    labels[event] = 1.0
    return SceneSequence(frames=frames, event_labels=labels, seed=seed)


def generate_split(dims: Dims, world: WorldConfig, base_seed: int,
                   start: int, count: int) -> list[SceneSequence]:
    """Sequences for a seed range; sequence i is generated from base_seed*10^6 + i."""
    return [generate_scene(dims, world, base_seed * 1_000_000 + i)
            for i in range(start, start + count)]
