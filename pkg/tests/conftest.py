import numpy as np
import pytest

from stsg.config import Dims
from stsg.params import ModelParams
from stsg.rng import RngStream
from stsg.scene import BoundingBox, FrameRecord, GroundTruthObject, ObjectNode, SceneSequence


def random_box(rng: RngStream) -> BoundingBox:
    w = rng.uniform(0.05, 0.3)
    h = rng.uniform(0.05, 0.3)
    return BoundingBox(rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h), w, h)


def random_dist(rng: RngStream, g: int) -> np.ndarray:
    raw = rng.uniform_array(g, 0.05, 1.0)
    return raw / raw.sum()


def random_object_node(rng: RngStream, dims: Dims) -> ObjectNode:
    return ObjectNode(random_box(rng), random_dist(rng, dims.g),
                      rng.normal_array(dims.c, 0.0, 1.0))


def random_gt_object(rng: RngStream, dims: Dims) -> GroundTruthObject:
    label = rng.integer(dims.g)
    noisy = np.full(dims.g, 0.1 / dims.g)
    noisy[label] += 0.9
    noisy = noisy / noisy.sum()
    return GroundTruthObject(
        box=random_box(rng),
        label=label,
        visual_feat=rng.normal_array(dims.c, 0.0, 1.0),
        detector_label_dist=noisy,
    )


def random_sequence(rng: RngStream, dims: Dims, n_frames: int = 3,
                    n_min: int = 2, n_max: int = 4) -> SceneSequence:
    frames = []
    for _ in range(n_frames):
        n = n_min + rng.integer(n_max - n_min + 1)
        objects = [random_gt_object(rng, dims) for _ in range(n)]
        triplets = []
        if n >= 2:
            for _ in range(rng.integer(3) + 1):
                i = rng.integer(n)
                j = rng.integer(n)
                if i != j:
                    triplets.append((i, j, rng.integer(dims.h)))
        detections = [
            ObjectNode(o.box, o.detector_label_dist, o.visual_feat) for o in objects
        ]
        frames.append(FrameRecord(objects=objects, triplets=sorted(set(triplets)),
                                  detections=detections))
    return SceneSequence(frames=frames, event_labels=np.zeros(4), seed=rng.seed)


@pytest.fixture
def dims() -> Dims:
    return Dims()


@pytest.fixture
def small_dims() -> Dims:
    return Dims(g=3, c=4, h=3, d=5)


@pytest.fixture
def params(dims) -> ModelParams:
    return ModelParams.init(dims, seed=11)


def zero_params(dims: Dims, gcn_layers: int = 2) -> ModelParams:
    base = ModelParams.init(dims, seed=0, gcn_layers=gcn_layers)
    from stsg.autodiff import Tensor

    return ModelParams(dims, {k: Tensor(np.zeros_like(v.data)) for k, v in base.items()},
                       gcn_layers)
