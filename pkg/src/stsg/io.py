"""File formats: datasets, checkpoints, predictions and reports.

Everything is JSON (JSON-lines for per-sequence files, with a header record
on the first line). Floats serialize through Python's shortest round-trip
repr, so re-reading an artifact reproduces the exact values; artifacts
carry the resolved config and seed and never embed timestamps, which keeps
equal-seed runs byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config_items
from .errors import DataFormatError
from .metrics import RankedTriplet
from .params import ModelParams
from .scene import BoundingBox, FrameRecord, GroundTruthObject, ObjectNode, SceneSequence
from .temporal import FramePrediction

SPLITS = ("train", "val", "test")


def runconfig_from_flat(flat: dict) -> RunConfig:
    return parse_config_items({k: str(v) for k, v in flat.items()})


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def _loads(path: Path, lineno: int, line: str) -> dict:
    try:
        return json.loads(line)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None


def _field(record: dict, name: str, path: Path, lineno: int):
    if name not in record:
        raise DataFormatError(f"{path}:{lineno}: missing field {name!r}")
    return record[name]


# ---------------------------------------------------------------------------
# datasets


def sequence_to_json(seq: SceneSequence) -> dict:
    return {
        "seed": seq.seed,
        "event_labels": seq.event_labels.tolist(),
        "frames": [
            {
                "objects": [
                    {
                        "box": [o.box.x, o.box.y, o.box.w, o.box.h],
                        "label": o.label,
                        "visual": o.visual_feat.tolist(),
                        "occluded": o.occluded,
                        "det_label_dist": o.detector_label_dist.tolist()
                        if o.detector_label_dist is not None else None,
                    }
                    for o in frame.objects
                ],
                "triplets": [list(t) for t in frame.triplets],
                "detections": [
                    {
                        "box": [d.box.x, d.box.y, d.box.w, d.box.h],
                        "label_dist": d.label_dist.tolist(),
                        "visual": d.visual_feat.tolist(),
                    }
                    for d in frame.detections
                ],
            }
            for frame in seq.frames
        ],
    }


def sequence_from_json(record: dict, path: Path, lineno: int) -> SceneSequence:
    frames = []
    for frame in _field(record, "frames", path, lineno):
        objects = [
            GroundTruthObject(
                box=BoundingBox(*o["box"]),
                label=int(o["label"]),
                visual_feat=np.asarray(o["visual"], dtype=np.float64),
                occluded=bool(o.get("occluded", False)),
                detector_label_dist=None if o.get("det_label_dist") is None
                else np.asarray(o["det_label_dist"], dtype=np.float64),
            )
            for o in _field(frame, "objects", path, lineno)
        ]
        detections = [
            ObjectNode(
                box=BoundingBox(*d["box"]),
                label_dist=np.asarray(d["label_dist"], dtype=np.float64),
                visual_feat=np.asarray(d["visual"], dtype=np.float64),
            )
            for d in _field(frame, "detections", path, lineno)
        ]
        triplets = [tuple(int(x) for x in t) for t in _field(frame, "triplets", path, lineno)]
        frames.append(FrameRecord(objects=objects, triplets=triplets, detections=detections))
    return SceneSequence(
        frames=frames,
        event_labels=np.asarray(_field(record, "event_labels", path, lineno), dtype=np.float64),
        seed=int(_field(record, "seed", path, lineno)),
    )


def write_split(path: Path, cfg: RunConfig, split: str,
                sequences: list[SceneSequence]) -> None:
    header = {"kind": "dataset-header", "split": split, "count": len(sequences),
              "seed": cfg.seed, "config": cfg.to_flat_dict()}
    with open(path, "w") as fh:
        fh.write(_dump(header) + "\n")
        for seq in sequences:
            fh.write(_dump(sequence_to_json(seq)) + "\n")


def load_split(data_dir: str | Path, split: str) -> tuple[dict, list[SceneSequence]]:
    if split not in SPLITS:
        raise DataFormatError(f"unknown split {split!r}, expected one of {SPLITS}")
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise DataFormatError(f"{path}: no such dataset file")
    header: dict | None = None
    sequences: list[SceneSequence] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = _loads(path, lineno, line)
            if lineno == 1:
                if record.get("kind") != "dataset-header":
                    raise DataFormatError(f"{path}:1: missing dataset header record")
                header = record
                continue
            sequences.append(sequence_from_json(record, path, lineno))
    if header is None:
        raise DataFormatError(f"{path}: empty file")
    if header["count"] != len(sequences):
        raise DataFormatError(
            f"{path}: header count {header['count']} != {len(sequences)} sequences"
        )
    return header, sequences


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path: str | Path, cfg: RunConfig, params: ModelParams,
                     log: list[dict]) -> None:
    doc = {
        "kind": "checkpoint",
        "seed": cfg.train.seed,
        "config": cfg.to_flat_dict(),
        "gcn_layers": params.gcn_layers,
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
        "log": log,
    }
    Path(path).write_text(_dump(doc))


def load_checkpoint(path: str | Path) -> tuple[RunConfig, ModelParams, list[dict]]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such checkpoint")
    doc = _loads(path, 1, path.read_text())
    if doc.get("kind") != "checkpoint":
        raise DataFormatError(f"{path}: not a checkpoint file (field 'kind')")
    cfg = runconfig_from_flat(_field(doc, "config", path, 1))
    arrays = {}
    for name, entry in _field(doc, "params", path, 1).items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    params = ModelParams.from_arrays(cfg.dims, arrays, int(doc.get("gcn_layers", 2)))
    return cfg, params, doc.get("log", [])


def write_train_log(path: str | Path, cfg: RunConfig, log: list[dict]) -> None:
    doc = {"kind": "train-log", "seed": cfg.train.seed,
           "config": cfg.to_flat_dict(), "entries": log}
    Path(path).write_text(_dump(doc))


# ---------------------------------------------------------------------------
# predictions


def frame_prediction_to_json(pred: FramePrediction, ranked: list[RankedTriplet],
                             include_features: bool) -> dict:
    record = {
        "boxes": pred.boxes.tolist(),
        "labels": np.argmax(pred.label_dists, axis=1).tolist() if pred.n else [],
        "label_scores": np.max(pred.label_dists, axis=1).tolist() if pred.n else [],
        "triplets": [[t.subj_idx, t.obj_idx, t.predicate, t.score] for t in ranked],
    }
    if include_features:
        record["label_dists"] = pred.label_dists.tolist()
        record["fused"] = pred.fused.tolist()
        record["gcn"] = pred.gcn.tolist()
    return record


def ranked_from_frame_json(frame: dict, path: Path, lineno: int) -> list[RankedTriplet]:
    boxes = _field(frame, "boxes", path, lineno)
    labels = _field(frame, "labels", path, lineno)
    scores = _field(frame, "label_scores", path, lineno)
    out = []
    for entry in _field(frame, "triplets", path, lineno):
        i, j, p, score = int(entry[0]), int(entry[1]), int(entry[2]), float(entry[3])
        if not (0 <= i < len(boxes) and 0 <= j < len(boxes)):
            raise DataFormatError(f"{path}:{lineno}: triplet references node {max(i, j)} "
                                  f"but frame has {len(boxes)} nodes")
        out.append(RankedTriplet(
            subj_idx=i, obj_idx=j, subj_label=int(labels[i]), obj_label=int(labels[j]),
            predicate=p, score=score, subj_box=tuple(boxes[i]), obj_box=tuple(boxes[j]),
        ))
    return out


def write_predictions(path: str | Path, header: dict, records: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(_dump({"kind": "predictions-header", **header}) + "\n")
        for record in records:
            fh.write(_dump(record) + "\n")


def load_predictions(path: str | Path) -> tuple[dict, list[dict]]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such predictions file")
    header: dict | None = None
    records: list[dict] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = _loads(path, lineno, line)
            if lineno == 1:
                if record.get("kind") != "predictions-header":
                    raise DataFormatError(f"{path}:1: missing predictions header record")
                header = record
                continue
            records.append(record)
    if header is None:
        raise DataFormatError(f"{path}: empty file")
    return header, records


# ---------------------------------------------------------------------------
# reports


def write_report(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def format_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[c]) for r in cells) for c in range(len(headers))]
    lines = []
    for ri, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[ci]) for ci, cell in enumerate(row)).rstrip())
        if ri == 0:
            lines.append("  ".join("-" * widths[ci] for ci in range(len(headers))))
    return "\n".join(lines)
