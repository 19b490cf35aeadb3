#!/usr/bin/env python3
"""Print summary statistics of a generated benchmark split."""

import argparse
from collections import Counter

import numpy as np

from stsg.config import EVENT_NAMES, PREDICATE_NAMES
from stsg.io import load_split


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("data", help="dataset directory")
    ap.add_argument("--split", default="train", choices=("train", "val", "test"))
    args = ap.parse_args()

    header, seqs = load_split(args.data, args.split)
    pred_counts = Counter()
    events = np.zeros(len(EVENT_NAMES))
    n_frames = 0
    n_objects = []
    n_detections = []
    for seq in seqs:
        events += seq.event_labels
        for frame in seq.frames:
            n_frames += 1
            n_objects.append(len(frame.objects))
            n_detections.append(len(frame.detections))
            for (_, _, p) in frame.triplets:
                pred_counts[p] += 1

    total = sum(pred_counts.values())
    print(f"{args.split}: {len(seqs)} sequences, {n_frames} frames, "
          f"{total} gt triplets")
    print(f"objects/frame mean {np.mean(n_objects):.2f}, "
          f"detections/frame mean {np.mean(n_detections):.2f}")
    print("\npredicate distribution:")
    for p, name in enumerate(PREDICATE_NAMES):
        print(f"  {name:12s} {pred_counts[p]:7d}  {pred_counts[p] / total:.3f}")
    print("\nevent distribution:")
    for a, name in enumerate(EVENT_NAMES):
        print(f"  {name:10s} {int(events[a]):5d}")


if __name__ == "__main__":
    main()
