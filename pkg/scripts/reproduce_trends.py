#!/usr/bin/env python3
"""End-to-end trend reproduction: benchmark, variant ablation, feature banks.

Writes the dataset and all reports under ./results (override with --out).
Expect roughly 15 minutes on a desktop CPU with default settings.
"""

import argparse
import sys
from pathlib import Path

from stsg.cli import main as stsg_main


def run(args: list[str]) -> None:
    code = stsg_main(args)
    if code != 0:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, default=5, help="training seeds per variant")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--train-sequences", type=int, default=120)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "benchmark"

    print("== generating benchmark ==")
    run(["gen", "--out", str(data), "--seed", str(args.seed), "--jobs", str(args.jobs)])

    print("== variant ablation (this is the long step) ==")
    run(["ablate", "--data", str(data), "--seeds", str(args.seeds),
         "--epochs", str(args.epochs), "--train-sequences", str(args.train_sequences),
         "--out", str(out / "ablation.json")])

    print("== training the bank checkpoint ==")
    run(["train", "--data", str(data), "--out", str(out / "model.json"),
         "--mode", "sgdet", "--variant", "sparse", "--k", "1",
         "--epochs", str(args.epochs), "--batch-size", "4",
         "--sequences", str(args.train_sequences)])

    print("== feature-bank event classification ==")
    run(["bank", "--ckpt", str(out / "model.json"), "--data", str(data),
         "--seeds", str(args.seeds), "--train-sequences", "300",
         "--out", str(out / "bank.json")])

    print("== efficiency accounting ==")
    run(["flops", "--out", str(out / "efficiency.json")])

    print(f"\nall reports under {out}/")


if __name__ == "__main__":
    main()
