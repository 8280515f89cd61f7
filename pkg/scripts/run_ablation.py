#!/usr/bin/env python3
"""Train every toy variant over several seeds and print the mode comparison.

    python3 scripts/run_ablation.py --seeds 5 --json ablation.json
"""

import argparse
import json
import time

from maskrank.ablation import VARIANTS, ablation_config, run_ablation
from maskrank.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--config", help="TrainConfig JSON (default: shrunk toy config)")
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--json", help="write per-variant summaries here")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ablation_config()
    names = args.variants.split(",")
    t0 = time.perf_counter()
    runs = run_ablation(cfg, range(args.seeds), names)
    print(f"{'variant':28s} {'mIoU(S)':>8s} {'mIoU(U)':>8s} {'hIoU':>8s} {'U->S':>8s}")
    for name, res in runs.items():
        s, u = res.miou_seen, res.miou_unseen
        h = 2 * s * u / (s + u) if s > 0 and u > 0 else 0.0
        print(f"{name:28s} {100 * s:8.1f} {100 * u:8.1f} {100 * h:8.1f} {100 * res.unseen_to_seen:8.1f}")
    print(f"({args.seeds} seeds, {time.perf_counter() - t0:.0f}s)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({n: r.summary() for n, r in runs.items()}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
