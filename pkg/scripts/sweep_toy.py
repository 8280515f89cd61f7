#!/usr/bin/env python3
"""Grid sweep over toy knobs, reporting which ablation orderings hold.

Each grid point runs all variants on the same seeds.  Keys prefixed with
``weights.`` go to LossWeights, the rest to TrainConfig:

    python3 scripts/sweep_toy.py --grid '{"head_noise": [0.3, 0.5], "weights.temperature": [0.1, 0.2]}'
"""

import argparse
import itertools
import json
from dataclasses import replace

from maskrank.ablation import ablation_config, run_ablation


def checks(runs):
    base, bg, rank = runs["baseline-bg-embedding"], runs["bg-aware"], runs["bg-aware+rank"]
    pseudo, none = runs["bg-aware+rank+pseudo"], runs["bg-aware+rank(no-unseen)"]
    return {
        "rank>bg>base": rank.miou_unseen > bg.miou_unseen > base.miou_unseen,
        "seen_gap<=10": abs(rank.miou_seen - base.miou_seen) <= 0.10,
        "gt>=pseudo>=none": rank.miou_unseen >= pseudo.miou_unseen >= none.miou_unseen,
        "gt-none>=5": rank.miou_unseen - none.miou_unseen >= 0.05,
        "base_bias>bg": base.unseen_to_seen > bg.unseen_to_seen,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", required=True, help="JSON object: knob -> list of values")
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    grid = json.loads(args.grid)
    for values in itertools.product(*grid.values()):
        point = dict(zip(grid, values))
        w = {k.split(".", 1)[1]: v for k, v in point.items() if k.startswith("weights.")}
        t = {k: v for k, v in point.items() if not k.startswith("weights.")}
        cfg = ablation_config(**t)
        cfg = replace(cfg, weights=replace(cfg.weights, **w))
        runs = run_ablation(cfg, range(args.seeds))
        row = {n: (round(r.miou_seen, 3), round(r.miou_unseen, 3)) for n, r in runs.items()}
        print(json.dumps({"point": point, "checks": checks(runs), "seen_unseen": row}), flush=True)


if __name__ == "__main__":
    main()
