"""Acceptance criteria, one test each.

Run ``pytest tests/test_acceptance.py`` (a summary line per criterion is
printed at the end) or ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import LINES, record  # noqa: E402
from oracles import (bg_value, brute_force_assignment, ce_value, central_difference,  # noqa: E402
                     confusion_loop, dice_value, focal_value, inference_loop, iou_from_loop,
                     kl_uniform_value, rank_value, rel_error)

from maskrank.ablation import ablation_config, run_ablation  # noqa: E402
from maskrank.assignment import Assignment, hungarian  # noqa: E402
from maskrank.config import LossWeights  # noqa: E402
from maskrank.inference import semantic_inference  # noqa: E402
from maskrank.losses import (ImageLabelSets, bg_aware_class_loss, ce_class_loss,  # noqa: E402
                             dice_loss, focal_loss, kl_uniform_loss, ranking_loss_image)
from maskrank.metrics import hiou, iou_per_class, partitioned_miou  # noqa: E402
from maskrank.pseudolabel import pseudo_labels  # noqa: E402
from maskrank.trainer import synth_text_embeddings  # noqa: E402

SEEDS = range(5)
_ablation_cache = {}


def _ablation():
    if "runs" not in _ablation_cache:
        t0 = time.perf_counter()
        _ablation_cache["runs"] = run_ablation(ablation_config(), SEEDS)
        _ablation_cache["seconds"] = time.perf_counter() - t0
    return _ablation_cache["runs"], _ablation_cache["seconds"]


# 1 -------------------------------------------------------------------------

def test_criterion_1_hiou_table_values():
    t0 = time.perf_counter()
    a, b = hiou(38.6, 42.0), hiou(88.5, 74.8)
    ok = abs(round(a, 1) - 40.2) <= 0.05 and abs(round(b, 1) - 81.1) <= 0.05
    record(1, ok, "hIoU reference values", f"{a:.3f} -> 40.2, {b:.3f} -> 81.1",
           time.perf_counter() - t0)
    assert ok


# 2 -------------------------------------------------------------------------

def _gradient_cases(seed):
    rng = np.random.default_rng(seed)
    C, N = 4, 5
    R = rng.uniform(-1, 1, (C, N))
    qs = rng.choice(N, 2, replace=False)
    labels = rng.choice(C, 2, replace=False)
    a = Assignment(tuple((int(q), g) for g, q in enumerate(qs)), 0.0, N)
    t = 0.3
    w = LossWeights(lambda_=0.6, temperature=t)
    p = rng.dirichlet(np.ones(C))
    pos = sorted(int(c) for c in rng.choice(C, 2, replace=False))
    neg = [c for c in range(C) if c not in pos]
    pred = rng.uniform(0.05, 0.95, 12)
    gt = (rng.random(12) > 0.5).astype(float)
    return {
        "ce_class_loss": (ce_class_loss(R, a, t, labels).gradients["R"],
                          lambda x: ce_value(x, a.pairs, labels, t), R),
        "kl_uniform_loss": (kl_uniform_loss(p).gradients["p"],
                            lambda x: kl_uniform_value(list(x)), p),
        "bg_aware_class_loss": (bg_aware_class_loss(R, a, w, labels).gradients["R"],
                                lambda x: bg_value(x, a.pairs, labels, t, 0.6), R),
        "ranking_loss_image": (ranking_loss_image(R, ImageLabelSets(pos, neg)).gradients["R"],
                               lambda x: rank_value(x, pos, neg), R),
        "focal_loss": (focal_loss(pred, gt, 2.0, 0.25).gradients["pred"],
                       lambda x: focal_value(x, gt, 2.0, 0.25), pred),
        "dice_loss": (dice_loss(pred, gt).gradients["pred"], lambda x: dice_value(x, gt), pred),
    }


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for name, (analytic, f, x) in _gradient_cases(seed).items():
            err = rel_error(analytic, central_difference(f, x))
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 10
    record(2, ok, "finite-difference gradient suite, 6 losses x 20 instances",
           f"worst rel err {max(worst.values()):.1e}", elapsed)
    assert ok, worst


# 3 -------------------------------------------------------------------------

def test_criterion_3_hungarian_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(500):
        n = int(rng.integers(1, 8))
        g = int(rng.integers(1, n + 1))
        if i % 2:
            cost = rng.integers(0, 6, (n, g)).astype(float)  # many ties
        else:
            cost = rng.normal(size=(n, g))
        best, pairs = brute_force_assignment(cost)
        got = hungarian(cost)
        # both totals are summed in gt order, so exact equality is meaningful
        if got.total_cost != best:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5
    record(3, ok, "Hungarian vs brute force on 500 matrices", f"{mismatches} mismatches", elapsed)
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_4_inference_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        N, C = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        R = rng.uniform(-1, 1, (C, N))
        M = rng.uniform(0.01, 0.99, (N, 16))
        t = float(rng.uniform(0.05, 1.0))
        if semantic_inference(R, M, t, shape=(4, 4)).ravel().tolist() != inference_loop(R, M, t):
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5
    record(4, ok, "semantic inference vs triple-loop oracle, 100 instances",
           f"{bad} differing maps", elapsed)
    assert ok


# 5 -------------------------------------------------------------------------

def test_criterion_5_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(100):
        C = int(rng.integers(2, 7))
        gt = rng.integers(0, C, (8, 8))
        pred = rng.integers(0, C, (8, 8))
        seen = rng.random(C) < 0.6
        ious, present = iou_from_loop(confusion_loop(pred, gt, C))
        s_vals = [ious[c] for c in range(C) if present[c] and seen[c]]
        u_vals = [ious[c] for c in range(C) if present[c] and not seen[c]]
        ms = sum(s_vals) / len(s_vals) if s_vals else None
        mu = sum(u_vals) / len(u_vals) if u_vals else None
        if ms is None or mu is None:
            h = None
        elif ms <= 0 or mu <= 0:
            h = 0.0
        else:
            h = 2 * ms * mu / (ms + mu)

        ci = iou_per_class(pred, gt, C)
        gms, gmu = partitioned_miou(ci, seen)
        gh = None if gms is None or gmu is None else hiou(gms, gmu)
        if ci.iou.tolist() != ious or ci.present.tolist() != present or (gms, gmu, gh) != (ms, mu, h):
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0
    record(5, ok, "IoU / mIoU / hIoU vs scalar confusion oracle, 100 maps",
           f"{bad} mismatches", elapsed)
    assert ok


# 6, 7 ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_ablation_trend():
    runs, seconds = _ablation()
    base, bg, rank = runs["baseline-bg-embedding"], runs["bg-aware"], runs["bg-aware+rank"]
    order = rank.miou_unseen > bg.miou_unseen > base.miou_unseen
    seen_gap = abs(rank.miou_seen - base.miou_seen)
    ok = order and seen_gap <= 0.10 and seconds < 300
    detail = (f"unseen mIoU rank {rank.miou_unseen:.3f} > bg-aware {bg.miou_unseen:.3f} > "
              f"baseline {base.miou_unseen:.3f}; seen gap {100 * seen_gap:.1f} pts")
    record(6, ok, "ablation trend over 5 seeds", detail, seconds)
    assert ok, detail


@pytest.mark.slow
def test_criterion_7_unseen_label_availability():
    runs, _ = _ablation()
    gt = runs["bg-aware+rank"].miou_unseen
    pseudo = runs["bg-aware+rank+pseudo"].miou_unseen
    none = runs["bg-aware+rank(no-unseen)"].miou_unseen
    ok = gt >= pseudo >= none and gt - none >= 0.05
    detail = f"gt {gt:.3f} >= pseudo {pseudo:.3f} >= none {none:.3f}"
    record(7, ok, "unseen-label availability trend", detail, 0.0)
    assert ok, detail


# 8 -------------------------------------------------------------------------

def test_criterion_8_pseudo_label_sanity():
    t0 = time.perf_counter()
    cfg = ablation_config()
    T = synth_text_embeddings(cfg, np.random.default_rng(0))
    S = cfg.num_seen
    T_hat = T[S:]
    ids = np.arange(S, cfg.num_classes)
    ok = True
    for j in range(T_hat.shape[0]):
        res = pseudo_labels(T_hat[j:j + 1], T_hat, 0.99, 100.0, unseen_ids=ids)
        ok &= res.labels == {int(ids[j])}
    # unit vector with the same cosine to every unseen embedding
    v, *_ = np.linalg.lstsq(T_hat, np.ones(T_hat.shape[0]), rcond=None)
    v /= np.linalg.norm(v)
    equal = pseudo_labels(v[None, :], T_hat, 0.99, 100.0)
    cos = T_hat @ v
    ok &= equal.labels == frozenset() and np.ptp(cos) < 1e-12
    record(8, bool(ok), "pseudo labels: clean unseen match labelled, uniform cosine empty",
           f"uniform scores {np.round(equal.scores, 4).tolist()}", time.perf_counter() - t0)
    assert ok


# 9 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_determinism():
    runs, _ = _ablation()
    t0 = time.perf_counter()
    again = run_ablation(ablation_config(), SEEDS)
    same = all(h.csv_text() == h2.csv_text()
               for n in runs for h, h2 in zip(runs[n].histories, again[n].histories))
    count = sum(len(r.histories) for r in runs.values())
    record(9, same, "repeated ablation runs give bit-identical history CSVs",
           f"{count} CSVs compared", time.perf_counter() - t0)
    assert same


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for fn in tests:
        try:
            fn()
        except AssertionError:
            failed += 1
    print("\n".join(LINES[n] for n in sorted(LINES)))
    sys.exit(1 if failed else 0)
