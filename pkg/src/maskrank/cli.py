"""Command-line entry point: ``maskrank <subcommand> ...``.

JSON results go to stdout, diagnostics to stderr.  Exit status is 0 on
success, 1 when an input fails validation and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import losses
from .assignment import Assignment, hungarian
from .config import MODES, LossWeights, MaskLossConfig, RunConfig, TrainConfig, from_dict
from .errors import FormatError, MaskRankError, ParameterError
from .inference import semantic_inference, similarity_matrix
from .labelset import LabelSet, load_label_set
from .metrics import IGNORE_INDEX, confusion_matrix, report_from_confusion
from .pseudolabel import ProposalEmbeddings, pseudo_labels
from .tensorio import load_tensor, save_tensor
from .trainer import synth_scenario, train_toy

TENSOR_SUFFIXES = (".mten", ".bin", ".json")


def worker_count(tasks: int) -> int:
    raw = os.environ.get("MASKRANK_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            cap = 0
        if cap < 1:
            raise ParameterError(f"MASKRANK_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(cap, tasks))


def ordered_map(fn, items):
    """``map`` over a thread pool; results come back in input order."""
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def _find_tensor(directory: Path, stem: str, required: bool = True):
    for suf in TENSOR_SUFFIXES:
        p = directory / f"{stem}{suf}"
        if p.exists():
            return load_tensor(p)
    if required:
        raise ParameterError(f"{directory}: missing tensor '{stem}' ({'/'.join(TENSOR_SUFFIXES)})")
    return None


def _tensor_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise ParameterError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix in TENSOR_SUFFIXES)


def _load_weights(path) -> tuple[LossWeights, MaskLossConfig]:
    if path is None:
        return LossWeights(), MaskLossConfig()
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected a JSON object")
    mask = from_dict(MaskLossConfig, obj.pop("mask", {}))
    return from_dict(LossWeights, obj), mask


def _load_assignment(directory: Path, num_props: int) -> Assignment:
    obj = _read_json(directory / "assignment.json")
    pairs = obj["pairs"] if isinstance(obj, dict) else obj
    pairs = tuple(sorted(((int(q), int(g)) for q, g in pairs), key=lambda p: p[1]))
    return Assignment(pairs, float("nan"), num_props)


# ---- subcommands ----------------------------------------------------------

def cmd_match(args) -> dict:
    return hungarian(load_tensor(args.cost)).to_json()


def cmd_loss(args) -> dict:
    weights, mask = _load_weights(args.weights)
    d = Path(args.inputs)
    kind = args.kind
    if kind == "total":
        parts = _read_json(d / "components.json")
        unknown = set(parts) - {"class", "mask", "rank"}
        if unknown:
            raise FormatError(f"components.json: unknown keys {sorted(unknown)}")
        reps = [losses.LossReport(float(parts[k])) if k in parts else None
                for k in ("class", "mask", "rank")]
        return losses.total_loss(*reps, weights).to_json()
    if kind in ("focal", "dice"):
        pred, gt = _find_tensor(d, "pred"), _find_tensor(d, "gt")
        if kind == "focal":
            return losses.focal_loss(pred, gt, mask.focal_gamma, mask.focal_alpha).to_json()
        return losses.dice_loss(pred, gt, mask.dice_eps).to_json()
    R = _find_tensor(d, "R")
    if kind == "rank":
        obj = _read_json(d / "image_labels.json")
        labels = (losses.ImageLabelSets(obj["positives"], obj["negatives"])
                  if "negatives" in obj else
                  losses.ImageLabelSets.from_positives(obj["positives"], R.shape[0]))
        return losses.ranking_loss_image(R, labels).to_json()
    a = _load_assignment(d, R.shape[1])
    gt_path = d / "gt_labels.json"
    gt_labels = _read_json(gt_path) if gt_path.exists() else None
    if kind == "ce":
        return losses.ce_class_loss(R, a, weights.temperature, gt_labels).to_json()
    return losses.bg_aware_class_loss(R, a, weights, gt_labels).to_json()


def cmd_infer(args) -> dict:
    Ec, T = load_tensor(args.embeddings), load_tensor(args.text)
    M = load_tensor(args.proposals)
    R = similarity_matrix(Ec, T)
    shape = tuple(args.shape) if args.shape else None
    label_map = semantic_inference(R, M, args.temperature, shape=shape)
    names = (_read_json(args.class_names) if args.class_names
             else [f"class_{c}" for c in range(T.shape[0])])
    if len(names) != T.shape[0]:
        raise ParameterError(f"{len(names)} class names for {T.shape[0]} text embeddings")
    out = Path(args.out)
    save_tensor(label_map.astype(np.float64), out)
    sidecar = out.with_name(out.name + ".classes.json")
    sidecar.write_text(_dump({"classes": list(names)}) + "\n")
    return {"out": str(out), "classes": str(sidecar), "shape": list(label_map.shape),
            "label_map": label_map.tolist()}


def cmd_pseudo_label(args) -> dict:
    T_hat = load_tensor(args.text)
    files = _tensor_files(Path(args.embeddings))
    if not files:
        raise ParameterError(f"{args.embeddings}: no embedding tensors found")
    unseen_ids = _read_json(args.unseen_ids) if args.unseen_ids else None

    def one(path: Path) -> dict:
        emb = ProposalEmbeddings(load_tensor(path))
        res = pseudo_labels(emb, T_hat, args.threshold, args.logit_scale, unseen_ids)
        return {"image_id": path.stem, "scores": res.scores.tolist(), "labels": sorted(res.labels)}

    results = ordered_map(one, files)
    with open(args.out, "w") as fh:
        for r in results:
            fh.write(_dump(r) + "\n")
    return {"images": len(results), "out": str(args.out),
            "labelled": sum(1 for r in results if r["labels"])}


def cmd_eval(args) -> dict:
    preds = {p.name: p for p in _tensor_files(Path(args.pred))}
    gts = {p.name: p for p in _tensor_files(Path(args.gt))}
    if set(preds) != set(gts):
        raise ParameterError(
            f"pred/gt file sets differ: only in pred {sorted(set(preds) - set(gts))}, "
            f"only in gt {sorted(set(gts) - set(preds))}")
    if not preds:
        raise ParameterError("no label maps to evaluate")
    ls: LabelSet = load_label_set(args.seen, args.num_classes)
    C = ls.num_classes

    def one(name):
        pred, gt = load_tensor(preds[name]), load_tensor(gts[name])
        for arr, which in ((pred, "pred"), (gt, "gt")):
            if not np.all(arr == np.round(arr)):
                raise ParameterError(f"{which}/{name}: label maps must be integer-valued")
        bad = (pred < 0) | (pred >= C)
        if np.any(bad):
            raise ParameterError(f"pred/{name}: class index out of range [0, {C})")
        bad = ((gt < 0) | (gt >= C)) & (gt != args.ignore_index)
        if np.any(bad):
            raise ParameterError(f"gt/{name}: class index out of range [0, {C})")
        return confusion_matrix(pred, gt, C, args.ignore_index)

    cm = sum(ordered_map(one, sorted(preds)), np.zeros((C, C), dtype=np.int64))
    report = report_from_confusion(cm, ls.seen_mask)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("class", "name", "split", "present", "iou"))
            for c in range(C):
                w.writerow((c, ls.class_names[c], "seen" if ls.seen_mask[c] else "unseen",
                            int(report.present[c]), repr(float(report.per_class_iou[c]))))
    return report.to_json()


def _load_train_config(path) -> TrainConfig:
    obj = _read_json(path)
    if isinstance(obj, dict) and "train" in obj:
        return from_dict(RunConfig, obj).train
    return from_dict(TrainConfig, obj)


def _mode_path(path: Path, mode: str) -> Path:
    return path.with_name(f"{path.stem}.{mode}{path.suffix}")


def cmd_train_toy(args) -> dict:
    cfg = _load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    modes = [cfg.mode] if not args.modes else list(dict.fromkeys(args.modes.split(",")))
    for m in modes:
        if m not in MODES:
            raise ParameterError(f"unknown mode {m!r}; expected one of {MODES}")
    scenario = synth_scenario(cfg)
    histories = ordered_map(lambda m: train_toy(replace(cfg, mode=m), scenario), modes)
    out = Path(args.out)
    report = {}
    for m, h in zip(modes, histories):
        h.write_csv(out if len(modes) == 1 else _mode_path(out, m))
        entry = h.report.to_json()
        entry["unseen_to_seen"] = h.unseen_to_seen
        entry["final_total"] = h.rows[-1][1] if h.rows else None
        report[m] = entry
    if args.report:
        Path(args.report).write_text(_dump(report) + "\n")
    return report


# ---- dispatch -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskrank", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("match", help="Hungarian matching of a proposals x gt cost tensor")
    s.add_argument("--cost", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("loss", help="evaluate one loss on fixture files")
    s.add_argument("--kind", required=True, choices=("ce", "bg", "rank", "focal", "dice", "total"))
    s.add_argument("--inputs", required=True, help="directory of fixture files")
    s.add_argument("--weights", help="JSON loss weights (optional 'mask' section)")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("infer", help="label map from embeddings and proposal masks")
    s.add_argument("--embeddings", required=True, help="N x d class embeddings")
    s.add_argument("--text", required=True, help="C x d text embeddings")
    s.add_argument("--proposals", required=True, help="N x H x W (or N x HW with --shape)")
    s.add_argument("--out", required=True)
    s.add_argument("--temperature", type=float, default=LossWeights().temperature)
    s.add_argument("--shape", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--class-names", help="JSON list of C names for the sidecar")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("pseudo-label", help="image-level unseen labels per embedding file")
    s.add_argument("--embeddings", required=True, help="directory, one N x d tensor per image")
    s.add_argument("--text", required=True, help="U x d unseen text embeddings")
    s.add_argument("--threshold", type=float, default=0.99)
    s.add_argument("--logit-scale", type=float, default=100.0)
    s.add_argument("--unseen-ids", help="JSON list mapping column j to a class id")
    s.add_argument("--out", required=True, help="output .jsonl")
    s.set_defaults(func=cmd_pseudo_label)

    s = sub.add_parser("eval", help="IoU report over directories of label maps")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--seen", required=True, help="label-set JSON or list of seen indices")
    s.add_argument("--num-classes", type=int)
    s.add_argument("--ignore-index", type=int, default=IGNORE_INDEX)
    s.add_argument("--csv", help="also write per-class IoU here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train-toy", help="train the synthetic toy model")
    s.add_argument("--config", help="TrainConfig or RunConfig JSON")
    s.add_argument("--out", required=True, help="per-step history CSV")
    s.add_argument("--report", help="final IoU report JSON")
    s.add_argument("--modes", help="comma-separated modes sharing one scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        result = args.func(args)
    except (MaskRankError, OSError, KeyError, TypeError) as exc:
        msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
        print(f"maskrank {args.command}: error: {msg}", file=sys.stderr)
        return 1
    sys.stdout.write(_dump(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
