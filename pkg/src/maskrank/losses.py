"""Training losses with analytic gradients.

Every loss returns a :class:`LossReport` whose ``gradients`` map input names
("R", "p", "pred", "proposals", ...) to arrays shaped like those inputs.
Similarity matrices are laid out classes x proposals (C x N); column q holds
the logits of proposal q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .config import LossWeights
from .errors import ParameterError, ShapeError
from .tensor import as_tensor, log_softmax_temp, sigmoid_map, softplus

if TYPE_CHECKING:
    from .assignment import Assignment

PROB_CLAMP = 1e-7


@dataclass
class LossReport:
    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    absent: bool = False  # set when the loss had nothing to act on

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "absent": self.absent,
            "gradients": {
                k: {"shape": list(g.shape), "data": g.ravel().tolist()}
                for k, g in self.gradients.items()
            },
        }


@dataclass(frozen=True)
class ImageLabelSets:
    positives: frozenset[int]
    negatives: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(int(c) for c in self.positives))
        object.__setattr__(self, "negatives", frozenset(int(c) for c in self.negatives))
        if self.positives & self.negatives:
            raise ParameterError(
                f"classes {sorted(self.positives & self.negatives)} are both positive and negative"
            )

    @classmethod
    def from_positives(cls, positives: Iterable[int], num_classes: int) -> "ImageLabelSets":
        pos = frozenset(int(c) for c in positives)
        return cls(pos, frozenset(range(num_classes)) - pos)

    def check_range(self, num_classes: int) -> None:
        allc = self.positives | self.negatives
        if allc and (min(allc) < 0 or max(allc) >= num_classes):
            raise ParameterError(f"label index out of range [0, {num_classes})")


def _pairs_with_labels(assignment: "Assignment", gt_labels, num_classes: int, num_props: int):
    pairs = list(assignment.pairs)
    qs = np.array([q for q, _ in pairs], dtype=np.int64)
    gs = np.array([g for _, g in pairs], dtype=np.int64)
    cls = gs if gt_labels is None else np.asarray(gt_labels, dtype=np.int64)[gs]
    if qs.size:
        if qs.min() < 0 or qs.max() >= num_props:
            raise ParameterError(f"assignment proposal index out of range [0, {num_props})")
        if cls.min() < 0 or cls.max() >= num_classes:
            raise ParameterError(f"matched class out of range [0, {num_classes})")
    return qs, cls


def _ce_columns(R: np.ndarray, qs: np.ndarray, cls: np.ndarray, temperature: float):
    """Per-column -log softmax(R[:, q] / t)[c] and its gradient w.r.t. those columns."""
    logp = log_softmax_temp(R[:, qs], temperature, axis=0)
    vals = -logp[cls, np.arange(qs.size)]
    grad = np.exp(logp)
    grad[cls, np.arange(qs.size)] -= 1.0
    return vals, grad / temperature


def ce_class_loss(R, assignment: "Assignment", temperature: float, gt_labels=None) -> LossReport:
    """Sum over matched proposals of -log p_q(gt class).

    ``gt_labels[g]`` is the class of ground-truth entry ``g``; when omitted
    the gt index in each pair is taken to be the class itself.
    """
    R = as_tensor(R, "R", ndim=2)
    qs, cls = _pairs_with_labels(assignment, gt_labels, *R.shape)
    grad = np.zeros_like(R)
    if qs.size == 0:
        return LossReport(0.0, {"R": grad}, absent=True)
    vals, g = _ce_columns(R, qs, cls, temperature)
    grad[:, qs] = g
    return LossReport(float(vals.sum()), {"R": grad})


def kl_uniform_loss(p) -> LossReport:
    """KL(p || uniform) = sum_c p_c ln(p_c C), with 0 ln 0 = 0."""
    p = as_tensor(p, "p", ndim=1)
    if p.size == 0:
        raise ParameterError("empty probability vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError(f"p must be a probability vector (sum={p.sum()!r})")
    C = p.size
    safe = np.maximum(p, 1e-300)
    value = float(np.sum(np.where(p > 0, p * np.log(safe * C), 0.0)))
    grad = np.log(np.maximum(p, 1e-12) * C) + 1.0
    return LossReport(max(value, 0.0), {"p": grad})


def _kl_columns(R: np.ndarray, qs: np.ndarray, temperature: float):
    """KL(softmax(R[:, q]/t) || U) per column and its gradient w.r.t. R[:, q]."""
    C = R.shape[0]
    logp = log_softmax_temp(R[:, qs], temperature, axis=0)
    p = np.exp(logp)
    negent = np.sum(p * logp, axis=0)
    vals = np.maximum(negent + np.log(C), 0.0)
    grad = p * (logp - negent[None, :]) / temperature
    return vals, grad


def bg_aware_class_loss(
    R, assignment: "Assignment", weights: LossWeights, gt_labels=None
) -> LossReport:
    """lambda * CE over matched proposals + (1 - lambda) * KL-to-uniform over the rest."""
    R = as_tensor(R, "R", ndim=2)
    C, N = R.shape
    lam, t = weights.lambda_, weights.temperature
    qs, cls = _pairs_with_labels(assignment, gt_labels, C, N)
    unmatched = np.setdiff1d(np.arange(N), qs)
    grad = np.zeros_like(R)
    value = 0.0
    if qs.size:
        vals, g = _ce_columns(R, qs, cls, t)
        value += lam * vals.sum()
        grad[:, qs] += lam * g
    if unmatched.size:
        vals, g = _kl_columns(R, unmatched, t)
        scale = (1.0 - lam) / (unmatched.size if weights.bg_reduce == "mean" else 1.0)
        value += scale * vals.sum()
        grad[:, unmatched] += scale * g
    return LossReport(float(value), {"R": grad})


def bg_embedding_class_loss(
    R_ext, assignment: "Assignment", temperature: float, gt_labels=None, bg_weight: float = 1.0
) -> LossReport:
    """Baseline class loss with a learned background row appended to R.

    ``R_ext`` is (C + 1) x N with the last row the background similarity.
    Matched proposals take CE against their gt class, unmatched ones CE
    against the background row, down-weighted by ``bg_weight``.
    """
    R_ext = as_tensor(R_ext, "R_ext", ndim=2)
    C1, N = R_ext.shape
    qs, cls = _pairs_with_labels(assignment, gt_labels, C1 - 1, N)
    unmatched = np.setdiff1d(np.arange(N), qs)
    all_q = np.concatenate([qs, unmatched])
    all_c = np.concatenate([cls, np.full(unmatched.size, C1 - 1, dtype=np.int64)])
    w = np.concatenate([np.ones(qs.size), np.full(unmatched.size, bg_weight)])
    vals, g = _ce_columns(R_ext, all_q, all_c, temperature)
    grad = np.zeros_like(R_ext)
    grad[:, all_q] = g * w[None, :]
    return LossReport(float(np.dot(w, vals)), {"R": grad})


def ranking_loss_image(R, labels: ImageLabelSets) -> LossReport:
    """(1/|P|) sum_{j in P} sum_{k in Pbar} softplus(r*_k - r*_j), r*_c = max_q R[c, q].

    The gradient of each max is routed to its argmax proposal (lowest index
    on ties).
    """
    R = as_tensor(R, "R", ndim=2)
    labels.check_range(R.shape[0])
    grad = np.zeros_like(R)
    pos = np.array(sorted(labels.positives), dtype=np.int64)
    neg = np.array(sorted(labels.negatives), dtype=np.int64)
    if pos.size == 0:
        if neg.size:
            raise ParameterError("ranking loss needs at least one positive label")
        return LossReport(0.0, {"R": grad}, absent=True)
    if neg.size == 0:
        return LossReport(0.0, {"R": grad}, absent=True)
    arg = np.argmax(R, axis=1)
    rstar = R[np.arange(R.shape[0]), arg]
    diff = rstar[neg][None, :] - rstar[pos][:, None]  # |P| x |Pbar|
    value = float(softplus(diff).sum() / pos.size)
    s = sigmoid_map(diff) / pos.size
    grad[pos, arg[pos]] -= s.sum(axis=1)
    grad[neg, arg[neg]] += s.sum(axis=0)
    return LossReport(value, {"R": grad})


def ranking_loss_batch(per_image: Sequence[LossReport]) -> LossReport:
    """Mean over images; gradient ``R`` of image i is reported as ``R/i`` scaled by 1/B."""
    if not per_image:
        raise ParameterError("empty batch")
    B = len(per_image)
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for i, rep in enumerate(per_image):
        value += rep.value
        for k, g in rep.gradients.items():
            grads[k if B == 1 else f"{k}/{i}"] = g / B
    return LossReport(value / B, grads, absent=all(r.absent for r in per_image))


def _check_mask_pair(pred, gt, name="pred"):
    pred = as_tensor(pred, name)
    gt = as_tensor(gt, "gt")
    if pred.shape != gt.shape:
        raise ShapeError(f"{name} shape {pred.shape} != gt shape {gt.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise ParameterError("gt mask must be binary")
    return pred, gt


def _alpha_t(gt: np.ndarray, alpha: float | None) -> np.ndarray:
    # alpha None or 1 means unweighted; see MaskLossConfig
    if alpha is None or alpha >= 1.0:
        return np.ones_like(gt)
    return np.where(gt > 0, alpha, 1.0 - alpha)


def focal_loss(pred, gt, gamma: float = 2.0, alpha: float | None = None) -> LossReport:
    """Mean per-pixel focal loss on probabilities.

    Per pixel: -alpha_t (1 - p_t)^gamma log p_t, with p_t = p where gt = 1 and
    1 - p where gt = 0.  ``pred`` is clamped to [1e-7, 1 - 1e-7].
    """
    pred, gt = _check_mask_pair(pred, gt)
    if gamma < 0:
        raise ParameterError("focal gamma must be >= 0")
    n = pred.size
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    sign = np.where(gt > 0, 1.0, -1.0)
    pt = np.where(gt > 0, p, 1.0 - p)
    at = _alpha_t(gt, alpha)
    w = (1.0 - pt) ** gamma
    logpt = np.log(pt)
    value = float(np.sum(-at * w * logpt) / n)
    if gamma > 0:
        dw = gamma * (1.0 - pt) ** (gamma - 1.0)
    else:
        dw = np.zeros_like(pt)
    dpt = at * (dw * logpt - w / pt)
    grad = dpt * sign / n
    grad[(pred < PROB_CLAMP) | (pred > 1.0 - PROB_CLAMP)] = 0.0
    return LossReport(max(value, 0.0), {"pred": grad})


def focal_loss_logits(logits, gt, gamma: float = 2.0, alpha: float | None = None) -> LossReport:
    """Focal loss on pre-sigmoid logits; stable for saturated inputs, no clamping."""
    x, gt = _check_mask_pair(logits, gt, "logits")
    n = x.size
    y = np.where(gt > 0, x, -x)  # p_t = sigmoid(y)
    at = _alpha_t(gt, alpha)
    sp = softplus(-y)  # -log p_t
    q = sigmoid_map(-y)  # 1 - p_t
    value = float(np.sum(at * q**gamma * sp) / n)
    if gamma > 0:
        dy = -(q**gamma) * (gamma * sigmoid_map(y) * sp + q)
    else:
        dy = -q
    grad = at * dy * np.where(gt > 0, 1.0, -1.0) / n
    return LossReport(value, {"logits": grad})


def dice_loss(pred, gt, eps: float = 1.0) -> LossReport:
    """Soft DICE: 1 - (2 sum(p g) + eps) / (sum p + sum g + eps)."""
    pred, gt = _check_mask_pair(pred, gt)
    a = 2.0 * np.sum(pred * gt) + eps
    b = np.sum(pred) + np.sum(gt) + eps
    if b == 0:
        return LossReport(0.0, {"pred": np.zeros_like(pred)}, absent=True)
    value = 1.0 - a / b
    grad = -(2.0 * gt * b - a) / b**2
    return LossReport(float(min(max(value, 0.0), 1.0)), {"pred": grad})


def focal_loss_matrix(pred, gt, gamma: float = 2.0, alpha: float | None = None) -> np.ndarray:
    """Pairwise mean focal loss: out[i, j] = focal_loss(pred[i], gt[j]).value."""
    p = np.clip(as_tensor(pred, "pred", ndim=2), PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = as_tensor(gt, "gt", ndim=2)
    a_pos, a_neg = (1.0, 1.0) if alpha is None or alpha >= 1.0 else (alpha, 1.0 - alpha)
    f_pos = -a_pos * (1.0 - p) ** gamma * np.log(p)
    f_neg = -a_neg * p**gamma * np.log(1.0 - p)
    return (f_pos @ g.T + f_neg @ (1.0 - g).T) / p.shape[1]


def dice_loss_matrix(pred, gt, eps: float = 1.0) -> np.ndarray:
    p = as_tensor(pred, "pred", ndim=2)
    g = as_tensor(gt, "gt", ndim=2)
    num = 2.0 * p @ g.T + eps
    den = p.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] + eps
    return 1.0 - num / den


def mask_loss(
    proposals,
    gt_masks,
    assignment: "Assignment",
    focal_weight: float = 20.0,
    dice_weight: float = 1.0,
    focal_gamma: float = 2.0,
    focal_alpha: float | None = 0.25,
    dice_eps: float = 1.0,
    logits: bool = False,
) -> LossReport:
    """Focal + DICE averaged over matched (proposal, gt mask) pairs.

    Unmatched proposals receive no mask supervision.  With ``logits=True``
    ``proposals`` holds pre-sigmoid values and the gradient key is
    ``logits``; otherwise probabilities and key ``proposals``.
    """
    x = as_tensor(proposals, "proposals", ndim=2)
    gt_masks = as_tensor(gt_masks, "gt_masks", ndim=2)
    if x.shape[1] != gt_masks.shape[1]:
        raise ShapeError(f"proposals have {x.shape[1]} pixels, gt masks {gt_masks.shape[1]}")
    key = "logits" if logits else "proposals"
    grad = np.zeros_like(x)
    pairs = list(assignment.pairs)
    if not pairs:
        return LossReport(0.0, {key: grad}, absent=True)
    probs = sigmoid_map(x) if logits else x
    value = 0.0
    G = len(pairs)
    for q, g in pairs:
        if logits:
            fr = focal_loss_logits(x[q], gt_masks[g], focal_gamma, focal_alpha)
            fgrad = fr.gradients["logits"]
        else:
            fr = focal_loss(x[q], gt_masks[g], focal_gamma, focal_alpha)
            fgrad = fr.gradients["pred"]
        dr = dice_loss(probs[q], gt_masks[g], dice_eps)
        dgrad = dr.gradients["pred"]
        if logits:
            dgrad = dgrad * probs[q] * (1.0 - probs[q])
        value += focal_weight * fr.value + dice_weight * dr.value
        grad[q] += (focal_weight * fgrad + dice_weight * dgrad) / G
    return LossReport(value / G, {key: grad})


def total_loss(
    class_report: LossReport | None,
    mask_report: LossReport | None,
    rank_report: LossReport | None,
    weights: LossWeights,
) -> LossReport:
    """alpha * class + beta * mask + gamma * rank; missing reports count as zero.

    Gradients with the same key are summed, so a class and rank report both
    carrying ``R`` combine into one ``R`` gradient.
    """
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    parts = ((weights.alpha, class_report), (weights.beta, mask_report), (weights.gamma, rank_report))
    for w, rep in parts:
        if rep is None:
            continue
        value += w * rep.value
        for k, g in rep.gradients.items():
            grads[k] = grads[k] + w * g if k in grads else w * g
    absent = all(rep is None or rep.absent for _, rep in parts)
    return LossReport(float(value), grads, absent=absent)
