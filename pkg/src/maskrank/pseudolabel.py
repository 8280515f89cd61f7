"""Image-level pseudo labels for unseen classes from proposal embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ParameterError, ShapeError
from .tensor import as_tensor, cosine_matrix, softmax_temp


@dataclass(frozen=True)
class ProposalEmbeddings:
    values: np.ndarray  # N x d, unit rows
    boxes: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self):
        v = as_tensor(self.values, "values", ndim=2)
        if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-6):
            raise ParameterError("proposal embeddings must be unit-normalised")
        if self.boxes and len(self.boxes) != v.shape[0]:
            raise ShapeError("one box per embedding row")
        for x0, y0, x1, y1 in self.boxes:
            if x0 > x1 or y0 > y1 or min(x0, y0) < 0:
                raise ParameterError(f"invalid box {(x0, y0, x1, y1)}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PseudoLabelResult:
    scores: np.ndarray
    labels: frozenset[int]
    threshold: float

    def to_json(self) -> dict:
        return {"scores": self.scores.tolist(), "labels": sorted(self.labels)}


def mask_to_bbox(mask) -> tuple[int, int, int, int]:
    """Tightest (x0, y0, x1, y1) box around the positive pixels; x is the column."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be H x W, got {m.shape}")
    rows, cols = np.nonzero(m > 0.5)
    if rows.size == 0:
        raise DegenerateInputError("empty mask has no bounding box")
    return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())


def crop_boxes(masks) -> list[tuple[int, int, int, int] | None]:
    """Boxes for a stack of masks; ``None`` for empty masks, which callers drop."""
    out = []
    for m in masks:
        try:
            out.append(mask_to_bbox(m))
        except DegenerateInputError:
            out.append(None)
    return out


def pseudo_scores(E_hat, T_hat, logit_scale: float = 100.0) -> np.ndarray:
    """Per unseen class, the max over proposals of softmax(scale * cos(e_i, T_hat))."""
    if not logit_scale > 0:
        raise ParameterError("logit_scale must be positive")
    E = E_hat.values if isinstance(E_hat, ProposalEmbeddings) else E_hat
    cos = cosine_matrix(E, T_hat, name_a="E_hat", name_b="T_hat")  # N x U
    if cos.shape[0] == 0 or cos.shape[1] == 0:
        raise ShapeError("need at least one proposal and one unseen class")
    return softmax_temp(logit_scale * cos, 1.0, axis=1).max(axis=0)


def threshold_labels(scores, threshold: float = 0.99) -> frozenset[int]:
    s = np.asarray(scores, dtype=np.float64)
    return frozenset(int(j) for j in np.flatnonzero(s > threshold))


def pseudo_labels(E_hat, T_hat, threshold: float = 0.99, logit_scale: float = 100.0,
                  unseen_ids=None) -> PseudoLabelResult:
    """Scores and thresholded labels; ``unseen_ids`` maps column j to a global class id."""
    scores = pseudo_scores(E_hat, T_hat, logit_scale)
    local = threshold_labels(scores, threshold)
    if unseen_ids is not None:
        local = frozenset(int(unseen_ids[j]) for j in local)
    return PseudoLabelResult(scores, local, threshold)
