"""Similarity matrix construction and per-pixel semantic inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import as_tensor, cosine_matrix, softmax_temp


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray  # C x N
    class_names: tuple[str, ...]
    seen_mask: np.ndarray  # bool, length C

    def __post_init__(self):
        v = as_tensor(self.values, "values", ndim=2)
        if np.any(np.abs(v) > 1.0 + 1e-12):
            raise ParameterError("similarities must lie in [-1, 1]")
        if len(self.class_names) != v.shape[0] or len(self.seen_mask) != v.shape[0]:
            raise ShapeError("class_names / seen_mask length must equal the number of classes")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "seen_mask", np.asarray(self.seen_mask, dtype=bool))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def similarity_matrix(Ec, T) -> np.ndarray:
    """C x N cosine similarities: out[c, q] = cos(Ec[q], T[c])."""
    return cosine_matrix(T, Ec, name_a="T", name_b="Ec")


def class_probabilities(R, temperature: float, external_scores=None, ensemble_weight: float = 0.0):
    """Per-proposal class distributions p_q, as a C x N matrix.

    ``external_scores`` (C x N, positive, e.g. from another classifier) is
    blended geometrically: p ∝ p^(1-w) * s^w, renormalised per column.
    """
    p = softmax_temp(np.asarray(R, dtype=np.float64), temperature, axis=0)
    if external_scores is None or ensemble_weight == 0.0:
        return p
    if not 0.0 <= ensemble_weight <= 1.0:
        raise ParameterError("ensemble_weight must lie in [0, 1]")
    s = as_tensor(external_scores, "external_scores")
    if s.shape != p.shape:
        raise ShapeError(f"external scores shape {s.shape} != {p.shape}")
    if np.any(s <= 0):
        raise ParameterError("external scores must be strictly positive")
    logmix = (1.0 - ensemble_weight) * np.log(p) + ensemble_weight * np.log(s)
    return softmax_temp(logmix, 1.0, axis=0)


def semantic_inference(
    R,
    proposals,
    temperature: float,
    shape: tuple[int, int] | None = None,
    external_scores=None,
    ensemble_weight: float = 0.0,
) -> np.ndarray:
    """Label map: pixel -> argmax_c sum_q p_q(c) M_q[pixel].

    ``proposals`` is N x H x W, or N x HW together with ``shape=(H, W)``.
    Ties go to the lowest class index.  Seen and unseen classes compete on
    equal terms; there is no background class.
    """
    R = as_tensor(np.asarray(R), "R", ndim=2)
    M = as_tensor(proposals, "proposals")
    if M.ndim == 3:
        shape = shape or M.shape[1:]
        M = M.reshape(M.shape[0], -1)
    elif M.ndim != 2:
        raise ShapeError(f"proposals must be N x H x W or N x HW, got {M.shape}")
    if shape is None:
        raise ShapeError("flat proposals need an explicit (H, W) shape")
    H, W = shape
    if M.shape[1] != H * W:
        raise ShapeError(f"proposals have {M.shape[1]} pixels, shape {shape} needs {H * W}")
    if M.shape[0] != R.shape[1]:
        raise ShapeError(f"R has {R.shape[1]} proposals, mask stack has {M.shape[0]}")
    p = class_probabilities(R, temperature, external_scores, ensemble_weight)
    scores = p @ M  # C x HW
    return np.argmax(scores, axis=0).reshape(H, W)
