"""Dense float64 kernel shared by every other module.

Tensors are plain ``numpy.ndarray`` objects in float64, row-major.  The
helpers here validate inputs and implement the numerically stable
elementary operations, such as the tempered softmax and cosine similarity.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ParameterError, ShapeError

NORM_EPS = 1e-12


def as_tensor(x, name: str = "tensor", ndim: int | None = None) -> np.ndarray:
    """Convert to a C-contiguous float64 array and reject non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name}: contains NaN or Inf")
    return arr


def _check_temperature(temperature: float) -> float:
    t = float(temperature)
    if not np.isfinite(t) or t <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature!r}")
    return t


def log_softmax_temp(logits, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    t = _check_temperature(temperature)
    z = as_tensor(logits, "logits") / t
    if z.size == 0 or z.shape[axis] == 0:
        raise ParameterError("softmax over an empty axis")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_temp(logits, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Softmax of ``logits / temperature`` along ``axis`` with max-subtraction.

    >>> softmax_temp([0.0, np.log(2.0)]).round(6).tolist()
    [0.333333, 0.666667]
    """
    t = _check_temperature(temperature)
    z = as_tensor(logits, "logits") / t
    if z.size == 0 or z.shape[axis] == 0:
        raise ParameterError("softmax over an empty axis")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cosine_sim(a, b) -> float:
    a = as_tensor(a, "a", ndim=1)
    b = as_tensor(b, "b", ndim=1)
    if a.shape != b.shape or a.size == 0:
        raise ShapeError(f"cosine_sim: incompatible lengths {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateInputError("cosine_sim: zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def row_norms(x: np.ndarray, name: str = "rows") -> np.ndarray:
    """L2 norm of each row; raises naming the first degenerate row."""
    n = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(n <= NORM_EPS)
    if bad.size:
        raise DegenerateInputError(f"{name}: row {int(bad[0])} has zero norm")
    return n


def cosine_matrix(a, b, name_a: str = "a", name_b: str = "b") -> np.ndarray:
    """Pairwise cosine similarities between rows: result[i, j] = cos(a[i], b[j])."""
    a = as_tensor(a, name_a, ndim=2)
    b = as_tensor(b, name_b, ndim=2)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    na = row_norms(a, name_a)
    nb = row_norms(b, name_b)
    return np.clip((a / na[:, None]) @ (b / nb[:, None]).T, -1.0, 1.0)


def sigmoid_map(x) -> np.ndarray:
    x = as_tensor(x, "x")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, x)
