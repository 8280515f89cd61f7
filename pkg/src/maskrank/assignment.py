"""Hungarian matching between proposals and ground-truth entries.

Cost matrices are laid out proposals x ground truths (N x G, G <= N); every
ground truth gets exactly one proposal and the remaining N - G proposals are
left unmatched (the "background" proposals of the class loss).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ParameterError, ShapeError
from .tensor import as_tensor


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (proposal, gt), sorted by gt
    total_cost: float
    num_proposals: int = field(default=0, compare=False)

    @property
    def matched(self) -> frozenset[int]:
        return frozenset(q for q, _ in self.pairs)

    def proposal_for_gt(self) -> dict[int, int]:
        return {g: q for q, g in self.pairs}

    def to_json(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "total_cost": self.total_cost}


def _check_cost(cost) -> np.ndarray:
    cost = as_tensor(cost, "cost", ndim=2)
    n, g = cost.shape
    if g > n:
        raise ShapeError(f"cost has {g} ground-truth columns but only {n} proposal rows")
    return cost


def _solve_rows_le_cols(a: np.ndarray):
    """Shortest-augmenting-path Hungarian for an n x m matrix with n <= m.

    Returns (col_of_row, u, v).  The duals are feasible (a[i, j] >= u[i] + v[j])
    with equality on matched edges; unmatched columns keep v == 0.
    """
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _solve(cost: np.ndarray):
    """Optimal proposal per gt column for an N x G cost (G <= N), plus duals."""
    if cost.shape[1] == 0:
        return np.zeros(0, dtype=np.int64), 0.0, np.zeros(0), np.zeros(cost.shape[0])
    q_of_g, u, v = _solve_rows_le_cols(cost.T)
    total = float(cost[q_of_g, np.arange(cost.shape[1])].sum())
    return q_of_g, total, u, v


def hungarian(cost) -> Assignment:
    """Minimum-cost matching covering every gt column.

    Among equal-cost optima the pairs list (sorted by gt index) is the
    lexicographically smallest one, i.e. gt 0 gets the lowest feasible
    proposal index, then gt 1, and so on.
    """
    cost = _check_cost(cost)
    n, g = cost.shape
    q_of_g, best, u, v = _solve(cost)
    if g == 0:
        return Assignment((), 0.0, n)

    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    reduced = cost.T - u[:, None] - v[None, :]
    current = q_of_g.copy()
    fixed_rows: list[int] = []
    fixed_sum = 0.0
    for gi in range(g):
        chosen = int(current[gi])
        for q in np.flatnonzero(reduced[gi] <= tol):
            q = int(q)
            if q in fixed_rows:
                continue
            if q == current[gi]:
                break
            rows = [r for r in range(n) if r != q and r not in fixed_rows]
            cols = list(range(gi + 1, g))
            sub_q, sub_total, _, _ = _solve(cost[np.ix_(rows, cols)])
            if fixed_sum + cost[q, gi] + sub_total <= best + tol * g:
                chosen = q
                current[gi] = q
                current[gi + 1:] = np.asarray(rows, dtype=np.int64)[sub_q]
                break
        fixed_rows.append(chosen)
        fixed_sum += cost[chosen, gi]

    pairs = tuple((int(current[k]), k) for k in range(g))
    total = float(sum(cost[q, k] for q, k in pairs))
    return Assignment(pairs, total, n)


def class_match_cost(R, gt_labels) -> np.ndarray:
    """N x G cost: negated similarity between each proposal and each gt class."""
    R = as_tensor(R, "R", ndim=2)
    labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= R.shape[0]):
        raise ParameterError(f"gt label out of range [0, {R.shape[0]})")
    return -R[labels].T.copy()


def mask_match_cost(
    proposals,
    gt_masks,
    focal_gamma: float = 2.0,
    focal_alpha: float | None = 0.25,
    focal_weight: float = 20.0,
    dice_weight: float = 1.0,
    dice_eps: float = 1.0,
) -> np.ndarray:
    """N x G cost: weighted focal + DICE between each proposal and each gt mask."""
    proposals = as_tensor(proposals, "proposals", ndim=2)
    gt_masks = as_tensor(gt_masks, "gt_masks", ndim=2)
    if proposals.shape[1] != gt_masks.shape[1]:
        raise ShapeError(
            f"proposals have {proposals.shape[1]} pixels, gt masks {gt_masks.shape[1]}"
        )
    focal = losses.focal_loss_matrix(proposals, gt_masks, focal_gamma, focal_alpha)
    dice = losses.dice_loss_matrix(proposals, gt_masks, dice_eps)
    return focal_weight * focal + dice_weight * dice


def combined_match_cost(R, gt_labels, proposals, gt_masks, **mask_kw) -> np.ndarray:
    return class_match_cost(R, gt_labels) + mask_match_cost(proposals, gt_masks, **mask_kw)
