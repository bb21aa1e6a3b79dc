"""Interval arithmetic shared by the program builder, solvers and attacks.

Model predicates cut each feature axis into right-open cells
``(-inf, t1), [t1, t2), ..., [tK, inf)``. Everything that materializes a
concrete coordinate from a cell, or prices the move, goes through here so that
reported distances are consistent across modules.
"""

import numpy as np


def representative(x_k: float, lo: float, hi: float, eps: float) -> float:
    """Point of [lo, hi) nearest to ``x_k``.

    Right-open ends are unattainable, so when ``x_k`` lies at or above ``hi``
    the guard value ``eps`` backs off the border. The guard is halved into the
    cell when the cell itself is narrower than ``eps``.
    """
    if lo <= x_k < hi:
        return x_k
    if x_k < lo:
        return lo
    if hi - lo <= eps:
        return lo + (hi - lo) / 2.0
    return hi - eps


def cell_cost(x_k: float, lo: float, hi: float, rho: int, eps: float) -> float:
    """Deformation cost |x_k - x'_k|^rho of moving into [lo, hi).

    ``rho = 0`` counts a unit per moved coordinate (0^0 == 0: staying inside
    the cell containing ``x_k`` is free).
    """
    rep = representative(x_k, lo, hi, eps)
    if rep == x_k:
        return 0.0
    if rho == 0:
        return 1.0
    return abs(x_k - rep) ** rho


def cell_bounds(thresholds, i: int):
    """Bounds of the ``i``-th cell of a sorted threshold list (0 = leftmost)."""
    lo = thresholds[i - 1] if i > 0 else -np.inf
    hi = thresholds[i] if i < len(thresholds) else np.inf
    return lo, hi


def cell_index(thresholds, x_k: float) -> int:
    """Index of the cell containing ``x_k``."""
    return int(np.searchsorted(np.asarray(thresholds), x_k, side="right"))


def cell_costs(x_k: float, thresholds, rho: int, eps: float) -> np.ndarray:
    """Cost of every cell along one feature axis, in cell order."""
    k = len(thresholds)
    out = np.empty(k + 1, dtype=np.float64)
    for i in range(k + 1):
        lo, hi = cell_bounds(thresholds, i)
        out[i] = cell_cost(x_k, lo, hi, rho, eps)
    return out
