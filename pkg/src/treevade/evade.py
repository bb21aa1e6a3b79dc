"""Approximate evasion by greedy coordinate descent.

Each step applies the single best coordinate change (found by the symbolic
single-change search) until the margin crosses zero. The reported sparsity is
the number of coordinates differing from the *original* instance, so a step
that moves an already-moved coordinate, or moves one back, costs nothing.

The budgeted variant drives the signed margin ``y * f`` as low as possible
without ever differing from the original in more than ``budget`` coordinates;
it is the generator behind adversarial training.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from treevade import intervals
from treevade.ensemble import TreeEnsemble, as_instance, predict_margin
from treevade.exact import FAILED, FEASIBLE, EvasionOutcome
from treevade.symbolic import best_single_change


@dataclass
class DescentTrace:
    steps: list = field(default_factory=list)  # (feature, (lo, hi), value, margin after)
    changed_features: set = field(default_factory=set)


@dataclass
class EvadeConfig:
    max_iter: int = 1000
    epsilon: float = 1e-4


def _apply_change(x_current: np.ndarray, x_original: np.ndarray, change,
                  eps: float) -> np.ndarray:
    """Materialize a winning interval, staying as close to the original as allowed."""
    out = x_current.copy()
    out[change.feature] = intervals.representative(
        x_original[change.feature], change.lo, change.hi, eps
    )
    return out


def _changed_set(x_original: np.ndarray, x_current: np.ndarray) -> set:
    return set(np.flatnonzero(x_current != x_original).tolist())


def coordinate_descent_evade(model: TreeEnsemble, x,
                             config: Optional[EvadeConfig] = None
                             ) -> tuple[EvasionOutcome, DescentTrace]:
    """Greedy minimal-sparsity evasion.

    Requires a non-zero margin at x. Fails (status ``failed``) if no single
    change improves the margin before the sign flips, or after ``max_iter``
    steps. On success the outcome's distance is the count of coordinates
    changed relative to the original x (an upper bound on the optimum).
    """
    config = config or EvadeConfig()
    x = as_instance(x, model.n_features)
    margin = predict_margin(model, x)
    if margin == 0.0:
        raise ValueError("margin at x is exactly zero; evasion direction is ambiguous")
    sign = 1 if margin < 0 else -1  # maximize sign * f until it reaches 0

    start = time.perf_counter()
    trace = DescentTrace()
    current = x.copy()
    current_margin = margin

    def flipped() -> bool:
        return current_margin >= 0.0 if sign > 0 else current_margin <= 0.0

    for _ in range(config.max_iter):
        if flipped():
            break
        change = best_single_change(model, current, sign=sign)
        if change.feature is None or sign * change.delta <= 0.0:
            break
        current = _apply_change(current, x, change, config.epsilon)
        current_margin = predict_margin(model, current)
        trace.steps.append((change.feature, (change.lo, change.hi),
                            float(current[change.feature]), current_margin))
        trace.changed_features = _changed_set(x, current)

    wall = time.perf_counter() - start
    if flipped():
        count = len(trace.changed_features)
        outcome = EvasionOutcome(
            x_prime=current,
            distance=float(count),
            status=FEASIBLE,
            lower_bound=1.0,
            upper_bound=float(count),
            nodes_expanded=len(trace.steps),
            wall_time=wall,
            boundary=current_margin == 0.0,
        )
        return outcome, trace
    outcome = EvasionOutcome(
        x_prime=None, distance=np.nan, status=FAILED,
        nodes_expanded=len(trace.steps), wall_time=wall,
    )
    return outcome, trace


def budgeted_adversarial(model: TreeEnsemble, x, y: int, budget: int,
                         config: Optional[EvadeConfig] = None) -> np.ndarray:
    """Instance within ``budget`` moved coordinates minimizing ``y * f``.

    Runs the same greedy descent on ``-y * f`` and stops before any step that
    would push the count of coordinates differing from the original above the
    budget. Returns the minimum-margin iterate seen (possibly x itself); the
    sign is not required to flip.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    config = config or EvadeConfig()
    x = as_instance(x, model.n_features)
    if y not in (-1, 1):
        raise ValueError("label must be -1 or +1")
    sign = -y  # maximizing sign * f minimizes y * f

    current = x.copy()
    best_x = current
    best_score = y * predict_margin(model, current)
    for _ in range(config.max_iter):
        change = best_single_change(model, current, sign=sign)
        if change.feature is None or sign * change.delta <= 0.0:
            break
        candidate = _apply_change(current, x, change, config.epsilon)
        if len(_changed_set(x, candidate)) > budget:
            break
        current = candidate
        score = y * predict_margin(model, current)
        if score < best_score:
            best_score = score
            best_x = current
    return best_x.copy()
