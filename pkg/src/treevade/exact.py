"""Exact minimal-evasion search.

:func:`solve` runs a best-first branch-and-bound over per-feature cell
choices of the program built by :mod:`treevade.milp`: a search node fixes the
cell (equivalently the predicate-chain valuation) of a prefix of features, its
bound is the deformation cost of the fixed cells, and per-tree reachable-leaf
value ranges prune nodes that can no longer cross the decision boundary (or
prove that every completion crosses it, yielding an incumbent early).

:func:`brute_force_oracle` enumerates every cell outright and is exact by
exhaustion; it exists to verify the search and is used throughout the tests.
"""

import heapq
import itertools
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from treevade import intervals
from treevade._core import kernels
from treevade.ensemble import (
    TreeEnsemble,
    as_instance,
    collect_thresholds,
    predict_margin,
    predict_margin_batch,
)
from treevade.milp import DistanceSpec, MilpProgram, feature_cell_costs
from treevade.symbolic import per_feature_best_gain

OPTIMAL = "optimal"
FEASIBLE = "feasible_with_bound"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"
FAILED = "failed"


@dataclass
class EvasionOutcome:
    """Result of one evasion attempt.

    ``distance`` is in the metric's natural units (euclidean, not squared).
    ``lower_bound``/``upper_bound`` bracket the optimum when the search was cut
    short; for ``optimal`` they equal the distance. ``boundary`` marks
    solutions sitting exactly on the decision boundary (margin 0), which count
    as evasions of negatively-classified instances by convention.
    """

    x_prime: Optional[np.ndarray]
    distance: float
    status: str
    lower_bound: float = np.nan
    upper_bound: float = np.nan
    nodes_expanded: int = 0
    wall_time: float = 0.0
    boundary: bool = False

    def mislabels(self, model: TreeEnsemble, x) -> bool:
        """Re-verify that x_prime crosses the decision rule relative to x."""
        if self.x_prime is None:
            return False
        before = predict_margin(model, x)
        after = predict_margin(model, self.x_prime)
        if after == 0.0:
            return before < 0.0
        return (before > 0.0) != (after > 0.0)


@dataclass
class SolveConfig:
    time_limit: float = 60.0
    warm_start: Optional[np.ndarray] = None


def _actual_distance(x: np.ndarray, x_prime: np.ndarray, spec: DistanceSpec) -> float:
    """Internal-unit distance (squared for l2) between two concrete instances."""
    diff = np.abs(x - x_prime)
    if spec.metric == "l0":
        moved = diff > 0
        if spec.l0_weights is not None:
            return float(spec.l0_weights[moved].sum())
        return float(moved.sum())
    if spec.metric == "l1":
        return float(diff.sum())
    if spec.metric == "l2":
        return float((diff**2).sum())
    return float(diff.max()) if len(diff) else 0.0


def _report_units(value: float, spec: DistanceSpec) -> float:
    return float(np.sqrt(value)) if spec.metric == "l2" else float(value)


@dataclass
class _Groups:
    """Extra predicate-variable constraints, prepared for cell-space pruning."""

    rows: list  # (coeffs per feature: dict f -> np.ndarray over cells, relation, rhs)

    @staticmethod
    def prepare(prog: MilpProgram):
        rows = []
        for group in prog.extra:
            per_feature: dict[int, np.ndarray] = {}
            for coef, (f, rank) in group.terms:
                taus = prog.thresholds[f]
                # Contribution of choosing cell a: coef if predicate true (rank >= a).
                contrib = per_feature.setdefault(f, np.zeros(len(taus) + 1))
                contrib[: rank + 1] += coef
            rows.append((per_feature, group.relation, group.rhs))
        return _Groups(rows) if rows else None

    def feasible(self, assignment: dict[int, int], strict: bool) -> bool:
        """Check rows against a (possibly partial) cell assignment.

        Unassigned features contribute their min/max possible value; with
        ``strict`` every referenced feature must be assigned (exact check).
        """
        for per_feature, relation, rhs in self.rows:
            lo = hi = 0.0
            for f, contrib in per_feature.items():
                if f in assignment:
                    v = contrib[assignment[f]]
                    lo += v
                    hi += v
                elif strict:
                    raise ValueError("strict group check on partial assignment")
                else:
                    lo += contrib.min()
                    hi += contrib.max()
            if relation == "<=" and lo > rhs + 1e-9:
                return False
            if relation == ">=" and hi < rhs - 1e-9:
                return False
            if relation == "=" and (lo > rhs + 1e-9 or hi < rhs - 1e-9):
                return False
        return True


def solve(prog: MilpProgram, model: TreeEnsemble, x,
          config: Optional[SolveConfig] = None) -> EvasionOutcome:
    """Best-first branch-and-bound over feature cells.

    Nodes fix cells for a prefix of the branching order (features sorted by
    cheapest non-zero move cost, ties broken toward larger single-change
    margin impact); bounds add (or, for linf, max) the fixed cell costs.
    Reachable-leaf ranges per tree prune sign-infeasible subtrees and detect
    subtrees whose every completion already mislabels. Ties between equal-cost
    optima resolve by expansion order, which is deterministic.

    Returns status ``optimal`` when the frontier is exhausted or the best open
    bound cannot beat the incumbent; ``feasible_with_bound`` at the time limit
    with an incumbent; ``timeout`` at the time limit without one;
    ``infeasible`` when no cell mislabels.
    """
    config = config or SolveConfig()
    x = as_instance(x, prog.n_features)
    spec = prog.spec
    target = prog.mislabel_sign  # +1 -> need f(x') >= 0
    start = time.perf_counter()

    feats = [f for f, taus in prog.thresholds.items() if len(taus) > 0]
    costs = {f: feature_cell_costs(x, f, prog.thresholds[f], spec) for f in feats}
    x_cell = {f: intervals.cell_index(prog.thresholds[f], x[f]) for f in feats}
    # per-feature cell borders, indexed by cell, for the hot per-node loop
    bounds_of = {}
    for f in feats:
        taus = prog.thresholds[f]
        edges = (-np.inf,) + tuple(taus) + (np.inf,)
        bounds_of[f] = tuple((edges[i], edges[i + 1]) for i in range(len(taus) + 1))
    groups = _Groups.prepare(prog)
    linf = spec.metric == "linf"

    # Branching order: cheapest non-zero move first, then strongest
    # single-change impact toward the target side, then feature index.
    gains = per_feature_best_gain(model, x, sign=target)
    def cheapest_nonzero(f: int) -> float:
        nonzero = costs[f][costs[f] > 0]
        return float(nonzero.min()) if len(nonzero) else np.inf
    order = sorted(feats, key=lambda f: (cheapest_nonzero(f), -gains.get(f, 0.0), f))

    # Per-cell single-change margin gains toward the target side, from the
    # same per-tree sweep that feeds the greedy attack; used only to order
    # equal-cost cells so promising flips are explored first.
    flat = model.flat
    cell_gain = {f: np.zeros(len(prog.thresholds[f]) + 1) for f in feats}
    t_feat, t_lo, t_hi, t_delta, _ = kernels.single_change_tuples(flat, x)
    for f in np.unique(t_feat):
        taus = prog.thresholds[int(f)]
        mask = t_feat == f
        diff = np.zeros(len(taus) + 2)
        first_cell = np.searchsorted(taus, t_lo[mask], side="right")
        end_cell = np.searchsorted(taus, t_hi[mask], side="right")
        np.add.at(diff, first_cell, target * t_delta[mask])
        np.add.at(diff, end_cell, -target * t_delta[mask])
        cell_gain[int(f)] = np.cumsum(diff[:-1])

    # Cell choices per feature: cheapest first (stay-cell leads), then most
    # margin gain, then cell index.
    choices = {}
    for f in order:
        keys = sorted(range(len(costs[f])),
                      key=lambda i: (costs[f][i], -cell_gain[f][i], i))
        choices[f] = [(int(i), float(costs[f][i])) for i in keys]

    bias = flat.bias
    free_lo = np.full(prog.n_features, -np.inf)
    free_hi = np.full(prog.n_features, np.inf)

    incumbent_cost = np.inf
    incumbent_x: Optional[np.ndarray] = None

    def materialize(assignment: dict[int, int]) -> np.ndarray:
        out = x.copy()
        for f, cell in assignment.items():
            if cell != x_cell[f]:
                lo, hi = intervals.cell_bounds(prog.thresholds[f], cell)
                out[f] = intervals.representative(x[f], lo, hi, spec.epsilon)
        return out

    if config.warm_start is not None:
        ws = as_instance(config.warm_start, prog.n_features)
        after = predict_margin(model, ws)
        ok = after >= 0.0 if target > 0 else after <= 0.0
        if ok and groups is not None:
            ws_cells = {f: intervals.cell_index(prog.thresholds[f], ws[f]) for f in feats}
            ok = groups.feasible(ws_cells, strict=True)
        if ok:
            incumbent_cost = _actual_distance(x, ws, spec)
            incumbent_x = ws.copy()

    # Heap entries: (bound, tiebreak, node); node = (pos, feat, cell, parent).
    counter = itertools.count()
    root = (0, -1, -1, None)
    heap = [(0.0, next(counter), root)]
    expanded = 0
    tol = 1e-12
    timed_out = False

    while heap:
        bound, _, node = heapq.heappop(heap)
        if bound >= incumbent_cost - tol:
            heap = []
            break
        if time.perf_counter() - start > config.time_limit:
            heapq.heappush(heap, (bound, next(counter), node))
            timed_out = True
            break
        expanded += 1

        pos, _, _, _ = node
        assignment: dict[int, int] = {}
        walk = node
        while walk[3] is not None:
            assignment[walk[1]] = walk[2]
            walk = walk[3]

        lo_box = free_lo.copy()
        hi_box = free_hi.copy()
        for f, cell in assignment.items():
            lo_box[f], hi_box[f] = bounds_of[f][cell]
        mins, maxs = kernels.tree_ranges(flat, lo_box, hi_box)
        total_min = mins.sum() + bias
        total_max = maxs.sum() + bias

        if target > 0 and total_max < 0.0:
            continue
        if target < 0 and total_min > 0.0:
            continue

        certain = total_min >= 0.0 if target > 0 else total_max <= 0.0
        if certain:
            # Every completion mislabels; the all-stay completion costs bound.
            all_stay = {f_: x_cell[f_] for f_ in feats}
            all_stay.update(assignment)
            if groups is None or groups.feasible(all_stay, strict=True):
                incumbent_cost = bound
                incumbent_x = materialize(assignment)
                continue
            # The free completion violates a predicate-variable group; deeper
            # (costlier) completions may still satisfy it, so keep expanding.

        if pos == len(order):
            # Complete assignment: single reachable leaf per tree.
            margin = total_min
            ok = margin >= 0.0 if target > 0 else margin <= 0.0
            if ok and (groups is None or groups.feasible(assignment, strict=True)):
                if bound < incumbent_cost - tol:
                    incumbent_cost = bound
                    incumbent_x = materialize(assignment)
            continue

        f = order[pos]
        for cell, cost in choices[f]:
            child_bound = max(bound, cost) if linf else bound + cost
            if child_bound >= incumbent_cost - tol:
                continue
            if groups is not None and not groups.feasible(
                    {**assignment, f: cell}, strict=False):
                continue
            heapq.heappush(heap, (child_bound, next(counter), (pos + 1, f, cell, node)))

    wall = time.perf_counter() - start
    if incumbent_x is None:
        if timed_out:
            return EvasionOutcome(None, np.nan, TIMEOUT,
                                  lower_bound=_report_units(heap[0][0], spec) if heap else np.nan,
                                  upper_bound=np.inf, nodes_expanded=expanded, wall_time=wall)
        return EvasionOutcome(None, np.nan, INFEASIBLE, nodes_expanded=expanded,
                              wall_time=wall)

    after = predict_margin(model, incumbent_x)
    boundary = after == 0.0
    dist = _report_units(incumbent_cost, spec)
    if timed_out:
        lower = _report_units(min((heap[0][0] if heap else incumbent_cost), incumbent_cost), spec)
        return EvasionOutcome(incumbent_x, dist, FEASIBLE, lower_bound=lower,
                              upper_bound=dist, nodes_expanded=expanded,
                              wall_time=wall, boundary=boundary)
    return EvasionOutcome(incumbent_x, dist, OPTIMAL, lower_bound=dist,
                          upper_bound=dist, nodes_expanded=expanded,
                          wall_time=wall, boundary=boundary)


def brute_force_oracle(model: TreeEnsemble, x, d: DistanceSpec,
                       cell_cap: int = 10**6) -> EvasionOutcome:
    """Exhaustive cell enumeration; exact by construction.

    Enumerates the full cross product of per-feature cells (features without
    predicates never matter), evaluates the model at each cell representative,
    and keeps the cheapest mislabeling cell; lexicographic (feature index,
    then cell index) ties win. Refuses cell counts above ``cell_cap``.
    """
    x = as_instance(x, model.n_features)
    start = time.perf_counter()
    margin = predict_margin(model, x)
    if margin == 0.0:
        raise ValueError("margin at x is exactly zero; mislabel direction is ambiguous")
    target = 1 if margin < 0 else -1

    thresholds = collect_thresholds(model)
    feats = sorted(thresholds)
    sizes = [len(thresholds[f]) + 1 for f in feats]
    n_cells = int(np.prod(sizes)) if feats else 1
    if n_cells > cell_cap:
        raise ValueError(f"{n_cells} cells exceed the enumeration cap {cell_cap}")

    if not feats:
        return EvasionOutcome(None, np.nan, INFEASIBLE, nodes_expanded=1,
                              wall_time=time.perf_counter() - start)

    reps = []
    cost_arrays = []
    for f in feats:
        taus = thresholds[f]
        reps.append(np.array([
            intervals.representative(x[f], *intervals.cell_bounds(taus, i), d.epsilon)
            for i in range(len(taus) + 1)
        ]))
        cost_arrays.append(feature_cell_costs(x, f, taus, d))

    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    cells = np.stack([g.ravel() for g in grids], axis=1)  # lexicographic order

    X = np.tile(x, (n_cells, 1))
    cost = np.zeros(n_cells)
    for j, f in enumerate(feats):
        X[:, f] = reps[j][cells[:, j]]
        fc = cost_arrays[j][cells[:, j]]
        cost = np.maximum(cost, fc) if d.metric == "linf" else cost + fc

    margins = predict_margin_batch(model, X)
    ok = margins >= 0.0 if target > 0 else margins <= 0.0
    wall = time.perf_counter() - start
    if not ok.any():
        return EvasionOutcome(None, np.nan, INFEASIBLE, nodes_expanded=n_cells,
                              wall_time=wall)
    masked = np.where(ok, cost, np.inf)
    best = int(np.argmin(masked))  # argmin keeps the first (lexicographic) tie
    dist = _report_units(float(cost[best]), d)
    return EvasionOutcome(X[best].copy(), dist, OPTIMAL, lower_bound=dist,
                          upper_bound=dist, nodes_expanded=n_cells,
                          wall_time=wall, boundary=margins[best] == 0.0)
