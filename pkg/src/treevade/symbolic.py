"""Single-coordinate finite differences over tree ensembles.

Walking an instance through a tree while allowing at most one coordinate to
move yields, per tree, the complete set of (coordinate, value interval,
prediction change) alternatives in a single traversal. Merging those across
trees answers "which single-coordinate change moves the ensemble margin the
most" in O(|model| log |model|) instead of re-predicting once per candidate
threshold.

Two implementations exist: :func:`symbolic_predict` is the readable recursive
version built on :class:`SymbolicInstance`; :func:`best_single_change` runs on
the flat-array kernel lane (compiled when available) and aggregates across
trees with a sweep over piecewise-constant deltas.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from treevade._core import kernels
from treevade.ensemble import Internal, Leaf, Predicate, TreeEnsemble, as_instance, predict_margin


@dataclass(frozen=True)
class Condition:
    """Half-line constraint on one coordinate: x'[feature] in [lo, hi)."""

    feature: int
    lo: float
    hi: float

    @staticmethod
    def from_predicate(p: Predicate, holds: bool) -> "Condition":
        if holds:
            return Condition(p.feature, -np.inf, p.threshold)
        return Condition(p.feature, p.threshold, np.inf)


@dataclass(frozen=True)
class PerturbationTuple:
    """One reachable alternative: move ``feature`` into [lo, hi), margin moves by delta."""

    feature: int
    lo: float
    hi: float
    delta: float


class SymbolicInstance:
    """Constraint state of a traversal allowing at most one moved coordinate.

    Tracks, per coordinate, the admissible right-open interval implied by the
    conditions applied so far (absent = unconstrained), plus which coordinate
    (if any) has been forced away from its original value. Intervals only
    shrink, so once a coordinate is marked changed it stays changed.
    """

    __slots__ = ("base", "intervals", "changed_dim", "stats")

    def __init__(self, base: np.ndarray, stats: Optional[dict] = None):
        self.base = base
        self.intervals: dict[int, tuple[float, float]] = {}
        self.changed_dim: Optional[int] = None
        self.stats = stats

    def copy(self) -> "SymbolicInstance":
        dup = SymbolicInstance(self.base, self.stats)
        dup.intervals = dict(self.intervals)
        dup.changed_dim = self.changed_dim
        if self.stats is not None:
            self.stats["copies"] = self.stats.get("copies", 0) + 1
        return dup

    def _intersected(self, cond: Condition) -> tuple[float, float]:
        lo, hi = self.intervals.get(cond.feature, (-np.inf, np.inf))
        return max(lo, cond.lo), min(hi, cond.hi)

    def is_feasible(self, cond: Condition) -> bool:
        """Can some instance one coordinate away from base satisfy ``cond`` too?"""
        lo, hi = self._intersected(cond)
        if lo >= hi:
            return False
        if lo <= self.base[cond.feature] < hi:
            return True
        return self.changed_dim is None or self.changed_dim == cond.feature

    def update(self, cond: Condition) -> None:
        """Add ``cond``; only valid after a true :meth:`is_feasible`."""
        lo, hi = self._intersected(cond)
        self.intervals[cond.feature] = (lo, hi)
        if not lo <= self.base[cond.feature] < hi:
            self.changed_dim = cond.feature

    def is_changed(self) -> bool:
        return self.changed_dim is not None

    def get_perturbation(self) -> tuple[int, tuple[float, float]]:
        if self.changed_dim is None:
            raise ValueError("no coordinate has been moved")
        return self.changed_dim, self.intervals[self.changed_dim]


def _leaf_prediction(root, x: np.ndarray) -> float:
    node = root
    while isinstance(node, Internal):
        p = node.predicate
        node = node.true_child if x[p.feature] < p.threshold else node.false_child
    return node.prediction


def symbolic_predict(root, x, stats: Optional[dict] = None) -> list[PerturbationTuple]:
    """All single-coordinate alternatives for one tree.

    Recursive traversal: the state is copied on the true branch and mutated in
    place on the false branch, infeasible branches are cut, and every leaf
    reached with a moved coordinate emits a tuple. Deltas are relative to the
    leaf the unmodified instance reaches. Pass a ``stats`` dict to collect
    ``copies`` (state copies) and ``visits`` (internal nodes entered).

    The unmodified instance's own leaf emits nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    base_value = _leaf_prediction(root, x)
    out: list[PerturbationTuple] = []

    def visit(node, s: SymbolicInstance) -> None:
        if isinstance(node, Leaf):
            if s.is_changed():
                feature, (lo, hi) = s.get_perturbation()
                out.append(PerturbationTuple(feature, lo, hi, node.prediction - base_value))
            return
        if stats is not None:
            stats["visits"] = stats.get("visits", 0) + 1
        pred = node.predicate
        holds = Condition.from_predicate(pred, True)
        fails = Condition.from_predicate(pred, False)
        if s.is_feasible(holds):
            s_true = s.copy()
            s_true.update(holds)
            visit(node.true_child, s_true)
        if s.is_feasible(fails):
            s.update(fails)
            visit(node.false_child, s)

    visit(root, SymbolicInstance(x, stats))
    return out


@dataclass(frozen=True)
class BestChange:
    """Result of the single-change search; feature None means staying put."""

    feature: Optional[int]
    lo: float
    hi: float
    delta: float
    new_margin: float


def _sweep_cells(feat, lo, hi, delta, sign: int):
    """Per-cell totals of ``sign * sum(deltas of covering tuples)``, all features.

    One global sweep: every tuple opens (+delta at lo) and closes (-delta at
    hi); events sorted by (feature, position) and prefix-summed give the total
    on each cell between consecutive event positions. Returns aligned arrays
    ``(features, cell_lo, cell_hi, totals)`` sorted by (feature, cell_lo), so
    the first global argmax already realizes the lowest-feature / leftmost
    tie-break.
    """
    m = len(feat)
    if m == 0:
        return (np.empty(0, dtype=np.int64),) + (np.empty(0),) * 3
    ev_feat = np.repeat(feat, 2)
    ev_pos = np.empty(2 * m)
    ev_pos[0::2] = lo
    ev_pos[1::2] = hi
    ev_delta = np.empty(2 * m)
    ev_delta[0::2] = delta
    ev_delta[1::2] = -delta
    order = np.lexsort((ev_pos, ev_feat))
    f_s, p_s, d_s = ev_feat[order], ev_pos[order], ev_delta[order]

    # Deltas of one feature sum to zero, so the global prefix sum restarts at
    # each feature boundary up to float residue; rebase segments so one
    # feature's rounding cannot leak into the next.
    run = np.cumsum(d_s)
    seg_first = np.empty(2 * m, dtype=bool)
    seg_first[0] = True
    seg_first[1:] = f_s[1:] != f_s[:-1]
    seg_start = np.flatnonzero(seg_first)
    carried = np.where(seg_start > 0, run[seg_start - 1], 0.0)
    seg_len = np.diff(np.append(seg_start, 2 * m))
    run = run - np.repeat(carried, seg_len)

    # A cell starts at event i when i is the last event at its position.
    last_here = np.empty(2 * m, dtype=bool)
    last_here[-1] = True
    last_here[:-1] = (f_s[1:] != f_s[:-1]) | (p_s[1:] != p_s[:-1])
    idx = np.flatnonzero(last_here)

    next_feat = np.empty(2 * m, dtype=np.int64)
    next_feat[:-1] = f_s[1:]
    next_feat[-1] = -1
    next_pos = np.empty(2 * m)
    next_pos[:-1] = p_s[1:]
    next_pos[-1] = np.inf
    cell_hi = np.where(next_feat[idx] == f_s[idx], next_pos[idx], np.inf)

    return f_s[idx], p_s[idx], cell_hi, sign * run[idx]


def best_single_change(model: TreeEnsemble, x, sign: int = 1) -> BestChange:
    """Single-coordinate change maximizing ``sign * f``.

    Per-tree alternatives come from the kernel lane; merging across trees is a
    sweep over piecewise-constant margin deltas. The best objective wins, ties
    resolving to the lowest feature then the leftmost interval. When no change
    improves (best objective <= 0) the stay-put answer with delta 0 is
    returned.
    """
    x = as_instance(x, model.n_features)
    base = predict_margin(model, x)
    feat, lo, hi, delta, _visits = kernels.single_change_tuples(model.flat, x)
    cf, clo, chi, totals = _sweep_cells(feat, lo, hi, delta, sign)
    if len(totals) == 0:
        return BestChange(None, np.nan, np.nan, 0.0, base)
    best = int(np.argmax(totals))
    obj = float(totals[best])
    if obj <= 0.0:
        return BestChange(None, np.nan, np.nan, 0.0, base)
    return BestChange(int(cf[best]), float(clo[best]), float(chi[best]),
                      sign * obj, base + sign * obj)


def per_feature_best_gain(model: TreeEnsemble, x, sign: int = 1) -> dict[int, float]:
    """Best achievable ``sign * f`` increase per coordinate (floor 0)."""
    x = as_instance(x, model.n_features)
    feat, lo, hi, delta, _visits = kernels.single_change_tuples(model.flat, x)
    cf, _, _, totals = _sweep_cells(feat, lo, hi, delta, sign)
    out: dict[int, float] = {}
    for f, total in zip(cf, totals):
        if total > out.get(int(f), 0.0):
            out[int(f)] = float(total)
    return out


def brute_force_single_change(model: TreeEnsemble, x, sign: int = 1) -> BestChange:
    """Careful brute-force baseline for the single-change search.

    For every coordinate, re-predicts the model once per threshold-induced
    cell of that coordinate (batched). Same tie-breaking as
    :func:`best_single_change`; used for equivalence testing and as the
    speedup baseline.
    """
    from treevade.ensemble import collect_thresholds, predict_margin_batch

    x = as_instance(x, model.n_features)
    base = predict_margin(model, x)
    thresholds = collect_thresholds(model)

    candidates: list[np.ndarray] = []
    meta: list[tuple[int, float, float]] = []
    for f, taus in thresholds.items():
        edges = [-np.inf] + list(taus) + [np.inf]
        for i in range(len(taus) + 1):
            cell_lo, cell_hi = edges[i], edges[i + 1]
            if cell_lo <= x[f] < cell_hi:
                continue
            if np.isneginf(cell_lo):
                probe = cell_hi - 1.0
            elif np.isposinf(cell_hi):
                probe = cell_lo + 1.0
            else:
                probe = (cell_lo + cell_hi) / 2.0
            row = x.copy()
            row[f] = probe
            candidates.append(row)
            meta.append((f, cell_lo, cell_hi))

    best = BestChange(None, np.nan, np.nan, 0.0, base)
    if not candidates:
        return best
    margins = predict_margin_batch(model, np.asarray(candidates))
    best_obj = 0.0
    for (f, cell_lo, cell_hi), margin in zip(meta, margins):
        obj = sign * (margin - base)
        if obj > best_obj:
            best_obj = obj
            best = BestChange(f, cell_lo, cell_hi, margin - base, margin)
    return best
