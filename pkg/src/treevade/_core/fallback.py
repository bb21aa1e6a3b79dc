"""Pure-Python/numpy kernels, used when the compiled extension is absent.

Function signatures mirror ``treevade._speedups`` exactly; tests assert the two
lanes agree bit-for-bit on random inputs.
"""

import numpy as np

from treevade._core.flat import FlatEnsemble


def margin_one(flat: FlatEnsemble, x: np.ndarray) -> float:
    """Ensemble margin (bias + sum of per-tree leaf values) for one instance."""
    feature, threshold = flat.feature, flat.threshold
    yes, no, value = flat.yes, flat.no, flat.value
    total = flat.bias
    for node in flat.root:
        f = feature[node]
        while f >= 0:
            node = yes[node] if x[f] < threshold[node] else no[node]
            f = feature[node]
        total += value[node]
    return float(total)


def margin_many(flat: FlatEnsemble, X: np.ndarray) -> np.ndarray:
    """Margins for a batch of instances, vectorized over rows per tree level."""
    n = X.shape[0]
    out = np.full(n, flat.bias, dtype=np.float64)
    feature, threshold = flat.feature, flat.threshold
    yes, no, value = flat.yes, flat.no, flat.value
    rows = np.arange(n)
    for root in flat.root:
        node = np.full(n, root, dtype=np.int32)
        active = feature[node] >= 0
        while active.any():
            idx = node[active]
            f = feature[idx]
            go_yes = X[rows[active], f] < threshold[idx]
            node[active] = np.where(go_yes, yes[idx], no[idx])
            active = feature[node] >= 0
        out += value[node]
    return out


def leaf_values_at(flat: FlatEnsemble, x: np.ndarray) -> np.ndarray:
    """Per-tree leaf prediction reached by ``x`` (no bias)."""
    feature, threshold = flat.feature, flat.threshold
    yes, no, value = flat.yes, flat.no, flat.value
    out = np.empty(flat.n_trees, dtype=np.float64)
    for t, node in enumerate(flat.root):
        f = feature[node]
        while f >= 0:
            node = yes[node] if x[f] < threshold[node] else no[node]
            f = feature[node]
        out[t] = value[node]
    return out


def single_change_tuples(flat: FlatEnsemble, x: np.ndarray):
    """All (feature, interval, margin delta) reachable by changing one coordinate.

    Performs a depth-first walk of every tree, narrowing per-feature admissible
    intervals and backtracking with undo, so each node is visited at most once.
    A branch is abandoned as soon as it would require two coordinates of ``x``
    to move, or pins some coordinate to an empty interval.

    Returns ``(feat, lo, hi, delta, visits)`` where the first four are aligned
    arrays (one entry per reachable changed leaf, interval right-open) and
    ``visits`` counts internal-node visits across all trees.
    """
    feature, threshold = flat.feature, flat.threshold
    yes, no, value = flat.yes, flat.no, flat.value
    d = flat.n_features
    lo = np.full(d, -np.inf)
    hi = np.full(d, np.inf)

    out_feat: list[int] = []
    out_lo: list[float] = []
    out_hi: list[float] = []
    out_delta: list[float] = []
    visits = 0

    for root in flat.root:
        base_leaf = root
        f = feature[base_leaf]
        while f >= 0:
            base_leaf = yes[base_leaf] if x[f] < threshold[base_leaf] else no[base_leaf]
            f = feature[base_leaf]
        base_value = value[base_leaf]

        # Iterative DFS; each stack entry mutates the lo/hi box on entry and
        # restores it on exit. changed = feature forced away from x, or -1.
        stack = [(root, -1, 0.0, 0.0, -1, False)]
        # (node, narrowed_feature, old_lo, old_hi, changed, needs_undo)
        results_delta = out_delta
        while stack:
            node, nf, old_lo, old_hi, changed, entered = stack.pop()
            if entered:
                lo[nf] = old_lo
                hi[nf] = old_hi
                continue
            if nf >= 0:
                # Apply the narrowing for this branch and schedule the undo.
                stack.append((node, nf, lo[nf], hi[nf], changed, True))
                if old_lo > lo[nf]:
                    lo[nf] = old_lo
                if old_hi < hi[nf]:
                    hi[nf] = old_hi
            f = feature[node]
            if f < 0:
                if changed >= 0:
                    out_feat.append(changed)
                    out_lo.append(lo[changed])
                    out_hi.append(hi[changed])
                    results_delta.append(value[node] - base_value)
                continue
            visits += 1
            tau = threshold[node]
            xf = x[f]
            # False branch pushed first so the true branch pops first,
            # giving left-to-right leaf order (matches the compiled lane).
            new_lo = max(lo[f], tau)
            if new_lo < hi[f]:
                inside = new_lo <= xf < hi[f]
                if inside:
                    stack.append((no[node], f, new_lo, hi[f], changed, False))
                elif changed in (-1, f):
                    stack.append((no[node], f, new_lo, hi[f], f, False))
            # True branch: x'_f in [lo_f, min(hi_f, tau))
            new_hi = min(hi[f], tau)
            if lo[f] < new_hi:
                inside = lo[f] <= xf < new_hi
                if inside:
                    stack.append((yes[node], f, lo[f], new_hi, changed, False))
                elif changed in (-1, f):
                    stack.append((yes[node], f, lo[f], new_hi, f, False))

    return (
        np.asarray(out_feat, dtype=np.int64),
        np.asarray(out_lo, dtype=np.float64),
        np.asarray(out_hi, dtype=np.float64),
        np.asarray(out_delta, dtype=np.float64),
        visits,
    )


def tree_range(flat: FlatEnsemble, tree: int, lo: np.ndarray, hi: np.ndarray):
    """Min/max leaf value of one tree reachable inside the box [lo, hi)."""
    feature, threshold = flat.feature, flat.threshold
    yes, no, value = flat.yes, flat.no, flat.value
    mn = np.inf
    mx = -np.inf
    stack = [flat.root[tree]]
    while stack:
        node = stack.pop()
        f = feature[node]
        if f < 0:
            v = value[node]
            if v < mn:
                mn = v
            if v > mx:
                mx = v
            continue
        tau = threshold[node]
        if lo[f] < tau:
            stack.append(yes[node])
        if hi[f] > tau:
            stack.append(no[node])
    return mn, mx


def tree_ranges(flat: FlatEnsemble, lo: np.ndarray, hi: np.ndarray):
    """Reachable [min, max] leaf value per tree inside the box [lo, hi)."""
    mins = np.empty(flat.n_trees, dtype=np.float64)
    maxs = np.empty(flat.n_trees, dtype=np.float64)
    for t in range(flat.n_trees):
        mins[t], maxs[t] = tree_range(flat, t, lo, hi)
    return mins, maxs
