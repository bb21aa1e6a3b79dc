"""Both kernel lanes (compiled extension / pure Python) must agree exactly."""

import numpy as np
import pytest

from treevade._core import BACKEND, fallback
from treevade.bench import random_ensemble
from treevade.ensemble import flatten

from oracles import naive_margin

try:
    from treevade import _speedups
except ImportError:
    _speedups = None

LANES = [("python", fallback)] + ([("compiled", _speedups)] if _speedups else [])


def random_cases(seed, count):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        model = random_ensemble(rng, n_trees=int(rng.integers(1, 12)),
                                max_depth=int(rng.integers(1, 5)),
                                n_features=int(rng.integers(2, 9)))
        x = rng.random(model.n_features)
        yield rng, model, x


def test_backend_selected():
    assert BACKEND in ("compiled", "python")


@pytest.mark.parametrize("name,lane", LANES)
def test_margin_matches_naive(name, lane):
    for _rng, model, x in random_cases(seed=1, count=30):
        flat = flatten(model)
        assert lane.margin_one(flat, x) == pytest.approx(
            naive_margin(model, x), abs=1e-12)


@pytest.mark.skipif(_speedups is None, reason="compiled lane not built")
def test_lanes_agree_everywhere():
    for rng, model, x in random_cases(seed=2, count=40):
        flat = flatten(model)
        X = rng.random((23, model.n_features))
        assert _speedups.margin_one(flat, x) == fallback.margin_one(flat, x)
        np.testing.assert_array_equal(_speedups.margin_many(flat, X),
                                      fallback.margin_many(flat, X))
        np.testing.assert_array_equal(_speedups.leaf_values_at(flat, x),
                                      fallback.leaf_values_at(flat, x))
        a = _speedups.single_change_tuples(flat, x)
        b = fallback.single_change_tuples(flat, x)
        assert a[4] == b[4]  # identical node-visit counts
        for i in range(4):
            np.testing.assert_array_equal(a[i], b[i])
        lo = np.full(model.n_features, -np.inf)
        hi = np.full(model.n_features, np.inf)
        picks = rng.integers(0, model.n_features, size=2)
        for f in picks:
            lo[f] = rng.random() * 0.5
            hi[f] = lo[f] + rng.random() * 0.5
        fast = _speedups.tree_ranges(flat, lo, hi)
        slow = fallback.tree_ranges(flat, lo, hi)
        np.testing.assert_array_equal(fast[0], slow[0])
        np.testing.assert_array_equal(fast[1], slow[1])


@pytest.mark.parametrize("name,lane", LANES)
def test_tree_ranges_bracket_reachable_values(name, lane):
    # every probe inside the box lands on a leaf within [min, max]
    for rng, model, x in random_cases(seed=3, count=15):
        flat = flatten(model)
        lo = np.zeros(model.n_features)
        hi = np.ones(model.n_features) * 0.5
        mins, maxs = lane.tree_ranges(flat, lo, hi)
        for _ in range(20):
            probe = rng.uniform(0, 0.5, size=model.n_features)
            for t in range(flat.n_trees):
                from oracles import naive_leaf

                v = naive_leaf(model.trees[t], probe).prediction
                assert mins[t] - 1e-12 <= v <= maxs[t] + 1e-12


@pytest.mark.parametrize("name,lane", LANES)
def test_visits_bounded_by_internal_nodes(name, lane):
    for _rng, model, x in random_cases(seed=4, count=20):
        flat = flatten(model)
        n_internal = int((flat.feature >= 0).sum())
        visits = lane.single_change_tuples(flat, x)[4]
        assert visits <= n_internal
