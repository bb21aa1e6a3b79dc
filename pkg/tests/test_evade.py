import numpy as np
import pytest

from treevade.bench import random_ensemble
from treevade.ensemble import Leaf, TreeEnsemble, predict_label, predict_margin
from treevade.evade import EvadeConfig, budgeted_adversarial, coordinate_descent_evade
from treevade.exact import brute_force_oracle
from treevade.milp import DistanceSpec


def test_toy_one_step(toy, toy_x):
    outcome, trace = coordinate_descent_evade(toy, toy_x)
    assert outcome.status == "feasible_with_bound"
    assert outcome.distance == 1.0
    assert len(trace.steps) == 1
    assert trace.changed_features == {0}
    assert outcome.x_prime[0] >= 2.0 and outcome.x_prime[1] == 3.0
    assert predict_margin(toy, outcome.x_prime) == 2.0
    assert predict_label(toy, outcome.x_prime) != predict_label(toy, toy_x)


def test_positive_instance_descends_other_way(toy):
    x = np.array([3.0, 3.0])  # margin +2
    outcome, trace = coordinate_descent_evade(toy, x)
    assert outcome.status == "feasible_with_bound"
    assert predict_margin(toy, outcome.x_prime) <= 0.0


def test_constant_model_stalls():
    model = TreeEnsemble(trees=(Leaf(-1.0),), n_features=2)
    outcome, trace = coordinate_descent_evade(model, np.zeros(2))
    assert outcome.status == "failed"
    assert outcome.x_prime is None
    assert trace.steps == []


def test_zero_margin_rejected(tmp_path):
    model = TreeEnsemble(trees=(Leaf(0.0),), n_features=1)
    with pytest.raises(ValueError, match="zero"):
        coordinate_descent_evade(model, np.zeros(1))


def test_max_iter_failure():
    rng = np.random.default_rng(5)
    model = random_ensemble(rng, n_trees=10, max_depth=4, n_features=6)
    x = rng.random(6)
    outcome, _ = coordinate_descent_evade(model, x, EvadeConfig(max_iter=0))
    assert outcome.status == "failed"


def test_margins_strictly_progress():
    rng = np.random.default_rng(42)
    for _ in range(25):
        model = random_ensemble(rng, n_trees=int(rng.integers(2, 10)),
                                max_depth=3, n_features=5)
        x = rng.random(5)
        before = predict_margin(model, x)
        if before == 0.0:
            continue
        sign = 1 if before < 0 else -1
        outcome, trace = coordinate_descent_evade(model, x)
        margins = [before] + [m for (_, _, _, m) in trace.steps]
        assert all(sign * a < sign * b for a, b in zip(margins, margins[1:]))


def test_descent_count_upper_bounds_exact_optimum():
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 30:
        model = random_ensemble(rng, n_trees=int(rng.integers(1, 6)),
                                max_depth=3, n_features=5)
        x = rng.random(5)
        if predict_margin(model, x) == 0.0:
            continue
        cd, _ = coordinate_descent_evade(model, x)
        exact = brute_force_oracle(model, x, DistanceSpec(metric="l0"))
        if cd.status != "feasible_with_bound" or exact.status != "optimal":
            continue
        checked += 1
        assert cd.distance >= exact.distance


def test_budget_respected():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = random_ensemble(rng, n_trees=int(rng.integers(2, 12)),
                                max_depth=4, n_features=8)
        x = rng.random(8)
        y = 1 if predict_margin(model, x) > 0 else -1
        for budget in (1, 2, 4):
            x_star = budgeted_adversarial(model, x, y, budget)
            assert int((x_star != x).sum()) <= budget


def test_budgeted_minimizes_signed_margin(toy, toy_x):
    # label -1 at (0, 3): minimizing y*f means pushing f upward
    x_star = budgeted_adversarial(toy, toy_x, -1, 1)
    assert x_star[0] >= 2.0 and x_star[1] == 3.0
    assert -1 * predict_margin(toy, x_star) == -2.0


def test_budgeted_large_budget_flips_sign(toy, toy_x):
    x_star = budgeted_adversarial(toy, toy_x, -1, 2)
    assert -1 * predict_margin(toy, x_star) < 0


def test_budgeted_degenerate_on_constant_model():
    model = TreeEnsemble(trees=(Leaf(1.0),), n_features=3)
    x = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(budgeted_adversarial(model, x, 1, 4), x)


def test_budget_validation(toy, toy_x):
    with pytest.raises(ValueError, match="budget"):
        budgeted_adversarial(toy, toy_x, -1, 0)
    with pytest.raises(ValueError, match="label"):
        budgeted_adversarial(toy, toy_x, 0, 1)


def test_budgeted_never_worse_than_start():
    rng = np.random.default_rng(12)
    for _ in range(20):
        model = random_ensemble(rng, n_trees=5, max_depth=3, n_features=5)
        x = rng.random(5)
        y = 1 if predict_margin(model, x) > 0 else -1
        x_star = budgeted_adversarial(model, x, y, 3)
        assert y * predict_margin(model, x_star) <= y * predict_margin(model, x) + 1e-12
