import numpy as np
import pytest

from treevade.ensemble import (
    Internal,
    Leaf,
    ModelFormatError,
    Predicate,
    TreeEnsemble,
    collect_thresholds,
    load_model,
    predict_label,
    predict_margin,
    save_model,
)

from conftest import make_toy
from oracles import naive_margin


def test_toy_margin(toy, toy_x):
    assert predict_margin(toy, toy_x) == -2.0


def test_empty_ensemble_predicts_zero():
    model = TreeEnsemble(trees=(), n_features=3)
    assert predict_margin(model, [1.0, 2.0, 3.0]) == 0.0


def test_single_leaf_is_constant():
    model = TreeEnsemble(trees=(Leaf(7.0),), n_features=2)
    for x in ([0.0, 0.0], [5.0, -3.0], [1e9, 1e-9]):
        assert predict_margin(model, x) == 7.0


def test_dimension_mismatch_rejected(toy):
    with pytest.raises(ValueError):
        predict_margin(toy, [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        predict_label(toy, [0.0])


def test_toy_labels(toy, toy_x):
    assert predict_label(toy, toy_x) == -1
    assert predict_label(toy, [3.0, 3.0]) == 1


def test_zero_margin_classifies_negative():
    model = TreeEnsemble(trees=(Leaf(0.0),), n_features=1)
    assert predict_label(model, [0.0]) == -1


def test_bias_added():
    model = TreeEnsemble(trees=(Leaf(1.0),), n_features=1, bias=-3.0)
    assert predict_margin(model, [0.0]) == -2.0


def test_value_at_threshold_takes_false_branch():
    # predicates are strict less-than: x == threshold fails the test
    model = TreeEnsemble(
        trees=(Internal(Predicate(0, 0.5), Leaf(-1.0), Leaf(1.0)),), n_features=1)
    assert predict_margin(model, [0.5]) == 1.0
    assert predict_margin(model, [np.nextafter(0.5, -1)]) == -1.0


def test_margin_matches_naive_recursion_on_random_models():
    from treevade.bench import random_ensemble

    rng = np.random.default_rng(123)
    for _ in range(50):
        model = random_ensemble(rng, n_trees=int(rng.integers(1, 8)),
                                max_depth=int(rng.integers(1, 5)),
                                n_features=int(rng.integers(2, 7)))
        x = rng.normal(size=model.n_features)
        assert predict_margin(model, x) == pytest.approx(naive_margin(model, x), abs=1e-12)


def test_prediction_path_unique(toy):
    # every probe lands in exactly one leaf: margins take only leaf-sum values
    rng = np.random.default_rng(0)
    values = {predict_margin(toy, rng.uniform(-5, 5, size=2)) for _ in range(200)}
    assert values <= {-2.0, 1.0, -1.0, 2.0}


def test_collect_thresholds_toy(toy):
    assert collect_thresholds(toy) == {0: [1.0, 2.0], 1: [1.0]}


def test_collect_thresholds_dedupes_across_trees():
    shared = Internal(Predicate(3, 0.5), Leaf(1.0), Leaf(-1.0))
    other = Internal(Predicate(3, 0.5), Leaf(2.0), Leaf(-2.0))
    model = TreeEnsemble(trees=(shared, other), n_features=4)
    assert collect_thresholds(model) == {3: [0.5]}


def test_collect_thresholds_leaf_only_model():
    model = TreeEnsemble(trees=(Leaf(1.0), Leaf(2.0)), n_features=3)
    assert collect_thresholds(model) == {}


def test_collect_thresholds_strictly_increasing():
    from treevade.bench import random_ensemble

    rng = np.random.default_rng(5)
    model = random_ensemble(rng, n_trees=6, max_depth=4, n_features=4)
    for taus in collect_thresholds(model).values():
        assert all(a < b for a, b in zip(taus, taus[1:]))


def test_feature_out_of_range_rejected():
    with pytest.raises(ValueError):
        TreeEnsemble(trees=(Internal(Predicate(5, 0.5), Leaf(0.0), Leaf(1.0)),),
                     n_features=3)


def test_native_json_round_trip(tmp_path, toy):
    path = tmp_path / "model.json"
    save_model(toy, path)
    loaded = load_model(path)
    assert loaded == make_toy()
    assert loaded.n_features == 2 and loaded.bias == 0.0


def test_native_json_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(path)
    path.write_text('{"trees": []}')
    with pytest.raises(ModelFormatError, match="n_features"):
        load_model(path)


XGB_DUMP = """\
booster[0]:
0:[f0<2] yes=1,no=2,missing=1
\t1:[f0<1] yes=3,no=4,missing=3
\t\t3:leaf=-2
\t\t4:leaf=1
\t2:[f1<1] yes=5,no=6,missing=5
\t\t5:leaf=-1
\t\t6:leaf=2
"""


def test_xgboost_dump_round_trips_toy(tmp_path, toy, toy_x):
    path = tmp_path / "dump.txt"
    path.write_text(XGB_DUMP)
    model = load_model(path, format="xgboost_dump")
    assert model.n_features == 2
    assert predict_margin(model, toy_x) == predict_margin(toy, toy_x)
    assert collect_thresholds(model) == collect_thresholds(toy)


def test_xgboost_single_leaf_dump(tmp_path):
    path = tmp_path / "leaf.txt"
    path.write_text("0:leaf=0.3\n")
    model = load_model(path, format="xgboost_dump", n_features=4)
    assert model.n_features == 4
    assert predict_margin(model, np.zeros(4)) == pytest.approx(0.3)


def test_xgboost_multi_feature_split_rejected(tmp_path):
    path = tmp_path / "oblique.txt"
    path.write_text("0:[f1<0.5||f2<0.3] yes=1,no=2\n1:leaf=1\n2:leaf=-1\n")
    with pytest.raises(ModelFormatError, match="unsupported"):
        load_model(path, format="xgboost_dump")


def test_xgboost_categorical_split_rejected(tmp_path):
    path = tmp_path / "cat.txt"
    path.write_text("0:[f3:{1,4}] yes=1,no=2\n1:leaf=1\n2:leaf=-1\n")
    with pytest.raises(ModelFormatError, match="line 1"):
        load_model(path, format="xgboost_dump")


def test_xgboost_missing_child_flagged(tmp_path):
    path = tmp_path / "dangling.txt"
    path.write_text("0:[f0<1] yes=1,no=2\n1:leaf=0.5\n")
    with pytest.raises(ModelFormatError, match="child"):
        load_model(path, format="xgboost_dump")


MULTI_TREE_DUMP = """\
booster[0]:
0:[f2<0.5] yes=1,no=2,missing=1
\t1:leaf=5.960464478e-08
\t2:[f0<0.707] yes=3,no=4,missing=3
\t\t3:leaf=-0.25
\t\t4:leaf=0.125
booster[1]:
0:leaf=-1.5e-01
"""


def test_xgboost_multi_tree_dump_with_scientific_notation(tmp_path):
    path = tmp_path / "multi.txt"
    path.write_text(MULTI_TREE_DUMP)
    model = load_model(path, format="xgboost_dump", bias=0.5)
    assert len(model.trees) == 2
    assert model.n_features == 3
    assert model.bias == 0.5
    # x2 < 0.5 -> first tree's tiny positive leaf; second tree constant
    assert predict_margin(model, [0.0, 0.0, 0.0]) == pytest.approx(
        0.5 + 5.960464478e-08 - 0.15)
    assert predict_margin(model, [1.0, 0.0, 1.0]) == pytest.approx(
        0.5 + 0.125 - 0.15)
    assert collect_thresholds(model) == {0: [0.707], 2: [0.5]}


def test_native_json_round_trips_bias(tmp_path):
    model = TreeEnsemble(
        trees=(Internal(Predicate(1, 0.25), Leaf(0.5), Leaf(-0.5)),),
        n_features=3, bias=-1.25)
    path = tmp_path / "biased.json"
    save_model(model, path)
    again = load_model(path)
    assert again.bias == -1.25
    assert again == model
