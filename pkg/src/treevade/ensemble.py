"""Tree-ensemble model: representation, prediction and (de)serialization.

A model is a set of binary regression trees plus a bias. Internal nodes hold
single-feature threshold tests ``x[feature] < threshold``; leaves hold real
values. The ensemble margin is the bias plus the sum of the leaf values along
each tree's prediction path, and the label is ``+1`` iff the margin is
strictly positive.
"""

import json
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from treevade._core import kernels
from treevade._core.flat import FlatEnsemble


class ModelFormatError(ValueError):
    """A model file could not be parsed or uses an unsupported split form."""


@dataclass(frozen=True)
class Predicate:
    """The test ``x[feature] < threshold``; the only predicate form supported."""

    feature: int
    threshold: float


@dataclass(frozen=True)
class Leaf:
    prediction: float


@dataclass(frozen=True)
class Internal:
    predicate: Predicate
    true_child: "TreeNode"
    false_child: "TreeNode"


TreeNode = Union[Internal, Leaf]


@dataclass
class TreeEnsemble:
    """Sum-ensemble of regression trees. Treat as immutable once built."""

    trees: tuple
    n_features: int
    bias: float = 0.0
    _flat: FlatEnsemble = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.trees = tuple(self.trees)
        for root in self.trees:
            _check_features(root, self.n_features)

    @property
    def flat(self) -> FlatEnsemble:
        if self._flat is None:
            self._flat = flatten(self)
        return self._flat


def _check_features(node: TreeNode, n_features: int) -> None:
    if isinstance(node, Leaf):
        return
    p = node.predicate
    if not 0 <= p.feature < n_features:
        raise ValueError(
            f"predicate feature {p.feature} out of range for {n_features} features"
        )
    _check_features(node.true_child, n_features)
    _check_features(node.false_child, n_features)


def flatten(model: TreeEnsemble) -> FlatEnsemble:
    """Array layout of the ensemble for the traversal kernels.

    Nodes are numbered in preorder, trees in order; leaf ordering within a
    tree is therefore stable left-to-right.
    """
    feature: list[int] = []
    threshold: list[float] = []
    yes: list[int] = []
    no: list[int] = []
    value: list[float] = []
    roots: list[int] = []

    def add(node: TreeNode) -> int:
        idx = len(feature)
        if isinstance(node, Leaf):
            feature.append(-1)
            threshold.append(0.0)
            yes.append(-1)
            no.append(-1)
            value.append(float(node.prediction))
            return idx
        feature.append(node.predicate.feature)
        threshold.append(float(node.predicate.threshold))
        yes.append(-1)
        no.append(-1)
        value.append(0.0)
        yes[idx] = add(node.true_child)
        no[idx] = add(node.false_child)
        return idx

    for root in model.trees:
        roots.append(add(root))

    return FlatEnsemble(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        yes=np.asarray(yes, dtype=np.int32),
        no=np.asarray(no, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        root=np.asarray(roots, dtype=np.int32),
        n_features=model.n_features,
        bias=float(model.bias),
    )


def as_instance(x, n_features: int) -> np.ndarray:
    """Validate and convert ``x`` to a dense float64 vector of the right length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != n_features:
        raise ValueError(f"instance has shape {arr.shape}, expected ({n_features},)")
    return arr


def predict_margin(model: TreeEnsemble, x) -> float:
    """Signed margin f(x): bias plus the sum of per-tree leaf predictions."""
    arr = as_instance(x, model.n_features)
    return kernels.margin_one(model.flat, arr)


def predict_margin_batch(model: TreeEnsemble, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"batch has shape {X.shape}, expected (*, {model.n_features})")
    return kernels.margin_many(model.flat, X)


def predict_label(model: TreeEnsemble, x) -> int:
    """+1 iff the margin is strictly positive, else -1 (ties classify as -1)."""
    return 1 if predict_margin(model, x) > 0 else -1


def collect_thresholds(model: TreeEnsemble) -> dict[int, list[float]]:
    """Per-feature sorted unique thresholds over all predicates of the model.

    Predicates over the same (feature, threshold) pair collapse to one entry,
    so downstream encodings can share a single variable per distinct test.
    """
    seen: dict[int, set[float]] = {}

    def walk(node: TreeNode) -> None:
        if isinstance(node, Leaf):
            return
        seen.setdefault(node.predicate.feature, set()).add(float(node.predicate.threshold))
        walk(node.true_child)
        walk(node.false_child)

    for root in model.trees:
        walk(root)
    return {f: sorted(vals) for f, vals in sorted(seen.items())}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
#
# native_json schema:
#   {"n_features": int, "bias": float, "trees": [node, ...]}
#   node = {"feature": int, "threshold": float, "true": node, "false": node}
#        | {"leaf": float}


def _node_to_json(node: TreeNode):
    if isinstance(node, Leaf):
        return {"leaf": node.prediction}
    return {
        "feature": node.predicate.feature,
        "threshold": node.predicate.threshold,
        "true": _node_to_json(node.true_child),
        "false": _node_to_json(node.false_child),
    }


def _node_from_json(obj, where: str) -> TreeNode:
    if not isinstance(obj, dict):
        raise ModelFormatError(f"{where}: expected object, got {type(obj).__name__}")
    if "leaf" in obj:
        return Leaf(float(obj["leaf"]))
    try:
        pred = Predicate(int(obj["feature"]), float(obj["threshold"]))
        return Internal(
            pred,
            _node_from_json(obj["true"], where + ".true"),
            _node_from_json(obj["false"], where + ".false"),
        )
    except KeyError as exc:
        raise ModelFormatError(f"{where}: missing field {exc}") from exc


def save_model(model: TreeEnsemble, path) -> None:
    doc = {
        "n_features": model.n_features,
        "bias": model.bias,
        "trees": [_node_to_json(t) for t in model.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


# xgboost text dump lines:
#   "0:[f12<0.5] yes=1,no=2,missing=1"   internal node
#   "1:leaf=0.3"                          leaf
# Trees are separated by "booster[k]:" headers (absent for single-tree dumps).
_XGB_SPLIT = re.compile(
    r"^(\d+):\[f(\d+)<([-+0-9.eE]+)\]\s*yes=(\d+),no=(\d+)(?:,missing=(\d+))?\s*$"
)
_XGB_LEAF = re.compile(r"^(\d+):leaf=([-+0-9.eE]+)\s*$")
_XGB_BOOSTER = re.compile(r"^booster\[\d+\]:?\s*$")


def _parse_xgb_tree(records: dict, line_of: dict) -> TreeNode:
    def build(node_id: int) -> TreeNode:
        kind, payload = records[node_id]
        if kind == "leaf":
            return Leaf(payload)
        feature, threshold, yes_id, no_id = payload
        for child in (yes_id, no_id):
            if child not in records:
                raise ModelFormatError(
                    f"line {line_of[node_id]}: node {node_id} references missing child {child}"
                )
        return Internal(Predicate(feature, threshold), build(yes_id), build(no_id))

    if 0 not in records:
        raise ModelFormatError("tree dump has no root node 0")
    return build(0)


def _load_xgboost_dump(path, n_features, bias) -> TreeEnsemble:
    trees: list[TreeNode] = []
    records: dict = {}
    line_of: dict = {}
    max_feature = -1

    def flush():
        if records:
            trees.append(_parse_xgb_tree(records, line_of))
            records.clear()
            line_of.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if _XGB_BOOSTER.match(line):
                flush()
                continue
            m = _XGB_SPLIT.match(line)
            if m:
                node_id = int(m.group(1))
                feature = int(m.group(2))
                max_feature = max(max_feature, feature)
                records[node_id] = (
                    "split",
                    (feature, float(m.group(3)), int(m.group(4)), int(m.group(5))),
                )
                line_of[node_id] = lineno
                continue
            m = _XGB_LEAF.match(line)
            if m:
                node_id = int(m.group(1))
                records[node_id] = ("leaf", float(m.group(2)))
                line_of[node_id] = lineno
                continue
            raise ModelFormatError(
                f"line {lineno}: unsupported node form {line!r} "
                "(only single-feature splits '[fK<T]' and 'leaf=V' are accepted)"
            )
    flush()
    if n_features is None:
        n_features = max_feature + 1 if max_feature >= 0 else 1
    return TreeEnsemble(trees=tuple(trees), n_features=n_features, bias=bias)


def load_model(path, format: str = "native_json", n_features: int | None = None,
               bias: float = 0.0) -> TreeEnsemble:
    """Load a model file.

    ``native_json`` round-trips :func:`save_model` output. ``xgboost_dump``
    reads the plain-text dump format; text dumps carry no feature count or
    base score, so ``n_features`` (default: max referenced index + 1) and
    ``bias`` (default 0) can be supplied.
    """
    if format == "native_json":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"{path}: invalid JSON ({exc})") from exc
        for key in ("n_features", "trees"):
            if key not in doc:
                raise ModelFormatError(f"{path}: missing field {key!r}")
        trees = tuple(
            _node_from_json(t, f"trees[{i}]") for i, t in enumerate(doc["trees"])
        )
        return TreeEnsemble(
            trees=trees,
            n_features=int(doc["n_features"]),
            bias=float(doc.get("bias", 0.0)),
        )
    if format == "xgboost_dump":
        return _load_xgboost_dump(path, n_features, bias)
    raise ValueError(f"unknown model format {format!r}")
