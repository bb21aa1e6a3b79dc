"""Gradient-boosted trees for binary classification, plus adversarial boosting.

The trainer is deliberately small: logistic loss, greedy variance-reduction
splits on the running residuals with candidate thresholds at midpoints of
consecutive distinct feature values, and second-order (Newton) leaf weights

    leaf value = -sum(g) / sum(h),  g = -y * sigmoid(-y * F),  h = p * (1 - p)

scaled by the learning rate. No row/column subsampling and no explicit
regularization beyond depth, learning rate and the leaf-size/gain floors.

Adversarial boosting doubles every round's training set with freshly
generated budget-limited adversarial instances against the current model and
fits the round's tree on the union; adversarial instances are regenerated
each round, never accumulated.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from treevade._core import kernels
from treevade.ensemble import Internal, Leaf, Predicate, TreeEnsemble, TreeNode
from treevade.evade import EvadeConfig, budgeted_adversarial


@dataclass
class Dataset:
    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) values in {-1, +1}

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, d) and y (n,) with matching n")
        if not np.isin(self.y, (-1, 1)).all():
            raise ValueError("labels must be -1 or +1")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class BoostConfig:
    rounds: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    adversarial: bool = False
    budget: Optional[int] = None  # default: ceil(sqrt(2) * side) for square images
    min_split_gain: float = 1e-12
    min_leaf_count: int = 1
    # Per-instance cap on greedy descent steps while generating adversarial
    # instances. Free re-modification of already-moved coordinates makes the
    # uncapped walk arbitrarily long; the generator returns the best iterate
    # seen, so a cap only truncates, never invalidates. None: max(2*budget, 16).
    adv_max_iter: Optional[int] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.adversarial and self.budget is not None and self.budget < 1:
            raise ValueError("budget must be >= 1")


def default_budget(n_features: int) -> int:
    """Diagonal-length budget for square images; sqrt(n) otherwise."""
    side = math.isqrt(n_features)
    if side * side == n_features:
        return math.ceil(math.sqrt(2.0) * side)
    return max(1, math.ceil(math.sqrt(n_features)))


class _Binning:
    """Per-feature distinct values and integer codes for histogram splits."""

    MAX_BINS = 4096

    def __init__(self, X: np.ndarray):
        self.values = [np.unique(X[:, j]) for j in range(X.shape[1])]
        self.max_bins = max((len(v) for v in self.values), default=0)
        self.histogram_ok = self.max_bins <= self.MAX_BINS
        if self.histogram_ok:
            self.codes = np.empty(X.shape, dtype=np.int32)
            for j, vals in enumerate(self.values):
                self.codes[:, j] = np.searchsorted(vals, X[:, j])


def _best_split_histogram(X, r, rows, binning: _Binning, min_leaf: int):
    """Best (gain, feature, threshold) on ``rows`` via per-bin aggregation.

    Gain is the decrease in residual sum of squares: SL^2/nL + SR^2/nR - S^2/n.
    Thresholds are midpoints between consecutive distinct values present in
    the node.
    """
    n = len(rows)
    if n < 2 * min_leaf:
        return 0.0, -1, 0.0
    r_node = r[rows]
    total = float(r_node.sum())
    base = total * total / n

    d = X.shape[1]
    n_bins = binning.max_bins
    best_gain, best_feature, best_threshold = 0.0, -1, 0.0
    chunk = max(1, (1 << 22) // max(n, 1))  # cap transient arrays at a few MB
    for j0 in range(0, d, chunk):
        j1 = min(j0 + chunk, d)
        width = j1 - j0
        codes = binning.codes[np.ix_(rows, np.arange(j0, j1))].astype(np.int64)
        codes += np.arange(width, dtype=np.int64) * n_bins
        flat = codes.ravel()
        counts = np.bincount(flat, minlength=width * n_bins).reshape(width, n_bins)
        sums = np.bincount(flat, weights=np.repeat(r_node, width),
                           minlength=width * n_bins).reshape(width, n_bins)

        # Candidate cuts sit after a value present in the node with rows on
        # both sides; evaluating them over the whole (feature, bin) grid keeps
        # the scan vectorized. Gain is the residual-sum-of-squares decrease.
        cum_n = counts.cumsum(axis=1)
        cum_s = sums.cumsum(axis=1)
        valid = (counts > 0) & (cum_n >= min_leaf) & (n - cum_n >= min_leaf) \
            & (cum_n < n)
        if not valid.any():
            continue
        left = np.maximum(cum_n, 1)
        right = np.maximum(n - cum_n, 1)
        gains = np.where(valid, cum_s**2 / left + (total - cum_s) ** 2 / right - base,
                         -np.inf)
        flat_best = int(np.argmax(gains))
        jj, b = divmod(flat_best, n_bins)
        if gains[jj, b] > best_gain:
            j = j0 + jj
            vals = binning.values[j]
            nb = b + 1 + int(np.argmax(counts[jj, b + 1:] > 0))
            best_gain = float(gains[jj, b])
            best_feature = j
            best_threshold = float((vals[b] + vals[nb]) / 2.0)
    return best_gain, best_feature, best_threshold


def _best_split_sort(X, r, rows, min_leaf: int):
    """Exact split search by per-node sorting; used above the bin cap."""
    n = len(rows)
    if n < 2 * min_leaf:
        return 0.0, -1, 0.0
    r_node = r[rows]
    total = float(r_node.sum())
    base = total * total / n
    best_gain, best_feature, best_threshold = 0.0, -1, 0.0
    for j in range(X.shape[1]):
        v = X[rows, j]
        order = np.argsort(v, kind="stable")
        vs, rs = v[order], r_node[order]
        boundary = np.flatnonzero(vs[1:] != vs[:-1]) + 1
        if len(boundary) == 0:
            continue
        cum = np.cumsum(rs)
        nL = boundary
        ok = (nL >= min_leaf) & (n - nL >= min_leaf)
        if not ok.any():
            continue
        sL = cum[boundary - 1]
        gains = np.where(ok, sL**2 / nL + (total - sL) ** 2 / (n - nL) - base, -np.inf)
        k = int(np.argmax(gains))
        if gains[k] > best_gain:
            best_gain = float(gains[k])
            best_feature = j
            best_threshold = float((vs[boundary[k] - 1] + vs[boundary[k]]) / 2.0)
    return best_gain, best_feature, best_threshold


def _fit_tree(X, g, h, cfg: BoostConfig, binning: _Binning) -> Optional[TreeNode]:
    """One regression tree on the negative gradient; None if the root won't split."""
    r = -g

    def leaf(rows) -> Leaf:
        # Newton step -sum(g)/sum(h), clipped for near-saturated nodes.
        denom = max(float(h[rows].sum()), 1e-6)
        raw = float(np.clip(-float(g[rows].sum()) / denom, -50.0, 50.0))
        return Leaf(cfg.learning_rate * raw)

    def grow(rows, depth: int) -> TreeNode:
        if depth >= cfg.max_depth:
            return leaf(rows)
        if binning.histogram_ok:
            gain, feature, threshold = _best_split_histogram(
                X, r, rows, binning, cfg.min_leaf_count)
        else:
            gain, feature, threshold = _best_split_sort(X, r, rows, cfg.min_leaf_count)
        if feature < 0 or gain <= cfg.min_split_gain:
            return leaf(rows)
        mask = X[rows, feature] < threshold
        return Internal(
            Predicate(feature, threshold),
            grow(rows[mask], depth + 1),
            grow(rows[~mask], depth + 1),
        )

    root = grow(np.arange(len(X)), 0)
    return None if isinstance(root, Leaf) else root


def _prior_bias(y: np.ndarray) -> float:
    p = np.clip((y > 0).mean(), 1e-6, 1 - 1e-6)
    return float(np.log(p / (1 - p)))


def _gradients(y: np.ndarray, margins: np.ndarray):
    # Logistic loss on {-1, +1} labels: g = -y * sigmoid(-y F), h = s(1 - s).
    z = y * margins
    s = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
    g = -y * s
    h = s * (1.0 - s)
    return g, h


def train(data: Dataset, cfg: BoostConfig) -> TreeEnsemble:
    """Plain gradient boosting. Degenerate data yields a bias-only model."""
    bias = _prior_bias(data.y)
    trees: list[TreeNode] = []
    margins = np.full(len(data), bias)
    binning = _Binning(data.X)
    y = data.y.astype(np.float64)
    for _ in range(cfg.rounds):
        g, h = _gradients(y, margins)
        root = _fit_tree(data.X, g, h, cfg, binning)
        if root is None:
            break
        trees.append(root)
        single = TreeEnsemble(trees=(root,), n_features=data.n_features, bias=0.0)
        margins += kernels.margin_many(single.flat, data.X)
    return TreeEnsemble(trees=tuple(trees), n_features=data.n_features, bias=bias)


def train_adversarial(data: Dataset, cfg: BoostConfig,
                      round_hook: Optional[Callable] = None) -> TreeEnsemble:
    """Adversarial boosting.

    Every round generates one budget-limited adversarial instance per
    *original* training instance against the current model, fits the round's
    tree on originals plus that fresh batch (labels copied), and discards the
    batch. ``round_hook(round_index, adversarial_dataset)`` is called per
    round when given, for instrumentation.
    """
    if not cfg.adversarial:
        raise ValueError("config does not enable adversarial training")
    budget = cfg.budget if cfg.budget is not None else default_budget(data.n_features)
    if budget < 1:
        raise ValueError("budget must be >= 1")

    bias = _prior_bias(data.y)
    trees: list[TreeNode] = []
    y = data.y.astype(np.float64)
    max_iter = cfg.adv_max_iter if cfg.adv_max_iter is not None else max(2 * budget, 16)
    evade_cfg = EvadeConfig(max_iter=max_iter)

    for round_index in range(cfg.rounds):
        model = TreeEnsemble(trees=tuple(trees), n_features=data.n_features, bias=bias)
        X_adv = np.empty_like(data.X)
        for i in range(len(data)):
            X_adv[i] = budgeted_adversarial(
                model, data.X[i], int(data.y[i]), budget, evade_cfg)
        adv = Dataset(X=X_adv, y=data.y.copy())
        if round_hook is not None:
            round_hook(round_index, adv)

        X_round = np.vstack([data.X, adv.X])
        y_round = np.concatenate([y, y])
        margins = kernels.margin_many(model.flat, X_round)
        g, h = _gradients(y_round, margins)
        binning = _Binning(X_round)
        root = _fit_tree(X_round, g, h, cfg, binning)
        if root is None:
            continue
        trees.append(root)
    return TreeEnsemble(trees=tuple(trees), n_features=data.n_features, bias=bias)


def error_rate(model: TreeEnsemble, data: Dataset) -> float:
    margins = kernels.margin_many(model.flat, data.X)
    predicted = np.where(margins > 0, 1, -1)
    return float((predicted != data.y).mean())
