"""Benchmark harness: data loading, evaluation sets, robustness sweeps, artifacts.

The sweep computes, per (model, metric, instance), a minimal-evasion outcome
(exact branch-and-bound, warm-started by the greedy attack, or the greedy
attack alone), summarizes distances by quartiles, and for coordinate-count
runs tallies how often each feature gets modified. Artifacts are plain CSV,
JSON and binary PGM images so no plotting stack is required.
"""

import gzip
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from treevade.boost import Dataset
from treevade.ensemble import Internal, Leaf, Predicate, TreeEnsemble, predict_margin_batch
from treevade.evade import EvadeConfig, coordinate_descent_evade
from treevade.exact import FAILED, EvasionOutcome, SolveConfig, solve
from treevade.milp import DistanceSpec, build_program

METRIC_NAMES = ("l0", "l1", "l2", "linf")


# ---------------------------------------------------------------------------
# IDX image/label files
# ---------------------------------------------------------------------------

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


def _open_maybe_gzip(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"{path}: truncated file (wanted {count} bytes, got {len(data)})")
    return data


def read_idx_images(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path))
        if magic != _IMAGE_MAGIC:
            raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{_IMAGE_MAGIC:08x}")
        raw = _read_exact(fh, n * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != _LABEL_MAGIC:
            raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{_LABEL_MAGIC:08x}")
        raw = _read_exact(fh, n, path)
    return np.frombuffer(raw, dtype=np.uint8)


def load_mnist_subtask(images_path, labels_path, digit_pos: int, digit_neg: int) -> Dataset:
    """Two-digit subtask: pixels scaled to [0, 1], labels pos -> +1, neg -> -1."""
    if digit_pos == digit_neg:
        raise ValueError("positive and negative digits must differ")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError(
            f"image/label count mismatch: {len(images)} images, {len(labels)} labels")
    keep = (labels == digit_pos) | (labels == digit_neg)
    X = images[keep].astype(np.float64) / 255.0
    y = np.where(labels[keep] == digit_pos, 1, -1)
    return Dataset(X=X, y=y)


# ---------------------------------------------------------------------------
# Evaluation set and model zoo
# ---------------------------------------------------------------------------


def build_eval_set(models, test: Dataset, size: int) -> Dataset:
    """First ``size`` test instances (in test order) that every model gets right."""
    ok = np.ones(len(test), dtype=bool)
    for model in models:
        margins = predict_margin_batch(model, test.X)
        predicted = np.where(margins > 0, 1, -1)
        ok &= predicted == test.y
    idx = np.flatnonzero(ok)[:size]
    if len(idx) < size:
        raise ValueError(
            f"only {len(idx)} test instances are correctly classified by all models, "
            f"need {size}")
    return Dataset(X=test.X[idx].copy(), y=test.y[idx].copy())


def random_ensemble(rng: np.random.Generator, n_trees: int, max_depth: int,
                    n_features: int, leaf_scale: float = 1.0) -> TreeEnsemble:
    """Seeded random model for zoos and oracle corpora; thresholds in [0, 1]."""

    def grow(depth: int):
        if depth >= max_depth or (depth > 0 and rng.random() < 0.25):
            return Leaf(float(rng.normal(scale=leaf_scale)))
        pred = Predicate(int(rng.integers(n_features)), float(rng.random()))
        return Internal(pred, grow(depth + 1), grow(depth + 1))

    trees = []
    for _ in range(n_trees):
        tree = grow(0)
        if isinstance(tree, Leaf):  # keep every tree non-trivial
            tree = Internal(
                Predicate(int(rng.integers(n_features)), float(rng.random())),
                Leaf(float(rng.normal(scale=leaf_scale))),
                Leaf(float(rng.normal(scale=leaf_scale))),
            )
        trees.append(tree)
    return TreeEnsemble(trees=tuple(trees), n_features=n_features)


# ---------------------------------------------------------------------------
# Robustness sweep
# ---------------------------------------------------------------------------


@dataclass
class BenchConfig:
    time_limit: float = 60.0
    epsilon: float = 1e-4
    jobs: int = 1
    warm_start: bool = True
    cd_max_iter: int = 1000


@dataclass
class OutcomeRecord:
    instance_id: int
    outcome: EvasionOutcome


@dataclass
class MetricResult:
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    frequency: Optional[np.ndarray] = None  # fraction of runs touching each feature

    def distances(self) -> np.ndarray:
        return np.array([r.outcome.distance for r in self.records
                         if r.outcome.x_prime is not None])


@dataclass
class RobustnessReport:
    results: dict = field(default_factory=dict)  # (model name, metric) -> MetricResult
    n_features: int = 0


def summarize(distances: np.ndarray) -> dict:
    if len(distances) == 0:
        return {"count": 0}
    return {
        "count": int(len(distances)),
        "min": float(distances.min()),
        "q25": float(np.percentile(distances, 25)),
        "median": float(np.percentile(distances, 50)),
        "q75": float(np.percentile(distances, 75)),
        "max": float(distances.max()),
    }


def _evade_one(model: TreeEnsemble, x, metric: str, solver: str,
               config: BenchConfig) -> EvasionOutcome:
    spec = DistanceSpec(metric=metric, epsilon=config.epsilon)
    if solver == "approx":
        outcome, _ = coordinate_descent_evade(
            model, x, EvadeConfig(max_iter=config.cd_max_iter, epsilon=config.epsilon))
        return outcome
    warm = None
    if config.warm_start and metric == "l0":
        cd_outcome, _ = coordinate_descent_evade(
            model, x, EvadeConfig(max_iter=config.cd_max_iter, epsilon=config.epsilon))
        if cd_outcome.x_prime is not None:
            warm = cd_outcome.x_prime
    prog = build_program(model, x, spec)
    return solve(prog, model, x, SolveConfig(time_limit=config.time_limit, warm_start=warm))


def run_robustness(models: dict, eval_set: Dataset, metrics, solver: str = "exact",
                   config: Optional[BenchConfig] = None) -> RobustnessReport:
    """One evasion outcome per model x metric x instance.

    ``solver='approx'`` is only defined for the coordinate-count metric.
    Per-instance failures are recorded (status ``failed``), not fatal. The
    sweep may run on threads; records are assembled in instance order so the
    report is independent of completion order.
    """
    config = config or BenchConfig()
    metrics = list(metrics)
    for metric in metrics:
        if metric not in METRIC_NAMES:
            raise ValueError(f"unknown metric {metric!r}")
        if solver == "approx" and metric != "l0":
            raise ValueError("the approximate solver only minimizes the l0 metric")
    if solver not in ("exact", "approx"):
        raise ValueError(f"unknown solver {solver!r}")

    report = RobustnessReport(n_features=eval_set.n_features)
    for name, model in models.items():
        for metric in metrics:
            result = MetricResult()

            def work(i: int) -> EvasionOutcome:
                try:
                    return _evade_one(model, eval_set.X[i], metric, solver, config)
                except ValueError:
                    return EvasionOutcome(None, np.nan, FAILED)

            indices = range(len(eval_set))
            if config.jobs > 1:
                with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                    outcomes = list(pool.map(work, indices))
            else:
                outcomes = [work(i) for i in indices]
            for i, outcome in zip(indices, outcomes):
                result.records.append(OutcomeRecord(instance_id=i, outcome=outcome))

            result.summary = summarize(result.distances())
            if metric == "l0":
                freq = np.zeros(eval_set.n_features)
                n_ok = 0
                for rec in result.records:
                    if rec.outcome.x_prime is None:
                        continue
                    n_ok += 1
                    freq += rec.outcome.x_prime != eval_set.X[rec.instance_id]
                result.frequency = freq / max(n_ok, 1)
            report.results[(name, metric)] = result
    return report


def verify_report(report: RobustnessReport, models: dict, eval_set: Dataset) -> None:
    """Re-check every reported evasion and summary statistic; raises on failure."""
    for (name, metric), result in report.results.items():
        model = models[name]
        for rec in result.records:
            out = rec.outcome
            if out.x_prime is None:
                continue
            x = eval_set.X[rec.instance_id]
            if not out.mislabels(model, x):
                raise AssertionError(
                    f"{name}/{metric}/instance {rec.instance_id}: "
                    "reported instance does not change the prediction")
        if summarize(result.distances()) != result.summary:
            raise AssertionError(f"{name}/{metric}: stored summary is stale")


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _format_float(v: float) -> str:
    return "nan" if np.isnan(v) else repr(float(v))


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) grayscale image, one byte per pixel."""
    h, w = image.shape
    data = np.clip(np.round(image), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def emit_artifacts(report: RobustnessReport, out_dir, eval_set: Optional[Dataset] = None,
                   images: bool = True) -> None:
    """Write outcomes.csv, summary.json and PGM images under ``out_dir``.

    outcomes.csv columns: model, metric, instance_id, distance, status,
    wall_time. Emission is a pure function of the report, so re-emitting the
    same report is byte-identical. Feature-frequency maps (darker = modified
    more often) and original/evaded image pairs are written when the feature
    count is a perfect square.
    """
    os.makedirs(out_dir, exist_ok=True)
    side = int(np.sqrt(report.n_features))
    square = side * side == report.n_features

    # failed attempts (no evading instance) stay in the report object but get
    # no CSV row, so the row count is models x metrics x instances - failures
    rows = ["model,metric,instance_id,distance,status,wall_time"]
    for (name, metric) in sorted(report.results):
        result = report.results[(name, metric)]
        for rec in result.records:
            out = rec.outcome
            if out.x_prime is None:
                continue
            rows.append(
                f"{name},{metric},{rec.instance_id},{_format_float(out.distance)},"
                f"{out.status},{_format_float(out.wall_time)}"
            )
    with open(os.path.join(out_dir, "outcomes.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")

    summary = {}
    for (name, metric), result in sorted(report.results.items()):
        summary.setdefault(name, {})[metric] = result.summary
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if not square:
        return
    for (name, metric), result in sorted(report.results.items()):
        if result.frequency is None:
            continue
        peak = result.frequency.max()
        scale = result.frequency / peak if peak > 0 else result.frequency
        write_pgm(os.path.join(out_dir, f"importance_{name}_{metric}.pgm"),
                  (255.0 * (1.0 - scale)).reshape(side, side))
    if images and eval_set is not None:
        for (name, metric), result in sorted(report.results.items()):
            for rec in result.records:
                if rec.outcome.x_prime is None:
                    continue
                x = eval_set.X[rec.instance_id]
                pair = {
                    f"evasion_{name}_{metric}_{rec.instance_id}_orig.pgm": x,
                    f"evasion_{name}_{metric}_{rec.instance_id}_evaded.pgm":
                        rec.outcome.x_prime,
                }
                for fname, vec in pair.items():
                    write_pgm(os.path.join(out_dir, fname),
                              (255.0 * np.clip(vec, 0, 1)).reshape(side, side))
