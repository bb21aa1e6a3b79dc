"""Command-line interface.

Verbs: train, harden, evade, bench, satgen, export-lp. Models travel as
native JSON files; datasets as MNIST-style IDX file pairs (optionally
gzipped); instances as JSON arrays. All randomness flows from --seed.
"""

import argparse
import json
import os
import sys

import numpy as np

from treevade import bench as bench_mod
from treevade import satgen as satgen_mod
from treevade.boost import BoostConfig, Dataset, error_rate, train, train_adversarial
from treevade.ensemble import load_model, predict_margin, save_model
from treevade.evade import EvadeConfig, coordinate_descent_evade
from treevade.exact import SolveConfig, solve
from treevade.milp import DistanceSpec, build_program, export_lp


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--out", required=True)


def _load_dataset(data_dir: str, split: str, digits: str) -> Dataset:
    pos, neg = (int(d) for d in digits.split(","))
    names = {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }[split]
    paths = []
    for name in names:
        for candidate in (name, name + ".gz"):
            full = os.path.join(data_dir, candidate)
            if os.path.exists(full):
                paths.append(full)
                break
        else:
            raise FileNotFoundError(f"{data_dir}: missing {name}[.gz]")
    return bench_mod.load_mnist_subtask(paths[0], paths[1], pos, neg)


def _load_instance(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return np.asarray(json.load(fh), dtype=np.float64)


def _subsample(data: Dataset, size: int, seed: int) -> Dataset:
    if size <= 0 or size >= len(data):
        return data
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), size=size, replace=False)
    idx.sort()
    return Dataset(X=data.X[idx], y=data.y[idx])


def cmd_train(args) -> int:
    data = _load_dataset(args.data, "train", args.digits)
    data = _subsample(data, args.subsample, args.seed)
    cfg = BoostConfig(rounds=args.rounds, max_depth=args.depth,
                      learning_rate=args.eta)
    model = train(data, cfg)
    save_model(model, args.out)
    print(f"trained {len(model.trees)} trees; training error "
          f"{error_rate(model, data):.4f}")
    return 0


def cmd_harden(args) -> int:
    data = _load_dataset(args.data, "train", args.digits)
    data = _subsample(data, args.subsample, args.seed)
    cfg = BoostConfig(rounds=args.rounds, max_depth=args.depth,
                      learning_rate=args.eta, adversarial=True, budget=args.budget)
    model = train_adversarial(data, cfg)
    save_model(model, args.out)
    print(f"hardened model with {len(model.trees)} trees; training error "
          f"{error_rate(model, data):.4f}")
    return 0


def cmd_evade(args) -> int:
    model = load_model(args.model)
    x = _load_instance(args.instance)
    if args.solver == "approx":
        outcome, _ = coordinate_descent_evade(model, x, EvadeConfig(epsilon=args.epsilon))
    else:
        spec = DistanceSpec(metric=args.metric, epsilon=args.epsilon)
        prog = build_program(model, x, spec)
        outcome = solve(prog, model, x, SolveConfig(time_limit=args.time_limit))
    doc = {
        "status": outcome.status,
        "distance": None if np.isnan(outcome.distance) else outcome.distance,
        "margin_before": predict_margin(model, x),
        "margin_after": (None if outcome.x_prime is None
                         else predict_margin(model, outcome.x_prime)),
        "x_prime": None if outcome.x_prime is None else outcome.x_prime.tolist(),
        "nodes_expanded": outcome.nodes_expanded,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"{outcome.status}: distance {outcome.distance}")
    return 0


def cmd_bench(args) -> int:
    test = _load_dataset(args.data, "test", args.digits)
    models = {}
    for spec in args.model:
        name, _, path = spec.partition("=")
        if not path:
            name, path = os.path.splitext(os.path.basename(spec))[0], spec
        models[name] = load_model(path)
    eval_set = bench_mod.build_eval_set(list(models.values()), test, args.size)
    config = bench_mod.BenchConfig(
        time_limit=args.time_limit, epsilon=args.epsilon,
        jobs=int(os.environ.get("TREEVADE_THREADS", "1")))
    report = bench_mod.run_robustness(models, eval_set, args.metrics.split(","),
                                      solver=args.solver, config=config)
    bench_mod.verify_report(report, models, eval_set)
    bench_mod.emit_artifacts(report, args.out, eval_set)
    print(f"wrote artifacts to {args.out}")
    return 0


def cmd_satgen(args) -> int:
    formula = satgen_mod.load_dimacs(args.cnf)
    model = satgen_mod.reduce_to_ensemble(formula)
    save_model(model, args.out)
    print(f"{len(formula.clauses)} clauses over {formula.n_vars} vars "
          f"-> {len(model.trees)} trees")
    return 0


def cmd_export_lp(args) -> int:
    model = load_model(args.model)
    x = _load_instance(args.instance)
    spec = DistanceSpec(metric=args.metric, epsilon=args.epsilon)
    prog = build_program(model, x, spec)
    export_lp(prog, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treevade")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a boosted-tree model")
    p.add_argument("--data", required=True, help="directory with IDX files")
    p.add_argument("--digits", default="2,6")
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--subsample", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("harden", help="train with adversarial boosting")
    p.add_argument("--data", required=True)
    p.add_argument("--digits", default="2,6")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--subsample", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_harden)

    p = sub.add_parser("evade", help="evade a model on one instance")
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True, help="JSON array file")
    p.add_argument("--metric", default="l0", choices=bench_mod.METRIC_NAMES)
    p.add_argument("--solver", default="exact", choices=("exact", "approx"))
    p.add_argument("--time-limit", type=float, default=60.0)
    _add_common(p)
    p.set_defaults(func=cmd_evade)

    p = sub.add_parser("bench", help="robustness sweep over models and metrics")
    p.add_argument("--model", action="append", required=True,
                   help="model file, or name=path; repeatable")
    p.add_argument("--data", required=True)
    p.add_argument("--digits", default="2,6")
    p.add_argument("--metrics", default="l0")
    p.add_argument("--solver", default="exact", choices=("exact", "approx"))
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--time-limit", type=float, default=60.0)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("satgen", help="compile a DIMACS 3-CNF file to a model")
    p.add_argument("--cnf", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_satgen)

    p = sub.add_parser("export-lp", help="write the evasion program as an LP file")
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--metric", default="l0", choices=bench_mod.METRIC_NAMES)
    _add_common(p)
    p.set_defaults(func=cmd_export_lp)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
