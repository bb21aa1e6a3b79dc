"""Evasion and hardening toolkit for sum-ensembles of regression trees."""

from treevade._core import BACKEND as KERNEL_BACKEND
from treevade.ensemble import (
    Internal,
    Leaf,
    Predicate,
    TreeEnsemble,
    collect_thresholds,
    load_model,
    predict_label,
    predict_margin,
    save_model,
)
from treevade.milp import ConstraintGroup, DistanceSpec, build_program, export_lp
from treevade.exact import EvasionOutcome, SolveConfig, brute_force_oracle, solve
from treevade.symbolic import SymbolicInstance, best_single_change, symbolic_predict
from treevade.evade import budgeted_adversarial, coordinate_descent_evade
from treevade.boost import BoostConfig, Dataset, train, train_adversarial
from treevade.satgen import CnfFormula, load_dimacs, reduce_to_ensemble

__all__ = [
    "KERNEL_BACKEND",
    "Predicate", "Leaf", "Internal", "TreeEnsemble",
    "predict_margin", "predict_label", "load_model", "save_model",
    "collect_thresholds",
    "DistanceSpec", "ConstraintGroup", "build_program", "export_lp",
    "EvasionOutcome", "SolveConfig", "solve", "brute_force_oracle",
    "SymbolicInstance", "symbolic_predict", "best_single_change",
    "coordinate_descent_evade", "budgeted_adversarial",
    "BoostConfig", "Dataset", "train", "train_adversarial",
    "CnfFormula", "reduce_to_ensemble", "load_dimacs",
]
