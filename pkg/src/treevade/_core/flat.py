"""Flat array layout shared by the compiled and pure-Python kernels.

Trees are stored as parallel arrays over all nodes of the ensemble.
``feature[i] == -1`` marks a leaf; otherwise node ``i`` tests
``x[feature[i]] < threshold[i]`` and continues to ``yes[i]`` (test true)
or ``no[i]`` (test false).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class FlatEnsemble:
    feature: np.ndarray  # int32[n_nodes], -1 for leaves
    threshold: np.ndarray  # float64[n_nodes]
    yes: np.ndarray  # int32[n_nodes], child when predicate true
    no: np.ndarray  # int32[n_nodes], child when predicate false
    value: np.ndarray  # float64[n_nodes], leaf predictions (0 elsewhere)
    root: np.ndarray  # int32[n_trees], index of each tree root
    n_features: int
    bias: float

    @property
    def n_trees(self) -> int:
        return len(self.root)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)
