import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from treevade.ensemble import Internal, Leaf, Predicate, TreeEnsemble


def make_toy() -> TreeEnsemble:
    """Two-feature reference tree used throughout.

    root: x0 < 2; true child: x0 < 1 with leaves -2 | 1;
    false child: x1 < 1 with leaves -1 | 2.
    """
    return TreeEnsemble(
        trees=(
            Internal(
                Predicate(0, 2.0),
                Internal(Predicate(0, 1.0), Leaf(-2.0), Leaf(1.0)),
                Internal(Predicate(1, 1.0), Leaf(-1.0), Leaf(2.0)),
            ),
        ),
        n_features=2,
    )


@pytest.fixture
def toy() -> TreeEnsemble:
    return make_toy()


@pytest.fixture
def toy_x() -> np.ndarray:
    return np.array([0.0, 3.0])


def random_formula(rng: np.random.Generator, max_vars: int = 20, max_clauses: int = 40):
    from treevade.satgen import CnfFormula

    n = int(rng.integers(4, max_vars + 1))
    m = int(rng.integers(1, max_clauses + 1))
    clauses = []
    for _ in range(m):
        variables = rng.choice(n, size=3, replace=False) + 1
        signs = rng.choice([-1, 1], size=3)
        clauses.append(tuple(int(v * s) for v, s in zip(variables, signs)))
    return CnfFormula(n_vars=n, clauses=tuple(clauses))


def mnist_dir():
    """Directory holding the standard IDX files, or None if unavailable."""
    import os

    for candidate in (os.environ.get("MNIST_DIR"), "data/mnist",
                      str(Path(__file__).parent.parent / "data" / "mnist")):
        if not candidate:
            continue
        path = Path(candidate)
        found = all(
            (path / name).exists() or (path / (name + ".gz")).exists()
            for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
        )
        if found:
            return path
    return None


requires_mnist = pytest.mark.skipif(
    mnist_dir() is None,
    reason="MNIST IDX files not found (set MNIST_DIR or place them under data/mnist)",
)
