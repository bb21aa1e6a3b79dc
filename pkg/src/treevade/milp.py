"""Reduction of minimal-evasion search to a mixed-integer linear program.

For a model f, an instance x and a distance choice, the program has one binary
variable per distinct predicate (shared across trees), one [0,1]-continuous
variable per leaf, chain constraints making same-feature predicates logically
consistent, per-tree constraints tying active leaves to predicate states, a
mislabel constraint forcing the margin across zero, and an objective over the
predicate variables whose value at any feasible point equals the deformation
cost of the cell the predicates select.

The builder is solver-agnostic: programs can be exported as CPLEX-LP text for
an external solver, or handed to :mod:`treevade.exact` which searches the same
cell space directly.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from treevade import intervals
from treevade.ensemble import (
    Internal,
    Leaf,
    TreeEnsemble,
    as_instance,
    collect_thresholds,
    predict_margin,
)

METRICS = ("l0", "l1", "l2", "linf")


@dataclass(frozen=True)
class DistanceSpec:
    """Which deformation cost to minimize.

    ``l0_weights`` makes the coordinate count non-uniform (cost ``alpha_k``
    for moving coordinate k). ``epsilon`` is the guard value standing in for
    the unattainable infimum at right-open cell borders.
    """

    metric: str = "l0"
    l0_weights: Optional[np.ndarray] = None
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.l0_weights is not None:
            if self.metric != "l0":
                raise ValueError("l0_weights only apply to the l0 metric")
            w = np.asarray(self.l0_weights, dtype=np.float64)
            if (w < 0).any():
                raise ValueError("l0 weights must be non-negative")
            object.__setattr__(self, "l0_weights", w)

    @property
    def rho(self) -> int:
        """Cost exponent; the linf metric prices cells with rho=1 distances."""
        return {"l0": 0, "l1": 1, "l2": 2, "linf": 1}[self.metric]


@dataclass(frozen=True)
class MilpVar:
    name: str
    kind: str  # binary_p | continuous_l | continuous_b
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple  # ((coefficient, MilpVar), ...)
    relation: str  # "<=" | "=" | ">="
    rhs: float


@dataclass(frozen=True)
class ConstraintGroup:
    """Extra linear constraint over predicate variables, e.g. one-hot groups.

    Terms reference predicate variables as (feature, rank) with rank indexing
    that feature's sorted thresholds. ``exactly_one_of`` builds the classic
    mutual-exclusivity constraint for K binary features (exactly one feature
    non-zero <=> exactly one predicate "x_k < tau" false).
    """

    terms: tuple  # ((coefficient, (feature, rank)), ...)
    relation: str
    rhs: float

    @staticmethod
    def exactly_one_of(features: Sequence[int]) -> "ConstraintGroup":
        terms = tuple((1.0, (f, 0)) for f in features)
        return ConstraintGroup(terms=terms, relation="=", rhs=len(features) - 1)


@dataclass
class MilpProgram:
    vars: tuple
    constraints: tuple
    objective_terms: tuple  # ((coefficient, MilpVar), ...)
    objective_constant: float
    thresholds: dict  # feature -> tuple of sorted thresholds
    spec: DistanceSpec
    mislabel_sign: int  # +1: require f(x') >= 0; -1: require f(x') <= 0
    n_features: int
    p_vars: dict = field(repr=False)  # (feature, rank) -> MilpVar
    l_vars: dict = field(repr=False)  # (tree, leaf index) -> MilpVar
    b_var: Optional[MilpVar] = None
    extra: tuple = ()  # ConstraintGroup list, kept for the direct solver

    def objective_value(self, valuation: dict) -> float:
        """Objective at a {var name: 0/1} valuation of the predicate vars."""
        total = self.objective_constant
        for coef, var in self.objective_terms:
            if var.kind == "binary_p":
                total += coef * valuation[var.name]
        return total


def objective_weights(x_k: float, thresholds: Sequence[float], rho: int,
                      epsilon: float) -> tuple[np.ndarray, float]:
    """Objective coefficients for one feature's predicate chain.

    Returns ``(weights, constant)`` where ``weights[r]`` multiplies the
    variable of threshold ``thresholds[r]`` and the constant absorbs the
    always-true/always-false convention terms. For any consistent valuation
    selecting cell i, ``sum(weights[p == 1]) + constant`` equals the infimum
    deformation cost of moving ``x_k`` into that cell (cost 0 for the cell
    containing ``x_k``; exact left borders; ``epsilon``-guarded right borders).

    The defining equations are triangular (each adds one more variable), so
    the weights fall out by backward differences of the per-cell costs.
    """
    taus = list(thresholds)
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("thresholds must be strictly increasing")
    costs = intervals.cell_costs(x_k, taus, rho, epsilon)
    weights = costs[:-1] - costs[1:]
    return weights, float(costs[-1])


def feature_cell_costs(x: np.ndarray, feature: int, taus, spec: DistanceSpec) -> np.ndarray:
    costs = intervals.cell_costs(x[feature], taus, spec.rho, spec.epsilon)
    if spec.metric == "l0" and spec.l0_weights is not None:
        costs = costs * spec.l0_weights[feature]
    return costs


def _tree_leaves(node) -> list:
    if isinstance(node, Leaf):
        return [node]
    return _tree_leaves(node.true_child) + _tree_leaves(node.false_child)


def build_program(model: TreeEnsemble, x, d: DistanceSpec,
                  extra: Sequence[ConstraintGroup] = ()) -> MilpProgram:
    """Build the full program for (model, x, d).

    Requires a non-empty model and a non-zero margin at x (otherwise the
    required mislabel direction is ambiguous).
    """
    x = as_instance(x, model.n_features)
    if not model.trees:
        raise ValueError("cannot build a program for an ensemble with no trees")
    margin = predict_margin(model, x)
    if margin == 0.0:
        raise ValueError("margin at x is exactly zero; mislabel direction is ambiguous")
    mislabel_sign = 1 if margin < 0 else -1

    thresholds = {f: tuple(ts) for f, ts in collect_thresholds(model).items()}

    p_vars: dict = {}
    for f, taus in thresholds.items():
        for r in range(len(taus)):
            p_vars[(f, r)] = MilpVar(name=f"p_{f}_{r}", kind="binary_p")

    l_vars: dict = {}
    leaf_index: dict = {}  # id(Leaf) -> var, per tree walk below
    for t, root in enumerate(model.trees):
        for i, leaf in enumerate(_tree_leaves(root)):
            var = MilpVar(name=f"l_{t}_{i}", kind="continuous_l")
            l_vars[(t, i)] = var
            leaf_index[(t, id(leaf))] = var

    constraints: list[LinearConstraint] = []

    # Predicate consistency: within a feature, x' < tau_r implies x' < tau_{r+1}.
    for f, taus in thresholds.items():
        for r in range(len(taus) - 1):
            constraints.append(LinearConstraint(
                terms=((1.0, p_vars[(f, r)]), (-1.0, p_vars[(f, r + 1)])),
                relation="<=",
                rhs=0.0,
            ))

    # Leaves consistency, per tree: exclusion, root equalities, and one
    # sandwich pair per non-root internal node.
    for t, root in enumerate(model.trees):
        tree_leaf_vars = [l_vars[(t, i)] for i in range(len(_tree_leaves(root)))]
        constraints.append(LinearConstraint(
            terms=tuple((1.0, v) for v in tree_leaf_vars),
            relation="=",
            rhs=1.0,
        ))

        def emit(node, is_root: bool) -> None:
            if isinstance(node, Leaf):
                return
            p = p_vars[(node.predicate.feature, thresholds[node.predicate.feature].index(node.predicate.threshold))]
            true_leaves = [leaf_index[(t, id(l))] for l in _tree_leaves(node.true_child)]
            false_leaves = [leaf_index[(t, id(l))] for l in _tree_leaves(node.false_child)]
            if is_root:
                # sum(true leaves) = p and p + sum(false leaves) = 1
                constraints.append(LinearConstraint(
                    terms=tuple((1.0, v) for v in true_leaves) + ((-1.0, p),),
                    relation="=",
                    rhs=0.0,
                ))
                constraints.append(LinearConstraint(
                    terms=((1.0, p),) + tuple((1.0, v) for v in false_leaves),
                    relation="=",
                    rhs=1.0,
                ))
            else:
                # sum(true leaves) <= p <= 1 - sum(false leaves)
                constraints.append(LinearConstraint(
                    terms=tuple((1.0, v) for v in true_leaves) + ((-1.0, p),),
                    relation="<=",
                    rhs=0.0,
                ))
                constraints.append(LinearConstraint(
                    terms=((1.0, p),) + tuple((1.0, v) for v in false_leaves),
                    relation="<=",
                    rhs=1.0,
                ))
            emit(node.true_child, False)
            emit(node.false_child, False)

        emit(root, True)

    # Model mislabel: sum of leaf values (bias folded to the rhs) crosses zero.
    mislabel_terms = []
    for t, root in enumerate(model.trees):
        for i, leaf in enumerate(_tree_leaves(root)):
            mislabel_terms.append((float(leaf.prediction), l_vars[(t, i)]))
    constraints.append(LinearConstraint(
        terms=tuple(mislabel_terms),
        relation=">=" if mislabel_sign > 0 else "<=",
        rhs=-model.bias + 0.0,  # +0.0 normalizes -0.0
    ))

    # Objective.
    objective_terms: list = []
    objective_constant = 0.0
    b_var = None
    if d.metric == "linf":
        b_var = MilpVar(name="b", kind="continuous_b", lo=0.0, hi=np.inf)
        for f in range(model.n_features):
            taus = thresholds.get(f, ())
            terms: list = []
            const = 0.0
            if taus:
                weights, const = objective_weights(x[f], taus, 1, d.epsilon)
                terms = [(float(w), p_vars[(f, r)]) for r, w in enumerate(weights) if w != 0.0]
            constraints.append(LinearConstraint(
                terms=tuple(terms) + ((-1.0, b_var),),
                relation="<=",
                rhs=-const,
            ))
        objective_terms.append((1.0, b_var))
    else:
        for f, taus in thresholds.items():
            costs = feature_cell_costs(x, f, taus, d)
            weights = costs[:-1] - costs[1:]
            objective_constant += float(costs[-1])
            for r, w in enumerate(weights):
                if w != 0.0:
                    objective_terms.append((float(w), p_vars[(f, r)]))

    # Caller-supplied constraint groups over predicate variables.
    resolved_extra = []
    for group in extra:
        terms = []
        for coef, ref in group.terms:
            if ref not in p_vars:
                raise ValueError(f"constraint group references unknown predicate {ref}")
            terms.append((float(coef), p_vars[ref]))
        constraints.append(LinearConstraint(
            terms=tuple(terms), relation=group.relation, rhs=float(group.rhs)
        ))
        resolved_extra.append(group)

    all_vars = tuple(p_vars[k] for k in sorted(p_vars)) \
        + tuple(l_vars[k] for k in sorted(l_vars)) \
        + ((b_var,) if b_var is not None else ())

    return MilpProgram(
        vars=all_vars,
        constraints=tuple(constraints),
        objective_terms=tuple(objective_terms),
        objective_constant=objective_constant,
        thresholds=thresholds,
        spec=d,
        mislabel_sign=mislabel_sign,
        n_features=model.n_features,
        p_vars=p_vars,
        l_vars=l_vars,
        b_var=b_var,
        extra=tuple(resolved_extra),
    )


def decode_solution(prog: MilpProgram, valuation: dict, x) -> np.ndarray:
    """Concrete instance x' from a feasible predicate valuation.

    For each feature the predicate values select a cell; x' keeps ``x_k``
    where the cell allows it and otherwise takes the cell border nearest
    ``x_k`` (epsilon-guarded at right-open ends).
    """
    x = as_instance(x, prog.n_features)
    x_prime = x.copy()
    for f, taus in prog.thresholds.items():
        values = []
        for r in range(len(taus)):
            name = prog.p_vars[(f, r)].name
            if name not in valuation:
                raise ValueError(f"valuation is missing variable {name}")
            v = float(valuation[name])
            if abs(v - round(v)) > 1e-6 or round(v) not in (0, 1):
                raise ValueError(f"variable {name} has non-binary value {v}")
            values.append(int(round(v)))
        for a, b in zip(values, values[1:]):
            if a > b:
                raise ValueError(
                    f"inconsistent predicate chain on feature {f}: {values}"
                )
        cell = values.count(0)
        lo, hi = intervals.cell_bounds(taus, cell)
        x_prime[f] = intervals.representative(x[f], lo, hi, prog.spec.epsilon)
    return x_prime


def _num(v: float) -> str:
    return repr(float(v))


def _format_terms(terms) -> str:
    parts = []
    for coef, var in terms:
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_num(abs(coef))} {var.name}")
    return " ".join(parts)


def export_lp(prog: MilpProgram, path) -> None:
    """Write the program as CPLEX-LP text.

    Output is a pure function of the program: variables are emitted feature-
    then-rank, tree-then-leaf, constraints in build order, so re-exporting
    produces identical bytes.
    """
    lines = ["Minimize"]
    obj = _format_terms(prog.objective_terms)
    if prog.objective_constant != 0.0 or not obj:
        const = prog.objective_constant
        obj = (obj + " " if obj else "") + ("- " if const < 0 else "+ ") + _num(abs(const))
    lines.append(f" obj: {obj}".rstrip())
    lines.append("Subject To")
    for i, con in enumerate(prog.constraints):
        rel = {"<=": "<=", "=": "=", ">=": ">="}[con.relation]
        lines.append(f" c{i}: {_format_terms(con.terms)} {rel} {_num(con.rhs)}")
    lines.append("Bounds")
    for var in prog.vars:
        if var.kind == "continuous_l":
            lines.append(f" 0 <= {var.name} <= 1")
        elif var.kind == "continuous_b":
            lines.append(f" {var.name} >= 0")
    lines.append("Binaries")
    binaries = " ".join(v.name for v in prog.vars if v.kind == "binary_p")
    lines.append(f" {binaries}".rstrip())
    lines.append("End")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
