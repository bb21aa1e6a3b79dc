"""3-SAT to tree-ensemble reduction, used as a hardness test-case generator.

Each clause becomes one depth-3 regression tree over predicates at threshold
0.5 (coordinate > 0.5 encodes "variable true"). Exactly one root-to-leaf path
corresponds to the clause being false; its leaf predicts minus the number of
clauses, every other leaf predicts 1. The resulting ensemble has a positive
margin somewhere iff the formula is satisfiable: a satisfying assignment
scores +(number of clauses), any other assignment scores at most -1.
"""

from dataclasses import dataclass

from treevade.ensemble import Internal, Leaf, Predicate, TreeEnsemble, TreeNode


@dataclass(frozen=True)
class CnfFormula:
    """3-CNF formula; clauses hold DIMACS-signed, 1-based literals."""

    n_vars: int
    clauses: tuple

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(tuple(c) for c in self.clauses))
        for clause in self.clauses:
            if len(clause) != 3:
                raise ValueError(f"clause {clause} does not have exactly 3 literals")
            for lit in clause:
                if lit == 0 or abs(lit) > self.n_vars:
                    raise ValueError(f"literal {lit} out of range for {self.n_vars} vars")


def reduce_to_ensemble(formula: CnfFormula) -> TreeEnsemble:
    """Build the clause-per-tree ensemble described above."""
    m = len(formula.clauses)
    false_value = float(-m)

    def clause_tree(clause) -> TreeNode:
        # Build bottom-up along the all-literals-false path.
        node: TreeNode = Leaf(false_value)
        for lit in reversed(clause):
            pred = Predicate(abs(lit) - 1, 0.5)
            if lit > 0:
                # Positive literal is false iff x < 0.5: falseness continues
                # on the true branch of the predicate.
                node = Internal(pred, true_child=node, false_child=Leaf(1.0))
            else:
                node = Internal(pred, true_child=Leaf(1.0), false_child=node)
        return node

    return TreeEnsemble(
        trees=tuple(clause_tree(c) for c in formula.clauses),
        n_features=formula.n_vars,
        bias=0.0,
    )


def load_dimacs(path) -> CnfFormula:
    """Parse a DIMACS CNF file with 3-literal clauses.

    Comments ('c' lines) are skipped, the 'p cnf' header is respected, and
    clauses may span lines (each terminated by 0).
    """
    n_vars = None
    clauses: list[tuple[int, ...]] = []
    pending: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("c"):
                continue
            if line.startswith("p"):
                parts = line.split()
                if len(parts) != 4 or parts[1] != "cnf":
                    raise ValueError(f"line {lineno}: malformed header {line!r}")
                n_vars = int(parts[2])
                continue
            if n_vars is None:
                raise ValueError(f"line {lineno}: clause before 'p cnf' header")
            for tok in line.split():
                lit = int(tok)
                if lit == 0:
                    if len(pending) != 3:
                        raise ValueError(
                            f"line {lineno}: clause of size {len(pending)}, expected 3"
                        )
                    clauses.append(tuple(pending))
                    pending.clear()
                else:
                    pending.append(lit)
    if pending:
        raise ValueError("unterminated clause at end of file")
    if n_vars is None:
        raise ValueError("missing 'p cnf' header")
    return CnfFormula(n_vars=n_vars, clauses=tuple(clauses))
