"""Solver-independent description of a linear or mixed-binary program."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

INF = math.inf


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class MalformedProgram(ValueError):
    pass


class SolverLimitError(RuntimeError):
    """A solve stopped on an iteration or node limit."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class Constraint:
    coeffs: dict
    sense: str
    rhs: float
    name: str = ""


@dataclass
class LinearProgram:
    """Variables with bounds, a linear objective and linear constraints.

    Variables are referred to by the integer index returned from
    :meth:`add_var`. ``sense`` is ``"min"`` or ``"max"``.
    """

    sense: str = "min"
    names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    binary: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective_constant: float = 0.0

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def binaries(self) -> list:
        return [j for j, b in enumerate(self.binary) if b]

    @property
    def is_mip(self) -> bool:
        return any(self.binary)

    def add_var(self, name: str = "", lb: float = 0.0, ub: float = INF,
                binary: bool = False, cost: float = 0.0) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        j = len(self.names)
        self.names.append(name or f"x{j}")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        if cost:
            self.objective[j] = self.objective.get(j, 0.0) + float(cost)
        return j

    def add_constraint(self, coeffs: dict, sense: str, rhs: float, name: str = "") -> int:
        if sense == "==":
            sense = "="
        if sense not in ("<=", ">=", "="):
            raise MalformedProgram(f"unknown relation {sense!r}")
        clean = {}
        for j, a in coeffs.items():
            if a != 0.0:
                clean[j] = clean.get(j, 0.0) + float(a)
        self.constraints.append(Constraint(clean, sense, float(rhs), name))
        return len(self.constraints) - 1

    def set_objective(self, coeffs: dict, constant: float = 0.0) -> None:
        self.objective = {j: float(a) for j, a in coeffs.items() if a != 0.0}
        self.objective_constant = float(constant)

    def copy(self) -> "LinearProgram":
        return LinearProgram(self.sense, list(self.names), list(self.lb), list(self.ub),
                             list(self.binary), dict(self.objective),
                             list(self.constraints), self.objective_constant)

    def validate(self) -> None:
        n = self.n_vars
        if self.sense not in ("min", "max"):
            raise MalformedProgram(f"unknown objective sense {self.sense!r}")
        for j in range(n):
            lo, hi = self.lb[j], self.ub[j]
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise MalformedProgram(f"variable {self.names[j]}: bounds [{lo}, {hi}]")
            if self.binary[j] and (lo < 0 or hi > 1):
                raise MalformedProgram(f"binary {self.names[j]} with bounds [{lo}, {hi}]")
        for j, a in self.objective.items():
            if not 0 <= j < n:
                raise MalformedProgram(f"objective references unknown variable {j}")
            if not math.isfinite(a):
                raise MalformedProgram(f"objective coefficient of {self.names[j]} is {a}")
        for i, con in enumerate(self.constraints):
            if not math.isfinite(con.rhs):
                raise MalformedProgram(f"constraint {con.name or i}: rhs {con.rhs}")
            for j, a in con.coeffs.items():
                if not (isinstance(j, (int, np.integer)) and 0 <= j < n):
                    raise MalformedProgram(f"constraint {con.name or i} references unknown variable {j!r}")
                if not math.isfinite(a):
                    raise MalformedProgram(f"constraint {con.name or i}: coefficient {a}")

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, a in self.objective.items():
            c[j] = a
        return c

    def matrix(self, dense: bool = True):
        rows, cols, vals = [], [], []
        for i, con in enumerate(self.constraints):
            for j, a in con.coeffs.items():
                rows.append(i)
                cols.append(j)
                vals.append(a)
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_constraints, self.n_vars))
        return A.toarray() if dense else A

    def row_bounds(self):
        """Each constraint as ``lo <= a x <= hi``."""
        lo = np.empty(self.n_constraints)
        hi = np.empty(self.n_constraints)
        for i, con in enumerate(self.constraints):
            lo[i] = con.rhs if con.sense in (">=", "=") else -INF
            hi[i] = con.rhs if con.sense in ("<=", "=") else INF
        return lo, hi

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.cost_vector() @ x) + self.objective_constant

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.n_vars:
            worst = max(worst, float(np.max(np.maximum(np.array(self.lb) - x, 0.0))),
                        float(np.max(np.maximum(x - np.array(self.ub), 0.0))))
        if self.n_constraints:
            ax = self.matrix(dense=False) @ x
            lo, hi = self.row_bounds()
            worst = max(worst, float(np.max(np.maximum(lo - ax, 0.0))),
                        float(np.max(np.maximum(ax - hi, 0.0))))
        return worst

    def dump(self) -> str:
        """Human-readable text form, one constraint per line."""

        def term(a, j):
            return f"{'+' if a >= 0 else '-'} {abs(a):.12g} {self.names[j]}"

        def expr(coeffs):
            return " ".join(term(a, j) for j, a in sorted(coeffs.items())) or "0"

        out = [f"{'maximize' if self.sense == 'max' else 'minimize'}",
               f"  obj: {expr(self.objective)}"
               + (f" + {self.objective_constant:.12g}" if self.objective_constant else ""),
               "subject to"]
        for i, con in enumerate(self.constraints):
            out.append(f"  {con.name or f'c{i}'}: {expr(con.coeffs)} {con.sense} {con.rhs:.12g}")
        out.append("bounds")
        for j, name in enumerate(self.names):
            out.append(f"  {self.lb[j]:.12g} <= {name} <= {self.ub[j]:.12g}")
        if self.is_mip:
            out.append("binary")
            out.append("  " + " ".join(self.names[j] for j in self.binaries))
        out.append("end")
        return "\n".join(out) + "\n"


@dataclass
class SolveResult:
    status: Status
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0
    nodes: int = 0
    bound: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def __getitem__(self, j: int) -> float:
        return float(self.x[j])
