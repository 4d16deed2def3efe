"""LP/MILP solving behind a small backend interface.

``"embedded"`` is the in-package simplex and branch and bound, ``"highs"``
delegates to scipy's HiGHS and ``"auto"`` picks HiGHS for programs above
:data:`AUTO_SIZE` (rows x columns) or with many binaries.
"""
from __future__ import annotations

from .branch import branch_and_bound
from .highs import highs_lp, highs_milp
from .program import (Constraint, LinearProgram, MalformedProgram, SolveResult,
                      SolverLimitError, Status)
from .simplex import check_program, simplex

__all__ = [
    "Constraint", "LinearProgram", "MalformedProgram", "SolveResult", "SolverLimitError",
    "Status",
    "solve", "solve_lp", "solve_milp", "BACKENDS",
]

BACKENDS = ("embedded", "highs", "auto")
AUTO_SIZE = 60_000
AUTO_BINARIES = 16


def solve_lp(lp: LinearProgram, backend: str = "embedded") -> SolveResult:
    check_program(lp)
    if _pick(lp, backend) == "highs":
        return highs_lp(lp)
    return simplex(lp)


def solve_milp(lp: LinearProgram, gap_tol: float = 1e-9, node_limit: int = 100_000,
               backend: str = "embedded") -> SolveResult:
    if _pick(lp, backend) == "highs":
        return highs_milp(lp, gap_tol=gap_tol, node_limit=node_limit)
    return branch_and_bound(lp, gap_tol=gap_tol, node_limit=node_limit)


def solve(lp: LinearProgram, backend: str = "auto", **kw) -> SolveResult:
    """Dispatch to :func:`solve_milp` or :func:`solve_lp` depending on binaries."""
    if lp.is_mip:
        return solve_milp(lp, backend=backend, **kw)
    return solve_lp(lp, backend=backend)


def _pick(lp: LinearProgram, backend: str) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    if backend != "auto":
        return backend
    size = lp.n_vars * max(lp.n_constraints, 1)
    if size > AUTO_SIZE or len(lp.binaries) > AUTO_BINARIES:
        return "highs"
    return "embedded"
