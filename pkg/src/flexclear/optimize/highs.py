"""Adapter routing a :class:`LinearProgram` to scipy's HiGHS bindings."""
from __future__ import annotations

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .program import LinearProgram, SolveResult, Status

_LINPROG_STATUS = {0: Status.OPTIMAL, 1: Status.ITERATION_LIMIT, 2: Status.INFEASIBLE,
                   3: Status.UNBOUNDED}


def highs_lp(lp: LinearProgram, lb=None, ub=None) -> SolveResult:
    lp.validate()
    sign = -1.0 if lp.sense == "max" else 1.0
    c = sign * lp.cost_vector()
    lb = np.array(lp.lb if lb is None else lb, dtype=float)
    ub = np.array(lp.ub if ub is None else ub, dtype=float)
    A = lp.matrix(dense=False)
    lo, hi = lp.row_bounds()
    eq = lo == hi
    le = np.isfinite(hi) & ~eq
    ge = np.isfinite(lo) & ~eq
    A_ub = None
    b_ub = None
    if le.any() or ge.any():
        from scipy import sparse
        A_ub = sparse.vstack([A[le], -A[ge]]).tocsr()
        b_ub = np.concatenate([hi[le], -lo[ge]])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub,
                  A_eq=A[eq] if eq.any() else None, b_eq=lo[eq] if eq.any() else None,
                  bounds=np.column_stack([lb, ub]), method="highs")
    status = _LINPROG_STATUS.get(res.status, Status.INFEASIBLE)
    if status is not Status.OPTIMAL:
        return SolveResult(status)
    duals = np.zeros(lp.n_constraints)
    if eq.any():
        duals[eq] = res.eqlin.marginals
    if A_ub is not None:
        marg = res.ineqlin.marginals
        n_le = int(le.sum())
        duals[le] += marg[:n_le]
        duals[ge] -= marg[n_le:]
    x = np.clip(res.x, lb, ub)
    return SolveResult(Status.OPTIMAL, x=x, objective=lp.evaluate(x), duals=sign * duals,
                       iterations=int(getattr(res, "nit", 0)))


def highs_milp(lp: LinearProgram, gap_tol: float = 1e-9, node_limit: int = 100_000,
               time_limit: float | None = None) -> SolveResult:
    lp.validate()
    sign = -1.0 if lp.sense == "max" else 1.0
    c = sign * lp.cost_vector()
    constraints = []
    if lp.n_constraints:
        lo, hi = lp.row_bounds()
        constraints.append(LinearConstraint(lp.matrix(dense=False), lo, hi))
    options = {"mip_rel_gap": gap_tol, "node_limit": node_limit}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c, constraints=constraints, integrality=np.array(lp.binary, dtype=int),
               bounds=Bounds(np.array(lp.lb), np.array(lp.ub)), options=options)
    if res.x is None:
        status = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status, Status.ITERATION_LIMIT)
        return SolveResult(status)
    x = np.array(res.x)
    b = lp.binaries
    x[b] = np.round(x[b])
    status = Status.OPTIMAL if res.status == 0 else Status.ITERATION_LIMIT
    bound = getattr(res, "mip_dual_bound", None)
    return SolveResult(status, x=x, objective=lp.evaluate(x),
                       bound=None if bound is None else sign * bound + lp.objective_constant,
                       nodes=int(getattr(res, "mip_node_count", 0) or 0))
