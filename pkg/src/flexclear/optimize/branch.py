"""Best-bound branch and bound over binary variables."""
from __future__ import annotations

import heapq
import math

import numpy as np

from .program import LinearProgram, SolveResult, Status
from .simplex import simplex

INT_TOL = 1e-6


def branch_and_bound(lp: LinearProgram, gap_tol: float = 1e-9, node_limit: int = 100_000,
                     relax=simplex) -> SolveResult:
    """Minimise/maximise ``lp`` with its binaries enforced.

    Nodes are explored best bound first (ties by creation order); the branch
    variable is the most fractional binary, ties going to the lowest index.
    ``relax(lp, lb=..., ub=...)`` solves a node's LP relaxation. When
    ``node_limit`` is hit the best incumbent is returned with status
    ``ITERATION_LIMIT``.
    """
    sign = -1.0 if lp.sense == "max" else 1.0
    binaries = np.array(lp.binaries, dtype=int)
    lb0 = np.array(lp.lb, dtype=float)
    ub0 = np.array(lp.ub, dtype=float)

    best_x, best_val = None, math.inf
    heap = [(-math.inf, 0, lb0, ub0)]
    counter = 1
    nodes = 0
    iterations = 0
    saw_unbounded = False

    def closed(bound):
        return best_val - bound <= gap_tol * max(1.0, abs(best_val))

    while heap:
        bound, _, lb, ub = heap[0]
        if best_x is not None and closed(bound):
            break
        if nodes >= node_limit:
            status = Status.ITERATION_LIMIT
            return _result(status, lp, best_x, sign, nodes, iterations, sign * heap[0][0])
        heapq.heappop(heap)
        nodes += 1
        res = relax(lp, lb=lb, ub=ub)
        iterations += res.iterations
        if res.status is Status.INFEASIBLE:
            continue
        if res.status is Status.UNBOUNDED:
            saw_unbounded = True
            continue
        if res.status is not Status.OPTIMAL:
            return _result(Status.ITERATION_LIMIT, lp, best_x, sign, nodes, iterations, None)
        val = sign * res.objective
        if best_x is not None and closed(val):
            continue
        x = res.x
        if binaries.size:
            frac = np.minimum(x[binaries] - np.floor(x[binaries]), np.ceil(x[binaries]) - x[binaries])
            k = int(np.argmax(frac))
            if frac[k] <= INT_TOL:
                k = -1
        else:
            k = -1
        if k < 0:
            x = x.copy()
            x[binaries] = np.round(x[binaries])
            if val < best_val:
                best_x, best_val = x, val
            continue
        j = binaries[k]
        for value in (1.0, 0.0) if x[j] >= 0.5 else (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = value
            heapq.heappush(heap, (val, counter, clb, cub))
            counter += 1

    if best_x is None:
        status = Status.UNBOUNDED if saw_unbounded else Status.INFEASIBLE
        return SolveResult(status, nodes=nodes, iterations=iterations)
    return _result(Status.OPTIMAL, lp, best_x, sign, nodes, iterations,
                   sign * min([best_val] + [h[0] for h in heap]))


def _result(status, lp, x, sign, nodes, iterations, bound):
    if x is None:
        return SolveResult(status, nodes=nodes, iterations=iterations, bound=bound)
    return SolveResult(status, x=x, objective=lp.evaluate(x), nodes=nodes,
                       iterations=iterations, bound=bound)
