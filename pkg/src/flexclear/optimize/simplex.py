"""Dense-tableau primal simplex for bounded variables.

Every row ``lo <= a x <= hi`` gets a logical variable ``r`` with those
bounds so the system becomes ``A x - r = 0``. Rows whose starting activity
falls outside their range receive an artificial variable for phase 1.
Pricing is Dantzig's rule; after ``BLAND_AFTER`` consecutive degenerate
pivots it switches to Bland's rule until progress resumes.
"""
from __future__ import annotations

import numpy as np

from .program import LinearProgram, MalformedProgram, SolveResult, Status

PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
PRIMAL_TOL = 1e-9
PHASE1_TOL = 1e-7
BLAND_AFTER = 1000
REFRESH_EVERY = 50


class _Tableau:
    def __init__(self, c, A, row_lo, row_hi, lb, ub):
        m, n = A.shape
        self.m, self.n = m, n
        x0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
        act = A @ x0 if m else np.zeros(0)

        # rows whose logical can start basic
        inside = (act >= row_lo - PRIMAL_TOL) & (act <= row_hi + PRIMAL_TOL)
        art_rows = np.flatnonzero(~inside)
        n_art = art_rows.size
        ntot = n + m + n_art

        M = np.zeros((m, ntot))
        M[:, :n] = A
        M[np.arange(m), n + np.arange(m)] = -1.0
        r0 = np.clip(act, row_lo, row_hi)
        sigma = np.sign(r0[art_rows] - act[art_rows])
        M[art_rows, n + m + np.arange(n_art)] = sigma

        self.M = M
        self.lb = np.concatenate([lb, row_lo, np.zeros(n_art)])
        self.ub = np.concatenate([ub, row_hi, np.full(n_art, np.inf)])
        self.x = np.concatenate([x0, r0, np.abs(r0[art_rows] - act[art_rows])])
        self.basis = n + np.arange(m)
        self.basis[art_rows] = n + m + np.arange(n_art)
        self.is_basic = np.zeros(ntot, dtype=bool)
        self.is_basic[self.basis] = True

        # B is diagonal with entries -1 (logicals) or sigma (artificials)
        diag = -np.ones(m)
        diag[art_rows] = sigma
        self.T = M / diag[:, None]
        self.n_art = n_art
        self.art_start = n + m
        self.c_struct = c
        self.iterations = 0

    # -- helpers ---------------------------------------------------------
    def reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.T

    def pivot(self, r, j):
        T = self.T
        prow = T[r] / T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, prow)
        T[r] = prow
        self.is_basic[self.basis[r]] = False
        self.basis[r] = j
        self.is_basic[j] = True

    def run(self, cost, max_iter):
        """Primal simplex on the current basis; returns a Status."""
        d = self.reduced_costs(cost)
        degenerate = 0
        since_refresh = 0
        lb, ub, x = self.lb, self.ub, self.x
        while True:
            if self.iterations >= max_iter:
                return Status.ITERATION_LIMIT
            if since_refresh >= REFRESH_EVERY:
                d = self.reduced_costs(cost)
                since_refresh = 0
            nb = ~self.is_basic
            inc = nb & (x < ub) & (d < -DUAL_TOL)
            dec = nb & (x > lb) & (d > DUAL_TOL)
            ok = inc | dec
            if not ok.any():
                return Status.OPTIMAL
            if degenerate > BLAND_AFTER:
                j = int(np.flatnonzero(ok)[0])
            else:
                j = int(np.argmax(np.where(ok, np.abs(d), -1.0)))
            direction = 1.0 if inc[j] else -1.0

            alpha = direction * self.T[:, j]
            xb = x[self.basis]
            lbb = lb[self.basis]
            ubb = ub[self.basis]
            ratios = np.full(self.m, np.inf)
            pos = alpha > PIVOT_TOL
            neg = alpha < -PIVOT_TOL
            with np.errstate(invalid="ignore"):
                ratios[pos] = np.maximum(xb[pos] - lbb[pos], 0.0) / alpha[pos]
                ratios[neg] = np.maximum(ubb[neg] - xb[neg], 0.0) / -alpha[neg]
            ratios[~np.isfinite(ratios)] = np.inf
            own = (ub[j] - x[j]) if direction > 0 else (x[j] - lb[j])
            theta_row = ratios.min() if self.m else np.inf
            if not np.isfinite(theta_row) and not np.isfinite(own):
                return Status.UNBOUNDED

            self.iterations += 1
            since_refresh += 1
            if own <= theta_row:
                theta = own
                x[self.basis] = xb - theta * alpha
                x[j] = ub[j] if direction > 0 else lb[j]
                degenerate = degenerate + 1 if theta <= 1e-12 else 0
                continue

            theta = theta_row
            ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
            if degenerate > BLAND_AFTER:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving = self.basis[r]
            x[self.basis] = xb - theta * alpha
            x[j] = x[j] + direction * theta
            x[leaving] = lb[leaving] if alpha[r] > 0 else ub[leaving]
            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            dj = d[j]
            self.pivot(r, j)
            d = d - dj * self.T[r]
            d[j] = 0.0

    def drive_out_artificials(self):
        for r in range(self.m):
            bvar = self.basis[r]
            if bvar < self.art_start:
                continue
            row = np.abs(self.T[r, :self.art_start])
            row[self.is_basic[:self.art_start]] = 0.0
            j = int(np.argmax(row)) if row.size else 0
            if row.size and row[j] > 1e-7:
                self.pivot(r, j)
                self.x[bvar] = 0.0

    def refine(self):
        """Recompute basic values and duals from the original matrix."""
        B = self.M[:, self.basis]
        nb = ~self.is_basic
        rhs = -self.M[:, nb] @ self.x[nb]
        try:
            xb = np.linalg.solve(B, rhs)
            if np.all(np.isfinite(xb)):
                self.x[self.basis] = xb
        except np.linalg.LinAlgError:
            pass

    def duals(self, cost):
        B = self.M[:, self.basis]
        try:
            y = np.linalg.solve(B.T, cost[self.basis])
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(B.T, cost[self.basis], rcond=None)[0]
        return y, cost - self.M.T @ y


def simplex(lp: LinearProgram, max_iter: int = 100_000, lb=None, ub=None) -> SolveResult:
    """Solve the continuous relaxation of ``lp``.

    ``lb``/``ub`` optionally override the variable bounds (used by branch and
    bound). Duals are shadow prices d(objective)/d(rhs) in the program's own
    sense.
    """
    lp.validate()
    n = lp.n_vars
    sign = -1.0 if lp.sense == "max" else 1.0
    c = sign * lp.cost_vector()
    A = lp.matrix()
    row_lo, row_hi = lp.row_bounds()
    lb = np.array(lp.lb if lb is None else lb, dtype=float)
    ub = np.array(lp.ub if ub is None else ub, dtype=float)
    if np.any(lb > ub):
        return SolveResult(Status.INFEASIBLE)
    if A.shape[0] == 0:
        A = np.zeros((0, n))

    tab = _Tableau(c, A, row_lo, row_hi, lb, ub)
    if tab.n_art:
        cost1 = np.zeros(tab.lb.size)
        cost1[tab.art_start:] = 1.0
        status = tab.run(cost1, max_iter)
        if status is Status.ITERATION_LIMIT:
            return SolveResult(status, iterations=tab.iterations)
        tab.refine()
        infeas = float(np.sum(np.maximum(tab.x[tab.art_start:], 0.0)))
        if infeas > PHASE1_TOL:
            return SolveResult(Status.INFEASIBLE, iterations=tab.iterations)
        tab.ub[tab.art_start:] = 0.0
        tab.x[tab.art_start:] = np.clip(tab.x[tab.art_start:], 0.0, 0.0)
        tab.drive_out_artificials()

    cost2 = np.zeros(tab.lb.size)
    cost2[:n] = c
    status = tab.run(cost2, max_iter)
    if status is not Status.OPTIMAL:
        return SolveResult(status, iterations=tab.iterations)
    tab.refine()
    y, dj = tab.duals(cost2)
    x = np.clip(tab.x[:n], lb, ub)
    obj = float(lp.cost_vector() @ x) + lp.objective_constant
    return SolveResult(Status.OPTIMAL, x=x, objective=obj, duals=sign * y,
                       reduced_costs=sign * dj[:n], iterations=tab.iterations)


def check_program(lp: LinearProgram) -> None:
    if lp.is_mip:
        raise MalformedProgram("solve_lp called on a program with binary variables")
