"""Auction benchmark: one welfare-maximising MILP over every period.

Block bids enter through one binary acceptance variable each. Lines that
the pre-trade setpoint already overloads may not get more loaded, the same
rule the continuous engine applies, so a continuous outcome is always
feasible here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Direction, Instance, MarketOutcome, Trade
from .optimize import LinearProgram, SolverLimitError, Status, solve
from .powerflow import compute_ptdf, flow_window

EPS = 1e-9


class AuctionError(RuntimeError):
    pass


@dataclass
class AuctionProblem:
    instance: Instance
    lp: LinearProgram
    bid_vars: dict = field(default_factory=dict)
    block_vars: dict = field(default_factory=dict)
    angle_vars: dict = field(default_factory=dict)


def build_auction(instance: Instance) -> AuctionProblem:
    net = instance.network
    T = instance.n_periods
    lp = LinearProgram("min")
    prob = AuctionProblem(instance, lp)

    for b in instance.bids:
        cost = b.price if b.is_offer else -b.price
        prob.bid_vars[b.id] = lp.add_var(f"P[{b.id}]", 0.0, b.quantity, cost=cost)
    for k in instance.blocks:
        prob.block_vars[k.id] = lp.add_var(f"AR[{k.id}]", 0.0, 1.0, binary=True, cost=k.cost)
    ref = net.index(net.reference)
    for t in range(T):
        for i, n in enumerate(net.nodes):
            bounds = (0.0, 0.0) if i == ref else (-np.inf, np.inf)
            prob.angle_vars[n, t] = lp.add_var(f"delta[{n},{t}]", *bounds)

    # nodal balance: (B delta)_n + sum_r s*P_r - sum_o s*P_o - blocks = P^S_n
    rows = {(n, t): {} for t in range(T) for n in net.nodes}

    def add(row, j, a):
        row[j] = row.get(j, 0.0) + a

    for ln in net.lines:
        for t in range(T):
            f, to = prob.angle_vars[ln.from_node, t], prob.angle_vars[ln.to_node, t]
            add(rows[ln.from_node, t], f, ln.susceptance)
            add(rows[ln.from_node, t], to, -ln.susceptance)
            add(rows[ln.to_node, t], to, ln.susceptance)
            add(rows[ln.to_node, t], f, -ln.susceptance)
    for b in instance.bids:
        s = b.direction.sign
        add(rows[b.node, b.period], prob.bid_vars[b.id], s if b.is_request else -s)
    for k in instance.blocks:
        for sub in k.sub_offers:
            add(rows[k.node, sub.period], prob.block_vars[k.id], -sub.direction.sign * sub.quantity)
    inj = instance.setpoint.injection
    for t in range(T):
        for i, n in enumerate(net.nodes):
            lp.add_constraint(rows[n, t], "=", float(inj[i, t]), name=f"balance[{n},{t}]")

    # directional balance
    for t in range(T):
        for d in Direction:
            row = {}
            for b in instance.bids:
                if b.direction is d and b.period == t:
                    add(row, prob.bid_vars[b.id], -1.0 if b.is_request else 1.0)
            for k in instance.blocks:
                for sub in k.sub_offers:
                    if sub.direction is d and sub.period == t:
                        add(row, prob.block_vars[k.id], sub.quantity)
            if row:
                lp.add_constraint(row, "=", 0.0, name=f"{d.value}[{t}]")

    # line limits, with overloaded lines frozen at their pre-trade loading
    limits = net.limits
    flows0 = compute_ptdf(net).flows(inj)
    for t in range(T):
        lower, upper = flow_window(limits, flows0[:, t])
        for k, ln in enumerate(net.lines):
            if limits[k] >= 1e11:
                continue
            expr = {prob.angle_vars[ln.from_node, t]: ln.susceptance,
                    prob.angle_vars[ln.to_node, t]: -ln.susceptance}
            lp.add_constraint(expr, "<=", float(upper[k]), name=f"limit+[{k},{t}]")
            lp.add_constraint(expr, ">=", float(lower[k]), name=f"limit-[{k},{t}]")
    return prob


def clear_auction(problem: AuctionProblem, backend: str = "auto", gap_tol: float = 1e-9,
                  node_limit: int = 100_000, min_volume: bool = True) -> MarketOutcome:
    """Solve the auction and extract accepted quantities and a trade ledger.

    With ``min_volume`` a second LP (block decisions fixed, welfare held at
    its optimum) removes trades that add no welfare, so equal-price pairs are
    not accepted.
    """
    lp = problem.lp
    res = solve(lp, backend=backend, gap_tol=gap_tol, node_limit=node_limit) \
        if lp.is_mip else solve(lp, backend=backend)
    if res.status is Status.ITERATION_LIMIT:
        raise SolverLimitError("auction MILP hit its node limit", res)
    if res.status is not Status.OPTIMAL:
        raise AuctionError(f"auction problem reported {res.status.value}; zero acceptance "
                           "should always be feasible")
    x = res.x
    if min_volume and problem.bid_vars:
        x = _trim_volume(problem, x, res.objective, backend)
    return outcome_from_solution(problem, x)


def _trim_volume(problem: AuctionProblem, x: np.ndarray, cost: float, backend: str) -> np.ndarray:
    # an exact welfare floor first; a hair of slack only if round-off makes it infeasible
    for slack in (0.0, 1e-10):
        lp = problem.lp.copy()
        lp.binary = [False] * lp.n_vars
        for j in problem.block_vars.values():
            lp.lb[j] = lp.ub[j] = float(round(x[j]))
        lp.add_constraint(dict(lp.objective), "<=", cost + slack * max(1.0, abs(cost)),
                          name="welfare_floor")
        lp.set_objective({problem.bid_vars[b.id]: 1.0 for b in problem.instance.requests})
        res = solve(lp, backend=backend)
        if res.ok:
            return res.x
    return x


def outcome_from_solution(problem: AuctionProblem, x: np.ndarray, welfare=None) -> MarketOutcome:
    inst = problem.instance
    net = inst.network
    accepted = {}
    for b in inst.bids:
        q = float(x[problem.bid_vars[b.id]])
        if q > EPS:
            accepted[b.id] = q
    ar = {}
    for k in inst.blocks:
        ar[k.id] = int(round(float(x[problem.block_vars[k.id]])))
        if ar[k.id]:
            for sub in k.sub_offers:
                accepted[sub.id] = sub.quantity

    injection = np.array(inst.setpoint.injection, dtype=float)
    for b in inst.bids:
        q = accepted.get(b.id, 0.0)
        s = b.direction.sign
        injection[net.index(b.node), b.period] += (-s if b.is_request else s) * q
    for k in inst.blocks:
        if ar[k.id]:
            for sub in k.sub_offers:
                injection[net.index(k.node), sub.period] += sub.direction.sign * sub.quantity

    trades = pair_trades(inst, accepted)
    if welfare is None:
        welfare = (sum(b.price * accepted.get(b.id, 0.0) for b in inst.requests)
                   - sum(b.price * accepted.get(b.id, 0.0) for b in inst.offers)
                   - sum(k.cost for k in inst.blocks if ar[k.id]))
    volume = sum(accepted.get(b.id, 0.0) for b in inst.requests)
    return MarketOutcome(trades=trades, social_welfare=float(welfare), volume=volume,
                         accepted=accepted, block_acceptance=ar, injection=injection)


def pair_trades(inst: Instance, accepted: dict) -> list:
    """Ledger view of an auction result: per (direction, period), accepted
    requests by descending price are paired with accepted offers by
    ascending price."""
    subs = [(s, k.id) for k in inst.blocks for s in k.sub_offers]
    trades = []
    for t in range(inst.n_periods):
        for d in Direction:
            reqs = sorted([b for b in inst.requests if b.direction is d and b.period == t
                           and accepted.get(b.id, 0.0) > EPS],
                          key=lambda b: (-b.price, b.arrival_index))
            offs = [(b, None) for b in inst.offers if b.direction is d and b.period == t
                    and accepted.get(b.id, 0.0) > EPS]
            offs += [(s, kid) for s, kid in subs if s.direction is d and s.period == t
                     and accepted.get(s.id, 0.0) > EPS]
            offs.sort(key=lambda p: (p[0].price, p[0].arrival_index))
            r_left = [accepted[b.id] for b in reqs]
            o_left = [accepted[o.id] for o, _ in offs]
            i = j = 0
            while i < len(reqs) and j < len(offs):
                q = min(r_left[i], o_left[j])
                if q > EPS:
                    r, (o, kid) = reqs[i], offs[j]
                    older = r if r.arrival_index < o.arrival_index else o
                    trades.append(Trade(r.id, o.id, t, d, q, older.price, 0, kid))
                r_left[i] -= q
                o_left[j] -= q
                if r_left[i] <= EPS:
                    i += 1
                if o_left[j] <= EPS:
                    j += 1
    return trades


def run_auction(instance: Instance, backend: str = "auto", **kw) -> MarketOutcome:
    return clear_auction(build_auction(instance), backend=backend, **kw)
