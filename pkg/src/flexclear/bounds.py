"""Worst and best arrival sequences for continuous clearing.

All requests are booked before any offer arrives; the offer-side bids
(single offers and block bids) are submitted one per round in an order
chosen by an outer optimisation. Each round's clearing is a linear program
(block acceptance relaxed to [0, 1]) whose optimality conditions are written
into one mixed-binary program with big-M complementarity. An exhaustive
permutation oracle built on the continuous engine serves as ground truth on
small instances.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .auction import run_auction
from .continuous import run_continuous
from .model import Direction, Instance
from .optimize import LinearProgram, SolverLimitError, Status, solve, solve_lp
from .powerflow import compute_ptdf, flow_window

SLACK_MARGIN = 10.0
DUAL_SCALE = 100.0
MAX_OFFERS = 6
MAX_NODES = 10
INT_TOL = 1e-6


class SizeGuardError(ValueError):
    """Instance too large for exhaustive or bilevel sequence analysis."""


@dataclass
class LowerLevel:
    """One clearing round as an LP fragment inside a larger program.

    ``rows`` hold ``(coeffs, sense, rhs, big_m)`` with ``sense`` in
    ``{"=", "<="}``; coefficients may reference parameters (sequence
    binaries, earlier rounds) besides the round's own variables.
    """
    round: int
    request_vars: dict = field(default_factory=dict)
    offer_vars: dict = field(default_factory=dict)
    block_vars: dict = field(default_factory=dict)
    angle_vars: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    var_bound: dict = field(default_factory=dict)

    @property
    def variables(self) -> list:
        return [*self.request_vars.values(), *self.offer_vars.values(),
                *self.block_vars.values(), *self.angle_vars.values()]

    @property
    def nonnegative(self) -> list:
        return [*self.request_vars.values(), *self.offer_vars.values(),
                *self.block_vars.values()]


@dataclass
class SequenceProblem:
    instance: Instance
    sense: str
    lp: LinearProgram
    submitters: list
    seq_vars: dict = field(default_factory=dict)
    rounds: list = field(default_factory=list)
    dual_bound: float = 0.0

    @property
    def n_rounds(self) -> int:
        return len(self.submitters)

    def order_from(self, x: np.ndarray) -> list:
        out = []
        for i in range(self.n_rounds):
            b = max(self.submitters, key=lambda bid: x[self.seq_vars[i, bid]])
            out.append(b)
        return out

    def ar_values(self, x: np.ndarray) -> list:
        return [float(x[j]) for ll in self.rounds for j in ll.block_vars.values()]


@dataclass
class SenseResult:
    sense: str
    relaxed: Optional[float]
    restored: Optional[float]
    tight: bool
    witness: list
    status: str = "optimal"
    big_m_sensitive: bool = False
    relaxed_witness: list = field(default_factory=list)
    # continuous outcomes are auction-feasible, so the auction welfare caps a best case
    cap: Optional[float] = None

    @property
    def interval(self) -> tuple:
        vals = [v for v in (self.relaxed, self.restored) if v is not None]
        if not vals:
            return (math.nan, math.nan)
        lo, hi = min(vals), max(vals)
        if self.cap is not None:
            hi = max(min(hi, self.cap), lo)
        return (lo, hi)

    @property
    def value(self) -> float:
        lo, hi = self.interval
        return lo if self.sense == "min" else hi


@dataclass
class BoundsReport:
    worst: Optional[SenseResult]
    best: Optional[SenseResult]
    auction_welfare: float

    @property
    def worst_welfare(self):
        return self._shown(self.worst)

    @property
    def best_welfare(self):
        return self._shown(self.best)

    @property
    def relaxation_tight(self) -> dict:
        return {r.sense: r.tight for r in (self.worst, self.best) if r is not None}

    @staticmethod
    def _shown(res):
        if res is None:
            return None
        return res.relaxed if res.tight else res.interval

    def percent_of_auction(self, value: float) -> Optional[float]:
        if self.auction_welfare > 0 and value is not None and math.isfinite(value):
            return 100.0 * value / self.auction_welfare
        return None

    def to_dict(self) -> dict:
        out = {"auction_welfare": self.auction_welfare}
        for label, res in (("worst", self.worst), ("best", self.best)):
            if res is None:
                continue
            lo, hi = res.interval
            out[label] = {
                "sense": res.sense, "relaxed": res.relaxed, "restored": res.restored,
                "interval": [lo, hi], "relaxation_tight": res.tight, "status": res.status,
                "big_m_sensitive": res.big_m_sensitive, "witness": list(res.witness),
                "relaxed_witness": list(res.relaxed_witness),
                "percent_of_auction": [self.percent_of_auction(lo), self.percent_of_auction(hi)],
            }
        return out


# -- formulation ---------------------------------------------------------

def _check_size(instance: Instance, max_offers: int, max_nodes: Optional[int] = None) -> None:
    n_sub = len(instance.offers) + len(instance.blocks)
    if n_sub > max_offers:
        raise SizeGuardError(f"{n_sub} offer-side bids exceed the limit of {max_offers}; "
                             "sequence analysis grows factorially, reduce the instance")
    if max_nodes is not None and instance.network.n_nodes > max_nodes:
        raise SizeGuardError(f"{instance.network.n_nodes} nodes exceed the limit of {max_nodes}")


def build_lower_level(lp: LinearProgram, instance: Instance, i: int, seq_vars: dict,
                      history: list) -> LowerLevel:
    """Add round ``i``'s variables to ``lp`` and return its LP fragment.

    ``seq_vars[(j, bid_id)]`` are the submission binaries and ``history``
    the fragments of rounds ``0..i-1``.
    """
    net = instance.network
    T = instance.n_periods
    ll = LowerLevel(i)
    for r in instance.requests:
        ll.request_vars[r.id] = lp.add_var(f"P[{i},{r.id}]", 0.0)
        ll.objective[ll.request_vars[r.id]] = r.price
        ll.var_bound[ll.request_vars[r.id]] = r.quantity
    for o in instance.offers:
        ll.offer_vars[o.id] = lp.add_var(f"P[{i},{o.id}]", 0.0)
        ll.objective[ll.offer_vars[o.id]] = -o.price
        ll.var_bound[ll.offer_vars[o.id]] = o.quantity
    for k in instance.blocks:
        ll.block_vars[k.id] = lp.add_var(f"AR[{i},{k.id}]", 0.0)
        ll.objective[ll.block_vars[k.id]] = -k.cost
        ll.var_bound[ll.block_vars[k.id]] = 1.0
    ref = net.index(net.reference)
    for t in range(T):
        for n_i, n in enumerate(net.nodes):
            if n_i != ref:
                ll.angle_vars[n, t] = lp.add_var(f"delta[{i},{n},{t}]", -math.inf, math.inf)

    def add(row, j, a):
        row[j] = row.get(j, 0.0) + a

    # matching balance per direction and period
    for t in range(T):
        for d in Direction:
            row = {}
            for r in instance.requests:
                if r.direction is d and r.period == t:
                    add(row, ll.request_vars[r.id], -1.0)
            for o in instance.offers:
                if o.direction is d and o.period == t:
                    add(row, ll.offer_vars[o.id], 1.0)
            for k in instance.blocks:
                for sub in k.sub_offers:
                    if sub.direction is d and sub.period == t:
                        add(row, ll.block_vars[k.id], sub.quantity)
            if row:
                ll.rows.append((row, "=", 0.0, None))

    # cumulative nodal balance: setpoint + trades of rounds <= i = B delta
    rounds = [*history, ll]
    inj = instance.setpoint.injection
    lines_at = {n: [] for n in net.nodes}
    for ln in net.lines:
        lines_at[ln.from_node].append((ln.to_node, ln.susceptance))
        lines_at[ln.to_node].append((ln.from_node, ln.susceptance))
    for t in range(T):
        for n_i, n in enumerate(net.nodes):
            row = {}
            for past in rounds:
                for r in instance.requests:
                    if r.node == n and r.period == t:
                        add(row, past.request_vars[r.id], -r.direction.sign)
                for o in instance.offers:
                    if o.node == n and o.period == t:
                        add(row, past.offer_vars[o.id], o.direction.sign)
                for k in instance.blocks:
                    if k.node != n:
                        continue
                    for sub in k.sub_offers:
                        if sub.period == t:
                            add(row, past.block_vars[k.id], sub.direction.sign * sub.quantity)
            for m, b in lines_at[n]:
                if (n, t) in ll.angle_vars:
                    add(row, ll.angle_vars[n, t], -b)
                if (m, t) in ll.angle_vars:
                    add(row, ll.angle_vars[m, t], b)
            ll.rows.append((row, "=", -float(inj[n_i, t]), None))

    # line windows around the pre-trade flows
    limits = net.limits
    flows0 = compute_ptdf(net).flows(inj)
    for t in range(T):
        lower, upper = flow_window(limits, flows0[:, t])
        for k, ln in enumerate(net.lines):
            if limits[k] >= 1e11:
                continue
            expr = {}
            if (ln.from_node, t) in ll.angle_vars:
                add(expr, ll.angle_vars[ln.from_node, t], ln.susceptance)
            if (ln.to_node, t) in ll.angle_vars:
                add(expr, ll.angle_vars[ln.to_node, t], -ln.susceptance)
            width = float(upper[k] - lower[k]) + SLACK_MARGIN
            ll.rows.append((expr, "<=", float(upper[k]), width))
            ll.rows.append(({j: -a for j, a in expr.items()}, "<=", -float(lower[k]), width))

    # requests: quantity left after earlier rounds
    for r in instance.requests:
        row = {ll.request_vars[r.id]: 1.0}
        for past in history:
            add(row, past.request_vars[r.id], 1.0)
        ll.rows.append((row, "<=", r.quantity, r.quantity + SLACK_MARGIN))

    # offers: gated by submission, and quantity left after earlier rounds
    for o in instance.offers:
        gate = {ll.offer_vars[o.id]: 1.0}
        for j in range(i + 1):
            add(gate, seq_vars[j, o.id], -o.quantity)
        ll.rows.append((gate, "<=", 0.0, o.quantity + SLACK_MARGIN))
        left = {ll.offer_vars[o.id]: 1.0}
        for past in history:
            add(left, past.offer_vars[o.id], 1.0)
        ll.rows.append((left, "<=", o.quantity, o.quantity + SLACK_MARGIN))

    # blocks: acceptance only in the round of submission (AR*s == AR for binary s)
    for k in instance.blocks:
        ll.rows.append(({ll.block_vars[k.id]: 1.0, seq_vars[i, k.id]: -1.0}, "<=", 0.0,
                        1.0 + SLACK_MARGIN))
    return ll


def _welfare_objective(instance: Instance, rounds: list) -> dict:
    obj = {}
    for ll in rounds:
        for j, a in ll.objective.items():
            obj[j] = obj.get(j, 0.0) + a
    return obj


def _add_kkt(prob: SequenceProblem, ll: LowerLevel) -> None:
    """Primal feasibility, stationarity and big-M complementarity of a round."""
    lp = prob.lp
    M_d = prob.dual_bound
    own = set(ll.variables)
    duals = []
    for n_row, (coeffs, sense, rhs, big_m) in enumerate(ll.rows):
        lp.add_constraint(coeffs, sense, rhs, name=f"ll{ll.round}.row{n_row}")
        if sense == "=":
            y = lp.add_var(f"pi[{ll.round},{n_row}]", -M_d, M_d)
        else:
            y = lp.add_var(f"mu[{ll.round},{n_row}]", 0.0, M_d)
            z = lp.add_var(f"z[{ll.round},{n_row}]", binary=True)
            lp.add_constraint({y: 1.0, z: -M_d}, "<=", 0.0)
            # rhs - coeffs.x <= big_m (1 - z)
            lp.add_constraint({**coeffs, z: -big_m}, ">=", rhs - big_m)
        duals.append((y, coeffs))
    # stationarity of the round's maximisation: sum_rows a*dual - c  >= 0 (= 0 if free)
    column = {j: {} for j in own}
    for y, coeffs in duals:
        for j, a in coeffs.items():
            if j in own:
                column[j][y] = column[j].get(y, 0.0) + a
    nonneg = set(ll.nonnegative)
    for j in ll.variables:
        c = ll.objective.get(j, 0.0)
        expr = column[j]
        if j not in nonneg:
            lp.add_constraint(expr, "=", c, name=f"stat[{lp.names[j]}]")
            continue
        lp.add_constraint(expr, ">=", c, name=f"stat[{lp.names[j]}]")
        w = lp.add_var(f"w[{lp.names[j]}]", binary=True)
        m_primal = ll.var_bound[j] + SLACK_MARGIN
        m_dual = abs(c) + sum(abs(a) for a in expr.values()) * M_d
        lp.add_constraint({j: 1.0, w: -m_primal}, "<=", 0.0)
        lp.add_constraint({**expr, w: m_dual}, "<=", c + m_dual)


def build_sequence_problem(instance: Instance, sense: str = "min", binary_ar: bool = False,
                           order: Optional[list] = None, dual_scale: float = DUAL_SCALE
                           ) -> SequenceProblem:
    """Single-level program over submission sequences.

    ``sense`` is ``"min"`` (worst case) or ``"max"`` (best case). ``order``
    fixes the sequence; ``binary_ar`` restores integrality of block
    acceptance.
    """
    if sense not in ("min", "max"):
        raise ValueError(f"unknown sense {sense!r}")
    submitters = [b.id for b in sorted([*instance.offers, *instance.blocks],
                                       key=lambda b: b.arrival_index)]
    lp = LinearProgram(sense)
    prices = [b.price for b in instance.bids] + [s.price for k in instance.blocks
                                                 for s in k.sub_offers]
    prob = SequenceProblem(instance, sense, lp, submitters,
                           dual_bound=dual_scale * max([1.0, *prices]))
    I = len(submitters)
    for i in range(I):
        for b in submitters:
            prob.seq_vars[i, b] = lp.add_var(f"s[{i},{b}]", binary=True)
    for i in range(I):
        lp.add_constraint({prob.seq_vars[i, b]: 1.0 for b in submitters}, "=", 1.0,
                          name=f"one_bid[{i}]")
    for b in submitters:
        lp.add_constraint({prob.seq_vars[i, b]: 1.0 for i in range(I)}, "=", 1.0,
                          name=f"once[{b}]")
    if order is not None:
        if sorted(order) != sorted(submitters):
            raise ValueError("order must list every offer and block id exactly once")
        for i, b in enumerate(order):
            j = prob.seq_vars[i, b]
            lp.lb[j] = 1.0
    for i in range(I):
        ll = build_lower_level(lp, instance, i, prob.seq_vars, prob.rounds)
        prob.rounds.append(ll)
        _add_kkt(prob, ll)
    for k in instance.blocks:
        lp.add_constraint({ll.block_vars[k.id]: 1.0 for ll in prob.rounds}, "<=", 1.0,
                          name=f"ar_total[{k.id}]")
        if binary_ar:
            for ll in prob.rounds:
                lp.binary[ll.block_vars[k.id]] = True
                lp.ub[ll.block_vars[k.id]] = 1.0
    lp.set_objective(_welfare_objective(instance, prob.rounds))
    return prob


def _solve(prob: SequenceProblem, backend: str, node_limit: int):
    res = solve(prob.lp, backend=backend, node_limit=node_limit)
    if res.status is Status.INFEASIBLE:
        return None, res
    if res.x is None:
        raise SolverLimitError("sequence program stopped without a solution", res)
    return res.objective, res


def reformulate_and_solve(instance: Instance, sense: str = "min", backend: str = "highs",
                          node_limit: int = 1_000_000, dual_scale: float = DUAL_SCALE,
                          max_offers: int = MAX_OFFERS, max_nodes: int = MAX_NODES,
                          check_big_m: bool = True) -> SenseResult:
    """Worst (``min``) or best (``max``) welfare over submission sequences.

    Block acceptance is first relaxed; if any acceptance value comes out
    fractional the program is solved again with it binary and both values
    are reported. With ``check_big_m`` the relaxed program is re-solved with
    ten times the dual bound and a changed optimum is flagged.
    """
    _check_size(instance, max_offers, max_nodes)
    prob = build_sequence_problem(instance, sense, dual_scale=dual_scale)
    relaxed, res = _solve(prob, backend, node_limit)
    if relaxed is None:
        raise RuntimeError("sequence program infeasible; every sequence should be admissible")
    status = res.status.value
    witness = prob.order_from(res.x)
    ars = prob.ar_values(res.x)
    tight = all(min(a, 1 - a) <= INT_TOL for a in ars)
    restored = relaxed if tight else None
    relaxed_witness = witness
    if not tight:
        prob_b = build_sequence_problem(instance, sense, binary_ar=True, dual_scale=dual_scale)
        restored, res_b = _solve(prob_b, backend, node_limit)
        if restored is not None:
            witness = prob_b.order_from(res_b.x)
            if res_b.status is not Status.OPTIMAL:
                status = res_b.status.value
    sensitive = False
    if check_big_m:
        wide = build_sequence_problem(instance, sense, dual_scale=10 * dual_scale)
        other, _ = _solve(wide, backend, node_limit)
        sensitive = other is None or abs(other - relaxed) > 1e-6 * max(1.0, abs(relaxed))
    return SenseResult(sense, relaxed, restored, tight, witness, status, sensitive,
                       relaxed_witness)


def sequence_bounds(instance: Instance, senses=("min", "max"), backend: str = "highs",
                    **kw) -> BoundsReport:
    """Both bounds plus the auction welfare used to normalise them."""
    worst = reformulate_and_solve(instance, "min", backend, **kw) if "min" in senses else None
    best = reformulate_and_solve(instance, "max", backend, **kw) if "max" in senses else None
    auction = run_auction(instance).social_welfare
    if best is not None and not best.tight:
        best.cap = auction
    return BoundsReport(worst, best, auction)


@dataclass
class FixedSequence:
    welfare: Optional[float]
    tight: bool
    block_acceptance: dict


def fixed_sequence_welfare(instance: Instance, order: list, backend: str = "highs",
                           dual_scale: float = DUAL_SCALE) -> FixedSequence:
    """Single-level program with the sequence pinned to ``order``."""
    prob = build_sequence_problem(instance, "min", order=order, dual_scale=dual_scale)
    value, res = _solve(prob, backend, 1_000_000)
    if value is None:
        return FixedSequence(None, False, {})
    ar = {k.id: sum(float(res.x[ll.block_vars[k.id]]) for ll in prob.rounds)
          for k in instance.blocks}
    tight = all(min(a, 1 - a) <= INT_TOL for a in prob.ar_values(res.x))
    return FixedSequence(value, tight, ar)


def sequential_lower_level(instance: Instance, order: list, binary_ar: bool = False) -> dict:
    """Solve the rounds one after another for a fixed submission order.

    Each round's LP is solved on its own with the sequence and all earlier
    rounds held fixed. Returns total welfare and per-round welfare and block
    acceptance values.
    """
    submitters = sorted([*instance.offers, *instance.blocks], key=lambda b: b.arrival_index)
    ids = [b.id for b in submitters]
    if sorted(order) != sorted(ids):
        raise ValueError("order must list every offer and block id exactly once")
    lp = LinearProgram("max")
    seq = {}
    for i in range(len(ids)):
        for b in ids:
            v = 1.0 if order[i] == b else 0.0
            seq[i, b] = lp.add_var(f"s[{i},{b}]", v, v)
    history, per_round, ar = [], [], {}
    for i in range(len(ids)):
        ll = build_lower_level(lp, instance, i, seq, history)
        rnd = lp.copy()
        for coeffs, sense, rhs, _ in ll.rows:
            rnd.add_constraint(coeffs, sense, rhs)
        for j in ll.block_vars.values():
            rnd.ub[j] = 1.0
            rnd.binary[j] = binary_ar
        rnd.set_objective(ll.objective)
        res = solve(rnd, backend="auto") if rnd.is_mip else solve_lp(rnd, backend="auto")
        if not res.ok:
            raise RuntimeError(f"round {i} failed: {res.status.value}")
        per_round.append(res.objective)
        for j in ll.variables:
            lp.lb[j] = lp.ub[j] = float(res.x[j])
        for k, j in ll.block_vars.items():
            if res.x[j] > INT_TOL:
                ar[k] = ar.get(k, 0.0) + float(res.x[j])
        history.append(ll)
    return {"welfare": float(sum(per_round)), "rounds": per_round, "block_acceptance": ar}


# -- permutation oracle ---------------------------------------------------

@dataclass
class OracleResult:
    min_welfare: float
    max_welfare: float
    worst_sequence: list
    best_sequence: list
    table: list

    def to_dict(self) -> dict:
        return {"min_welfare": self.min_welfare, "max_welfare": self.max_welfare,
                "worst_sequence": self.worst_sequence, "best_sequence": self.best_sequence,
                "table": [{"sequence": list(s), "welfare": w} for s, w in self.table]}


def _oracle_run(args):
    instance, requests, perm = args
    return run_continuous(instance, order=[*requests, *perm]).social_welfare


def permutation_oracle(instance: Instance, max_offers: int = MAX_OFFERS,
                       workers: int = 1) -> OracleResult:
    """Run the engine on every offer-side submission order.

    Requests are booked first, in their own arrival order.
    """
    _check_size(instance, max_offers)
    requests = [r.id for r in sorted(instance.requests, key=lambda b: b.arrival_index)]
    subs = [b.id for b in sorted([*instance.offers, *instance.blocks],
                                 key=lambda b: b.arrival_index)]
    perms = list(itertools.permutations(subs))
    jobs = [(instance, requests, p) for p in perms]
    if workers > 1 and len(perms) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            welfare = list(pool.map(_oracle_run, jobs))
    else:
        welfare = [_oracle_run(j) for j in jobs]
    table = [(list(p), float(w)) for p, w in zip(perms, welfare)]
    lo = min(range(len(table)), key=lambda k: table[k][1])
    hi = max(range(len(table)), key=lambda k: table[k][1])
    return OracleResult(table[lo][1], table[hi][1], table[lo][0], table[hi][0], table)
