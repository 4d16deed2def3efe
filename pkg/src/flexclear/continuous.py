"""Continuous (first-come, first-served) clearing with network checks.

Single bids are matched on arrival against the best compatible entries of
the opposite book; the older bid of a pair sets the clearing price. Block
bids wait as pending blocks that collect candidate requests and commit only
when every sub-offer can be covered in full.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .model import (Bid, BlockBid, Direction, Instance, MarketOutcome, Network, Setpoint,
                    Trade, accepted_quantities, trade_welfare)
from .optimize import LinearProgram, Status, solve_lp
from .powerflow import FEAS_TOL, PtdfMatrix, compute_ptdf, flow_window, quantity_max

log = logging.getLogger(__name__)

EPS = 1e-9


class ArrivalOrderError(ValueError):
    pass


class DuplicateBidError(ValueError):
    pass


@dataclass
class BookEntry:
    bid: Bid
    remaining: float

    @property
    def request_key(self):
        return (-self.bid.price, self.bid.arrival_index)

    @property
    def offer_key(self):
        return (self.bid.price, self.bid.arrival_index)


class OrderBook:
    """Resting requests (price descending) and offers (price ascending),
    each keyed by (direction, period); ties go to the older bid."""

    def __init__(self):
        self.requests = {}
        self.offers = {}

    def add(self, entry: BookEntry) -> None:
        key = (entry.bid.direction, entry.bid.period)
        if entry.bid.is_request:
            bisect.insort(self.requests.setdefault(key, []), entry, key=lambda e: e.request_key)
        else:
            bisect.insort(self.offers.setdefault(key, []), entry, key=lambda e: e.offer_key)

    def side(self, side_requests: bool, direction: Direction, period: int) -> list:
        book = self.requests if side_requests else self.offers
        return book.get((direction, period), [])

    def prune(self, side_requests: bool, direction: Direction, period: int) -> None:
        book = self.requests if side_requests else self.offers
        key = (direction, period)
        if key in book:
            book[key] = [e for e in book[key] if e.remaining > EPS]

    def __iter__(self):
        for entries in (*self.requests.values(), *self.offers.values()):
            yield from entries


@dataclass
class PendingBlock:
    block: BlockBid
    candidates: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    assignment: dict = field(default_factory=dict)


class ContinuousMarket:
    """Engine state: network, evolving setpoint, order books, pending blocks
    and the trade ledger."""

    def __init__(self, network: Network, setpoint: Setpoint, ptdf: Optional[PtdfMatrix] = None,
                 block_lp: str = "ptdf"):
        self.network = network
        self.ptdf = ptdf if ptdf is not None else compute_ptdf(network)
        self.injection = np.array(setpoint.injection, dtype=float)
        self.flows = self.ptdf.flows(self.injection)
        self.initial_injection = self.injection.copy()
        self.book = OrderBook()
        self.pending = []
        self.trades = []
        self.match_round = 0
        self.committed_blocks = set()
        self._requests = {}
        self._bids = {}
        self._blocks = []
        self._seen = set()
        self._last_arrival = -1
        self._limits = network.limits
        self._limited = self._limits < 1e11
        # bumped whenever a period's flows change; keys the block LP cache
        self._flow_version = [0] * setpoint.n_periods
        self._selection_cache = {}
        self.block_lp = block_lp

    # -- public ----------------------------------------------------------
    def submit(self, bid) -> list:
        if bid.id in self._seen:
            raise DuplicateBidError(bid.id)
        if bid.arrival_index <= self._last_arrival:
            raise ArrivalOrderError(
                f"bid {bid.id} arrives at {bid.arrival_index} after {self._last_arrival}")
        self._seen.add(bid.id)
        self._last_arrival = bid.arrival_index
        start = len(self.trades)
        if isinstance(bid, BlockBid):
            self._register_block(bid)
        elif bid.is_request:
            self._submit_request(bid)
        else:
            self._submit_offer(bid)
        return self.trades[start:]

    def outcome(self) -> MarketOutcome:
        welfare = trade_welfare(self.trades, self._bids.values())
        return MarketOutcome(
            trades=list(self.trades), social_welfare=welfare,
            volume=sum(tr.quantity for tr in self.trades),
            accepted=accepted_quantities(self.trades),
            block_acceptance={b.id: int(b.id in self.committed_blocks) for b in self._blocks},
            injection=self.injection.copy())

    # -- single bids -----------------------------------------------------
    def _submit_request(self, req: Bid) -> None:
        self._bids[req.id] = req
        entry = BookEntry(req, req.quantity)
        offers = self.book.side(False, req.direction, req.period)
        for o in offers:
            if o.bid.price > req.price or entry.remaining <= EPS:
                break
            self._try_pair(entry, o)
        self.book.prune(False, req.direction, req.period)
        if entry.remaining > EPS:
            self.book.add(entry)
            self._requests[req.id] = entry
            self._offer_candidate(entry)

    def _submit_offer(self, off: Bid) -> None:
        self._bids[off.id] = off
        entry = BookEntry(off, off.quantity)
        requests = self.book.side(True, off.direction, off.period)
        for r in requests:
            if r.bid.price < off.price or entry.remaining <= EPS:
                break
            self._try_pair(r, entry)
        self.book.prune(True, off.direction, off.period)
        if entry.remaining > EPS:
            self.book.add(entry)

    def _try_pair(self, req: BookEntry, off: BookEntry) -> None:
        t = req.bid.period
        q_cap = min(req.remaining, off.remaining)
        q = quantity_max(self.flows[:, t], self.network, self.ptdf, off.bid.node, req.bid.node,
                         req.bid.direction, q_cap, allow_overloaded=True)
        if q <= EPS:
            # the best entry is blocked by the network; later entries may not be
            return
        self._execute(req, off.bid, q)
        off.remaining = max(off.remaining - q, 0.0)
        self.match_round += 1

    def _execute(self, req: BookEntry, offer: Bid, q: float, block_id=None) -> Trade:
        t = req.bid.period
        older = req.bid if req.bid.arrival_index < offer.arrival_index else offer
        sign = req.bid.direction.sign
        net = self.network
        self.injection[net.index(offer.node), t] += sign * q
        self.injection[net.index(req.bid.node), t] -= sign * q
        self.flows[:, t] += q * self.ptdf.transfer(offer.node, req.bid.node, req.bid.direction)
        self._flow_version[t] += 1
        req.remaining -= q
        if req.remaining <= EPS:
            req.remaining = 0.0
            self._requests.pop(req.bid.id, None)
        trade = Trade(req.bid.id, offer.id, t, req.bid.direction, q, older.price,
                      self.match_round, block_id)
        self.trades.append(trade)
        return trade

    # -- blocks ----------------------------------------------------------
    def _register_block(self, blk: BlockBid) -> None:
        self._blocks.append(blk)
        for sub in blk.sub_offers:
            self._bids[sub.id] = sub
        p = PendingBlock(blk)
        for sub in blk.sub_offers:
            p.candidates[sub.id] = [e.bid.id for e in self.book.side(True, sub.direction, sub.period)
                                    if e.bid.price >= sub.price]
            p.status[sub.id] = "unmatched"
        self.pending.append(p)
        self.try_match_block(p)

    def _offer_candidate(self, entry: BookEntry) -> None:
        req = entry.bid
        affected = []
        for p in self.pending:
            for sub in p.block.sub_offers:
                if (sub.direction is req.direction and sub.period == req.period
                        and req.price >= sub.price):
                    p.candidates[sub.id].append(req.id)
                    if p not in affected:
                        affected.append(p)
        for p in affected:
            if p in self.pending:
                log.debug("request %s booked as candidate for block %s", req.id, p.block.id)
                self.try_match_block(p)

    def try_match_block(self, p: PendingBlock):
        """Attempt the all-or-nothing match of a pending block.

        Returns the committed trades, or None when the block keeps waiting.
        """
        plan = {}
        for sub in p.block.sub_offers:
            cands = [rid for rid in p.candidates[sub.id] if rid in self._requests]
            p.candidates[sub.id] = cands
            p.status[sub.id] = "unmatched"
            p.assignment.pop(sub.id, None)
            if not cands:
                return None
            if len(cands) == 1:
                e = self._requests[cands[0]]
                q_cap = min(sub.quantity, e.remaining)
                q = quantity_max(self.flows[:, sub.period], self.network, self.ptdf, sub.node,
                                 e.bid.node, sub.direction, q_cap, allow_overloaded=True)
                if q < sub.quantity * (1 - 1e-9) - EPS:
                    return None
                chosen = {cands[0]: sub.quantity}
            else:
                chosen = self.select_block_requests(sub, cands, self.block_lp)
                if chosen is None:
                    return None
            p.status[sub.id] = "potential"
            p.assignment[sub.id] = chosen
            plan[sub.id] = chosen

        if not self._still_valid(p.block, plan):
            for sub in p.block.sub_offers:
                p.status[sub.id] = "unmatched"
                p.assignment.pop(sub.id, None)
            return None

        start = len(self.trades)
        for sub in p.block.sub_offers:
            for rid, q in plan[sub.id].items():
                self._execute(self._requests[rid], sub, q, block_id=p.block.id)
        self.match_round += 1
        self.pending.remove(p)
        self.committed_blocks.add(p.block.id)
        for sub in p.block.sub_offers:
            self.book.prune(True, sub.direction, sub.period)
        return self.trades[start:]

    def _still_valid(self, blk: BlockBid, plan: dict) -> bool:
        for sub in blk.sub_offers:
            t = sub.period
            delta = np.zeros(self.network.n_lines)
            for rid, q in plan[sub.id].items():
                e = self._requests.get(rid)
                if e is None or e.remaining < q - 1e-7:
                    return False
                delta += q * self.ptdf.transfer(sub.node, e.bid.node, sub.direction)
            f = self.flows[:, t]
            lower, upper = flow_window(self._limits, f)
            new = f + delta
            if np.any(new > upper + FEAS_TOL) or np.any(new < lower - FEAS_TOL):
                return False
        return True

    def select_block_requests(self, sub: Bid, candidates: list,
                              formulation: str = "ptdf") -> Optional[dict]:
        """Pick quantities from candidate requests covering ``sub`` in full.

        Minimises the sub-offer cost minus the value of the requests served,
        under nodal balance and the current line windows. ``formulation``
        picks the bus-angle model (``"angles"``) or the same program with the
        angles eliminated through the PTDF (``"ptdf"``, much smaller).
        Returns ``{request_id: quantity}`` or None when no full cover exists.
        """
        if formulation not in ("ptdf", "angles"):
            raise ValueError(f"unknown formulation {formulation!r}")
        t = sub.period
        if sum(self._requests[rid].remaining for rid in candidates) < sub.quantity - EPS:
            return None
        key = (sub.id, formulation, self._flow_version[t],
               tuple((rid, self._requests[rid].remaining) for rid in candidates))
        if key not in self._selection_cache:
            solver = self._selection_ptdf if formulation == "ptdf" else self._selection_angles
            self._selection_cache[key] = solver(sub, candidates)
        hit = self._selection_cache[key]
        return dict(hit) if hit is not None else None

    def _selection_ptdf(self, sub: Bid, candidates: list) -> Optional[dict]:
        t = sub.period
        lp = LinearProgram("min")
        pv, sens, caps = {}, [], []
        for rid in candidates:
            e = self._requests[rid]
            pv[rid] = lp.add_var(f"P[{rid}]", 0.0, e.remaining, cost=-e.bid.price)
            sens.append(self.ptdf.transfer(sub.node, e.bid.node, sub.direction))
            caps.append(e.remaining)
        lp.add_constraint({j: 1.0 for j in pv.values()}, "=", sub.quantity, name="cover")
        sens = np.array(sens)
        f = self.flows[:, t]
        lower, upper = flow_window(self._limits, f)
        # a line can only bind if the largest possible change reaches its window
        reach = np.abs(sens).T @ np.array(caps)
        cols = list(pv.values())
        for k in np.flatnonzero(self._limited):
            if f[k] + reach[k] <= upper[k] and f[k] - reach[k] >= lower[k]:
                continue
            expr = dict(zip(cols, sens[:, k]))
            lp.add_constraint(expr, "<=", upper[k] - f[k], name=f"limit+[{k}]")
            lp.add_constraint(expr, ">=", lower[k] - f[k], name=f"limit-[{k}]")
        lp.objective_constant = sub.price * sub.quantity
        return self._read_selection(sub, lp, pv)

    def _selection_angles(self, sub: Bid, candidates: list) -> Optional[dict]:
        net = self.network
        t = sub.period
        sign = sub.direction.sign
        lp = LinearProgram("min")
        pv = {}
        for rid in candidates:
            e = self._requests[rid]
            pv[rid] = lp.add_var(f"P[{rid}]", 0.0, e.remaining, cost=-e.bid.price)
        ref = net.index(net.reference)
        theta = [lp.add_var(f"delta[{n}]", *(0.0, 0.0) if i == ref else (-np.inf, np.inf))
                 for i, n in enumerate(net.nodes)]
        rows = [dict() for _ in net.nodes]
        for ln in net.lines:
            i, k = net.index(ln.from_node), net.index(ln.to_node)
            for a, b in ((i, k), (k, i)):
                rows[a][theta[a]] = rows[a].get(theta[a], 0.0) + ln.susceptance
                rows[a][theta[b]] = rows[a].get(theta[b], 0.0) - ln.susceptance
        for rid in candidates:
            i = net.index(self._requests[rid].bid.node)
            rows[i][pv[rid]] = rows[i].get(pv[rid], 0.0) + sign
        rhs = self.injection[:, t].copy()
        rhs[net.index(sub.node)] += sign * sub.quantity
        for i, row in enumerate(rows):
            lp.add_constraint(row, "=", rhs[i], name=f"balance[{net.nodes[i]}]")
        lower, upper = flow_window(self._limits, self.flows[:, t])
        for k, ln in enumerate(net.lines):
            if not self._limited[k]:
                continue
            i, j = net.index(ln.from_node), net.index(ln.to_node)
            expr = {theta[i]: ln.susceptance, theta[j]: -ln.susceptance}
            lp.add_constraint(expr, "<=", upper[k], name=f"limit+[{k}]")
            lp.add_constraint(expr, ">=", lower[k], name=f"limit-[{k}]")
        lp.objective_constant = sub.price * sub.quantity
        return self._read_selection(sub, lp, pv)

    @staticmethod
    def _read_selection(sub: Bid, lp: LinearProgram, pv: dict) -> Optional[dict]:
        res = solve_lp(lp)
        if res.status is Status.INFEASIBLE:
            return None
        if res.status is not Status.OPTIMAL:
            raise RuntimeError(f"block request selection failed: {res.status}")
        chosen = {rid: float(res.x[j]) for rid, j in pv.items() if res.x[j] > EPS}
        total = sum(chosen.values())
        if total <= EPS:
            return None
        # absorb solver round-off so the sub-offer is covered exactly
        scale = sub.quantity / total
        return {rid: q * scale for rid, q in chosen.items()}


def run_continuous(instance: Instance, order: Optional[Iterable[str]] = None,
                   ptdf: Optional[PtdfMatrix] = None, block_lp: str = "ptdf") -> MarketOutcome:
    """Feed every bid of ``instance`` to a fresh engine in arrival order.

    ``order`` (bid/block ids) overrides the instance's arrival indices.
    """
    if order is not None:
        instance = instance.with_arrival_order(list(order))
    market = ContinuousMarket(instance.network, instance.setpoint, ptdf, block_lp)
    for b in instance.all_bids():
        market.submit(b)
    return market.outcome()
