"""Domain types for local flexibility trading.

Units: quantities are energies in kWh per one-hour period, prices are in
EUR/kWh and line limits share the quantity unit.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence, Union

import numpy as np

UNLIMITED = 1e12
BALANCE_TOL = 1e-6


class Side(str, enum.Enum):
    REQUEST = "request"
    OFFER = "offer"


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"

    @property
    def sign(self) -> int:
        """Injection sign applied at the offer node when this direction trades."""
        return 1 if self is Direction.UP else -1


class UnknownBidError(KeyError):
    pass


@dataclass(frozen=True)
class Bid:
    id: str
    side: Side
    direction: Direction
    node: Hashable
    period: int
    quantity: float
    price: float
    arrival_index: int = 0
    block_ref: Optional[str] = None

    @property
    def is_request(self) -> bool:
        return self.side is Side.REQUEST

    @property
    def is_offer(self) -> bool:
        return self.side is Side.OFFER


@dataclass(frozen=True)
class BlockBid:
    """All-or-nothing bundle of single offers at one node."""

    id: str
    node: Hashable
    sub_offers: tuple
    arrival_index: int = 0

    @property
    def cost(self) -> float:
        return sum(b.price * b.quantity for b in self.sub_offers)

    @property
    def quantity(self) -> float:
        return sum(b.quantity for b in self.sub_offers)

    def split(self) -> list:
        """The sub-offers as independent single offers (no block reference)."""
        return [dataclasses.replace(b, block_ref=None, arrival_index=self.arrival_index)
                for b in self.sub_offers]


AnyBid = Union[Bid, BlockBid]


@dataclass(frozen=True)
class Line:
    from_node: Hashable
    to_node: Hashable
    susceptance: float
    limit: float = UNLIMITED


@dataclass(frozen=True)
class Network:
    nodes: tuple
    lines: tuple
    reference: Hashable

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def index(self, node) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    @property
    def _index(self) -> dict:
        idx = self.__dict__.get("_idx_cache")
        if idx is None:
            idx = {n: i for i, n in enumerate(self.nodes)}
            object.__setattr__(self, "_idx_cache", idx)
        return idx

    @property
    def limits(self) -> np.ndarray:
        return np.array([ln.limit for ln in self.lines], dtype=float)

    def unconstrained(self) -> "Network":
        """Copy of the network with every line limit lifted to ``UNLIMITED``."""
        lines = tuple(dataclasses.replace(ln, limit=UNLIMITED) for ln in self.lines)
        return Network(self.nodes, lines, self.reference)


@dataclass(frozen=True)
class Setpoint:
    """Net nodal injections, one row per network node and one column per period."""

    injection: np.ndarray

    @property
    def n_periods(self) -> int:
        return self.injection.shape[1]

    def imbalance(self) -> np.ndarray:
        return self.injection.sum(axis=0)


@dataclass(frozen=True)
class Trade:
    request_id: str
    offer_id: str
    period: int
    direction: Direction
    quantity: float
    clearing_price: float
    match_round: int
    block_id: Optional[str] = None


@dataclass
class MarketOutcome:
    trades: list
    social_welfare: float
    volume: float
    accepted: dict = field(default_factory=dict)
    block_acceptance: dict = field(default_factory=dict)
    injection: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Instance:
    """A network, its pre-trade setpoint and every bid of one market run."""

    network: Network
    setpoint: Setpoint
    bids: tuple = ()
    blocks: tuple = ()

    @property
    def n_periods(self) -> int:
        return self.setpoint.n_periods

    @property
    def requests(self) -> list:
        return [b for b in self.bids if b.is_request]

    @property
    def offers(self) -> list:
        return [b for b in self.bids if b.is_offer]

    def all_bids(self) -> list:
        """Single bids and blocks together, ordered by arrival index."""
        return sorted([*self.bids, *self.blocks], key=lambda b: b.arrival_index)

    def bid_index(self) -> dict:
        return bid_index([*self.bids, *self.blocks])

    def with_single_bids(self) -> "Instance":
        """Blocks replaced by their sub-offers as independent single offers."""
        bids = list(self.bids)
        for blk in self.blocks:
            bids.extend(blk.split())
        return Instance(self.network, self.setpoint, tuple(bids), ())

    def without_network_limits(self) -> "Instance":
        return Instance(self.network.unconstrained(), self.setpoint, self.bids, self.blocks)

    def with_arrival_order(self, order: Sequence[str]) -> "Instance":
        """Reassign arrival indices so that bids/blocks arrive in ``order`` (ids).

        Single bids or blocks missing from ``order`` keep their relative order
        and arrive after the listed ones.
        """
        items = {b.id: b for b in [*self.bids, *self.blocks]}
        unknown = [i for i in order if i not in items]
        if unknown:
            raise UnknownBidError(unknown[0])
        rest = [b.id for b in self.all_bids() if b.id not in set(order)]
        rank = {bid_id: k for k, bid_id in enumerate([*order, *rest])}
        bids = tuple(dataclasses.replace(b, arrival_index=rank[b.id]) for b in self.bids)
        blocks = []
        for blk in self.blocks:
            k = rank[blk.id]
            subs = tuple(dataclasses.replace(s, arrival_index=k) for s in blk.sub_offers)
            blocks.append(dataclasses.replace(blk, arrival_index=k, sub_offers=subs))
        return Instance(self.network, self.setpoint, bids, tuple(blocks))


def bid_index(bids: Iterable[AnyBid]) -> dict:
    """Map every id (single bids, blocks and block sub-offers) to its object."""
    index = {}
    for b in bids:
        index[b.id] = b
        if isinstance(b, BlockBid):
            for sub in b.sub_offers:
                index[sub.id] = sub
    return index


def validate_instance(network: Network, setpoint: Setpoint, bids: Iterable[AnyBid]) -> list:
    """Return a list of human-readable violations; empty when well formed."""
    problems = []
    nodes = set(network.nodes)

    if network.reference not in nodes:
        problems.append(f"reference node {network.reference!r} not in network")
    for k, ln in enumerate(network.lines):
        if ln.from_node not in nodes or ln.to_node not in nodes:
            problems.append(f"line {k} references unknown node")
        if not ln.susceptance > 0:
            problems.append(f"line {k}: susceptance must be positive")
        if not ln.limit >= 0:
            problems.append(f"line {k}: negative limit")
    if not _connected(network):
        problems.append("network is not connected")

    inj = np.asarray(setpoint.injection, dtype=float)
    if inj.ndim != 2 or inj.shape[0] != network.n_nodes:
        problems.append(f"setpoint shape {inj.shape} does not match {network.n_nodes} nodes")
        n_periods = None
    else:
        n_periods = inj.shape[1]
        for t, s in enumerate(inj.sum(axis=0)):
            if abs(s) > BALANCE_TOL:
                problems.append(f"unbalanced setpoint in period {t}: net injection {s:.6g}")

    seen_ids = set()
    seen_arrivals = {}

    def check_single(b: Bid, in_block: Optional[str]):
        if b.id in seen_ids:
            problems.append(f"duplicate bid id {b.id!r}")
        seen_ids.add(b.id)
        if b.quantity < 0:
            problems.append(f"bid {b.id}: negative quantity")
        if b.price < 0:
            problems.append(f"bid {b.id}: negative price")
        if b.node not in nodes:
            problems.append(f"bid {b.id}: unknown node {b.node!r}")
        if n_periods is not None and not 0 <= b.period < n_periods:
            problems.append(f"bid {b.id}: period {b.period} outside horizon")
        if b.block_ref is not None and b.side is not Side.OFFER:
            problems.append(f"bid {b.id}: only offers may belong to a block")
        if in_block is None and b.block_ref is not None:
            problems.append(f"bid {b.id}: block_ref set on a stand-alone bid")

    for b in bids:
        if isinstance(b, BlockBid):
            if b.id in seen_ids:
                problems.append(f"duplicate bid id {b.id!r}")
            seen_ids.add(b.id)
            if len(b.sub_offers) < 2:
                problems.append(f"block {b.id}: block needs >=2 sub-offers")
            periods = [s.period for s in b.sub_offers]
            if len(set(periods)) != len(periods):
                problems.append(f"block {b.id}: sub-offer periods must be distinct")
            for s in b.sub_offers:
                check_single(s, b.id)
                if s.side is not Side.OFFER:
                    problems.append(f"block {b.id}: sub-offer {s.id} is not an offer")
                if s.node != b.node:
                    problems.append(f"block {b.id}: sub-offer {s.id} at a different node")
                if s.arrival_index != b.arrival_index:
                    problems.append(f"block {b.id}: sub-offer {s.id} arrival index differs")
        else:
            check_single(b, None)
        other = seen_arrivals.get(b.arrival_index)
        if other is not None:
            problems.append(f"arrival index {b.arrival_index} shared by {other} and {b.id}")
        seen_arrivals[b.arrival_index] = b.id
    return problems


def _connected(network: Network) -> bool:
    if not network.nodes:
        return False
    adj = {n: [] for n in network.nodes}
    for ln in network.lines:
        if ln.from_node in adj and ln.to_node in adj:
            adj[ln.from_node].append(ln.to_node)
            adj[ln.to_node].append(ln.from_node)
    start = network.nodes[0]
    seen = {start}
    stack = [start]
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(network.nodes)


def accepted_quantities(trades: Iterable[Trade]) -> dict:
    acc = {}
    for tr in trades:
        acc[tr.request_id] = acc.get(tr.request_id, 0.0) + tr.quantity
        acc[tr.offer_id] = acc.get(tr.offer_id, 0.0) + tr.quantity
    return acc


def social_welfare(outcome: MarketOutcome, bids: Iterable[AnyBid]) -> float:
    """Request value minus offer and block costs of the accepted quantities.

    Block sub-offers are all costs, whatever their direction. Clearing prices
    play no part.
    """
    index = bid_index(bids)
    accepted = outcome.accepted or accepted_quantities(outcome.trades)
    total = 0.0
    for bid_id, q in accepted.items():
        try:
            b = index[bid_id]
        except KeyError:
            raise UnknownBidError(bid_id) from None
        if isinstance(b, BlockBid):
            continue
        total += (b.price if b.is_request else -b.price) * q
    return total


def trade_welfare(trades: Iterable[Trade], bids: Iterable[AnyBid]) -> float:
    """Welfare recomputed trade by trade from submitted prices."""
    index = bid_index(bids)
    total = 0.0
    for tr in trades:
        try:
            total += tr.quantity * (index[tr.request_id].price - index[tr.offer_id].price)
        except KeyError as e:
            raise UnknownBidError(e.args[0]) from None
    return total
