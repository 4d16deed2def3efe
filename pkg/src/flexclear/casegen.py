"""Case-study instances on the 33-bus feeder and arrival-order scenarios.

An instance is built in four steps: the grid fixture, a 24-period setpoint
from load and generation profiles, the DSO requests that a DC-OPF with
shedding/curtailment recourse needs to make the setpoint feasible, and random
flexibility offers and block bids. :func:`run_scenarios` then replays the
same bids in many random arrival orders.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .auction import run_auction
from .continuous import run_continuous
from .model import (Bid, BlockBid, Direction, Instance, Line, Network, Setpoint, Side,
                    validate_instance)
from .optimize import LinearProgram, solve_lp
from .powerflow import FEAS_TOL, compute_ptdf, violations

GRID33_SHA256 = "b46d11dc4e00fbcf38e4a2250e5c15998653219cd5d84ac993fa511f2bec0d1d"

CASES = ("BB and NC", "SB and NC", "BB", "SB")

# Normalised daily shapes, hour 0..23.
LOAD_PROFILE = np.array([
    0.62, 0.57, 0.54, 0.53, 0.55, 0.64, 0.82, 0.98, 1.00, 0.99, 0.90, 0.84,
    0.80, 0.79, 0.80, 0.86, 0.95, 1.05, 1.10, 1.10, 1.06, 0.95, 0.82, 0.70])
PV_PROFILE = np.array([
    0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.10, 0.25, 0.42, 0.60, 0.75, 0.85,
    0.88, 0.84, 0.74, 0.58, 0.40, 0.22, 0.08, 0.01, 0.0, 0.0, 0.0, 0.0])
WIND_PROFILE = np.array([
    0.80, 0.82, 0.85, 0.84, 0.80, 0.76, 0.72, 0.70, 0.62, 0.50, 0.42, 0.38,
    0.36, 0.37, 0.40, 0.48, 0.58, 0.68, 0.76, 0.80, 0.82, 0.82, 0.81, 0.80])
PROFILES = {"pv": PV_PROFILE, "wind": WIND_PROFILE}


class FixtureError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class CaseConfig:
    seed: int = 0
    periods: int = 24
    up_request_price: tuple = (0.250, 0.300)
    down_request_price: tuple = (0.035, 0.045)
    offer_price: tuple = (0.030, 0.040)
    block_price: tuple = (0.020, 0.035)
    price_tick: float = 0.001
    n_offers: int = 40
    offer_quantity: tuple = (10.0, 80.0)
    n_blocks: int = 40
    block_span: tuple = (2, 3)
    block_quantity: tuple = (20.0, 100.0)
    n_scenarios: int = 100
    with_blocks: bool = True
    with_network_constraints: bool = True
    shed_weight: float = 100.0
    curtail_weight: float = 1.0

    def validate(self) -> None:
        for name in ("up_request_price", "down_request_price", "offer_price", "block_price",
                     "offer_quantity", "block_quantity", "block_span"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if lo < 0:
                raise ConfigError(f"{name}: negative bound {lo}")
        if self.block_span[0] < 2:
            raise ConfigError("block_span: blocks need at least 2 periods")
        if self.block_span[1] > self.periods:
            raise ConfigError("block_span: longer than the horizon")
        if not 1 <= self.periods <= 24:
            raise ConfigError("periods: must be between 1 and 24")
        for name in ("n_offers", "n_blocks", "n_scenarios"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "CaseConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        kw = {}
        for k, v in data.items():
            default = known[k].default
            if isinstance(default, tuple):
                if not (isinstance(v, (list, tuple)) and len(v) == 2):
                    raise ConfigError(f"{k}: expected a [low, high] pair")
                kw[k] = tuple(v)
            elif isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{k}: expected true/false")
                kw[k] = v
            elif isinstance(default, (int, float)):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{k}: expected a number")
                if isinstance(default, int) and v != int(v):
                    raise ConfigError(f"{k}: expected an integer, got {v}")
                kw[k] = type(default)(v)
            else:
                kw[k] = v
        cfg = cls(**kw)
        cfg.validate()
        return cfg


def _round_price(x, tick):
    return round(round(x / tick) * tick, 6) if tick else float(x)


# -- grid ----------------------------------------------------------------

def load_grid33_data() -> dict:
    raw = resources.files("flexclear").joinpath("data/grid33.json").read_bytes()
    if hashlib.sha256(raw).hexdigest() != GRID33_SHA256:
        raise FixtureError("grid33.json checksum mismatch")
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise FixtureError(f"grid33.json is corrupt: {e}") from e


def build_grid_33() -> Network:
    data = load_grid33_data()
    lines = tuple(Line(ln["from"], ln["to"], ln["susceptance"], float(ln["limit"]))
                  for ln in data["lines"])
    return Network(tuple(data["nodes"]), lines, data["reference"])


def default_profiles(network: Optional[Network] = None, periods: int = 24):
    """Nodal load and generation (kWh per period) for the feeder fixture."""
    data = load_grid33_data()
    network = network or build_grid_33()
    N = network.n_nodes
    load = np.zeros((N, periods))
    gen = np.zeros((N, periods))
    for node, kw in data["loads_kw"].items():
        load[network.index(int(node))] = kw * LOAD_PROFILE[:periods]
    for g in data["generators"]:
        gen[network.index(g["node"])] += g["capacity_kw"] * PROFILES[g["kind"]][:periods]
    return load, gen


# -- setpoint ------------------------------------------------------------

def build_setpoint(network: Network, load: np.ndarray, generation: np.ndarray,
                   max_scale: float = 10.0, step: float = 1.05) -> Setpoint:
    """Net injections (generation minus load), balanced at the reference node.

    Profiles are scaled up uniformly until at least one line is overloaded in
    at least one period.
    """
    load = np.asarray(load, dtype=float)
    generation = np.asarray(generation, dtype=float)
    if load.shape != generation.shape or load.shape[0] != network.n_nodes:
        raise ValueError("profiles must have one row per node and matching periods")
    ptdf = compute_ptdf(network)
    ref = network.index(network.reference)
    scale = 1.0
    while scale <= max_scale + 1e-12:
        inj = scale * (generation - load)
        inj[ref] = 0.0
        inj[ref] = -inj.sum(axis=0)
        if np.any(violations(network, ptdf.flows(inj)) > FEAS_TOL):
            return Setpoint(inj)
        scale *= step
    raise ValueError(f"no overload reachable within {max_scale}x scaling")


# -- requests ------------------------------------------------------------

def derive_requests(network: Network, setpoint: Setpoint, config: Optional[CaseConfig] = None,
                    rng: Optional[np.random.Generator] = None) -> list:
    """DSO requests from a per-period DC-OPF with shedding/curtailment recourse.

    Shedding raises the net injection of a node (at most its net load),
    curtailment lowers it (at most its net generation); the reference node
    balances. Shedding at node n becomes an upward request at n, curtailment a
    downward one.
    """
    config = config or CaseConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ptdf = compute_ptdf(network)
    limits = network.limits
    ref = network.index(network.reference)
    inj = setpoint.injection
    flows = ptdf.flows(inj)
    requests = []
    for t in range(setpoint.n_periods):
        f = flows[:, t]
        if not np.any(np.abs(f) > limits + FEAS_TOL):
            continue
        lp = LinearProgram("min")
        shed, curt = {}, {}
        for i in range(network.n_nodes):
            if i == ref:
                continue
            if inj[i, t] < 0:
                shed[i] = lp.add_var(f"shed[{i}]", 0.0, -inj[i, t], cost=config.shed_weight)
            elif inj[i, t] > 0:
                curt[i] = lp.add_var(f"curt[{i}]", 0.0, inj[i, t], cost=config.curtail_weight)
        for k in range(network.n_lines):
            if limits[k] >= 1e11:
                continue
            row = {}
            for i, j in shed.items():
                row[j] = ptdf.matrix[k, i]
            for i, j in curt.items():
                row[j] = -ptdf.matrix[k, i]
            lp.add_constraint(row, "<=", limits[k] - f[k], name=f"limit+[{k}]")
            lp.add_constraint(row, ">=", -limits[k] - f[k], name=f"limit-[{k}]")
        res = solve_lp(lp)
        if not res.ok:
            raise RuntimeError(f"request derivation LP failed in period {t}: {res.status}")
        for kind, vars_ in (("U", shed), ("D", curt)):
            for i, j in vars_.items():
                q = float(res.x[j])
                if q <= 1e-6:
                    continue
                if kind == "U":
                    price = _round_price(rng.uniform(*config.up_request_price), config.price_tick)
                    d = Direction.UP
                else:
                    price = _round_price(rng.uniform(*config.down_request_price), config.price_tick)
                    d = Direction.DOWN
                requests.append(Bid(f"R{t}.{network.nodes[i]}.{kind}", Side.REQUEST, d,
                                    network.nodes[i], t, round(q, 6), price))
    return requests


# -- offers --------------------------------------------------------------

def generate_offers(config: CaseConfig, network: Network,
                    rng: Optional[np.random.Generator] = None) -> list:
    """Random single offers and asymmetric block bids.

    With ``config.with_blocks`` false the blocks are returned as independent
    single offers instead.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    T = config.periods
    nodes = network.nodes
    out = []
    for k in range(config.n_offers):
        d = Direction.UP if rng.random() < 0.5 else Direction.DOWN
        out.append(Bid(f"O{k}", Side.OFFER, d, nodes[int(rng.integers(len(nodes)))],
                       int(rng.integers(T)), round(float(rng.uniform(*config.offer_quantity)), 3),
                       _round_price(rng.uniform(*config.offer_price), config.price_tick)))
    for k in range(config.n_blocks):
        node = nodes[int(rng.integers(len(nodes)))]
        span = int(rng.integers(config.block_span[0], config.block_span[1] + 1))
        start = int(rng.integers(T - span + 1))
        dirs = [Direction.UP if rng.random() < 0.5 else Direction.DOWN for _ in range(span)]
        if len(set(dirs)) == 1:
            flip = int(rng.integers(span))
            dirs[flip] = Direction.DOWN if dirs[flip] is Direction.UP else Direction.UP
        bid_id = f"K{k}"
        subs = tuple(
            Bid(f"{bid_id}.{s}", Side.OFFER, dirs[s], node, start + s,
                round(float(rng.uniform(*config.block_quantity)), 3),
                _round_price(rng.uniform(*config.block_price), config.price_tick), 0, bid_id)
            for s in range(span))
        blk = BlockBid(bid_id, node, subs)
        out.extend(blk.split() if not config.with_blocks else [blk])
    return out


def build_instance(config: Optional[CaseConfig] = None) -> Instance:
    """Full case-study instance (BB and NC form) for one seed."""
    config = config or CaseConfig()
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    req_rng, off_rng, order_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    network = build_grid_33()
    load, gen = default_profiles(network, config.periods)
    setpoint = build_setpoint(network, load, gen)
    requests = derive_requests(network, setpoint, config, req_rng)
    offers = generate_offers(config, network, off_rng)
    items = [*requests, *offers]
    order = order_rng.permutation(len(items))
    bids, blocks = [], []
    for rank, k in enumerate(order):
        b = items[k]
        if isinstance(b, BlockBid):
            subs = tuple(dataclasses.replace(s, arrival_index=rank) for s in b.sub_offers)
            blocks.append(dataclasses.replace(b, sub_offers=subs, arrival_index=rank))
        else:
            bids.append(dataclasses.replace(b, arrival_index=rank))
    inst = Instance(network, setpoint, tuple(bids), tuple(blocks))
    if not config.with_network_constraints:
        inst = inst.without_network_limits()
    problems = validate_instance(inst.network, inst.setpoint, [*inst.bids, *inst.blocks])
    if problems:
        raise RuntimeError("generated instance is invalid: " + "; ".join(problems))
    return inst


def case_variants(instance: Instance) -> dict:
    """The four comparison cases built from one instance with block bids."""
    sb = instance.with_single_bids()
    return {
        "BB and NC": instance,
        "SB and NC": sb,
        "BB": instance.without_network_limits(),
        "SB": sb.without_network_limits(),
    }


# -- scenarios -----------------------------------------------------------

@dataclass
class ScenarioRow:
    scenario: int
    case: str
    welfare: float
    volume: float
    auction_welfare: float
    auction_volume: float

    @property
    def welfare_ratio(self) -> float:
        return self.welfare / self.auction_welfare if self.auction_welfare > 0 else math.nan

    @property
    def volume_ratio(self) -> float:
        return self.volume / self.auction_volume if self.auction_volume > 0 else math.nan


@dataclass
class ScenarioTable:
    rows: list = field(default_factory=list)
    auction: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """Average/Max/Min of welfare and volume as % of the auction, per case."""
        out = {}
        for case in dict.fromkeys(r.case for r in self.rows):
            rs = [r for r in self.rows if r.case == case]
            w = np.array([r.welfare_ratio for r in rs]) * 100
            v = np.array([r.volume_ratio for r in rs]) * 100
            out[case] = {
                "welfare": {"Average": float(np.mean(w)), "Max": float(np.max(w)),
                            "Min": float(np.min(w))},
                "volume": {"Average": float(np.mean(v)), "Max": float(np.max(v)),
                           "Min": float(np.min(v))},
            }
        return out


def scenario_orders(instance: Instance, n_scenarios: int, seed: int) -> list:
    """Uniformly random interleavings of every bid and block id."""
    ids = [b.id for b in instance.all_bids()]
    streams = np.random.SeedSequence(seed).spawn(n_scenarios)
    return [[ids[k] for k in np.random.default_rng(s).permutation(len(ids))] for s in streams]


def run_scenarios(instance: Instance, n_scenarios: int = 100, seed: int = 0,
                  cases: Optional[dict] = None, keep_outcomes: bool = False,
                  backend: str = "auto", workers: int = 1) -> ScenarioTable:
    """Continuous clearing under random arrival orders against the auction.

    ``cases`` maps labels to instances (default: :func:`case_variants`). The
    same arrival order is used in every case; in single-bid cases a block's
    sub-offers arrive together where the block would have. ``workers > 1``
    spreads scenarios over processes without changing the result.
    """
    cases = cases if cases is not None else case_variants(instance)
    table = ScenarioTable()
    for label, inst in cases.items():
        table.auction[label] = run_auction(inst, backend=backend)
    members = {k.id: [sub.id for sub in k.sub_offers] for k in instance.blocks}
    orders = scenario_orders(instance, n_scenarios, seed)
    jobs = [(cases, order, members) for order in orders]
    if workers > 1 and n_scenarios > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scenario, jobs, chunksize=max(1, n_scenarios // (4 * workers))))
    else:
        ptdfs = {label: compute_ptdf(inst.network) for label, inst in cases.items()}
        results = [_scenario(job, ptdfs) for job in jobs]
    for s, per_case in enumerate(results):
        for label, out in per_case.items():
            auc = table.auction[label]
            table.rows.append(ScenarioRow(s, label, out.social_welfare, out.volume,
                                          auc.social_welfare, auc.volume))
            if keep_outcomes:
                table.outcomes[s, label] = out
    return table


def _scenario(job, ptdfs=None) -> dict:
    cases, order, members = job
    return {label: run_continuous(_reorder(inst, order, members),
                                  ptdf=None if ptdfs is None else ptdfs[label])
            for label, inst in cases.items()}


def _reorder(inst: Instance, order: list, members: dict) -> Instance:
    """Arrival order for ``inst`` following ``order`` (ids of the base case).

    ``members`` maps block ids to sub-offer ids; in cases where a block was
    split, its sub-offers take the block's slot.
    """
    present = {b.id for b in [*inst.bids, *inst.blocks]}
    expanded = []
    for bid_id in order:
        if bid_id in present:
            expanded.append(bid_id)
        else:
            expanded.extend(s for s in members.get(bid_id, ()) if s in present)
    return inst.with_arrival_order(expanded)
