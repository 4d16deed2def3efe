"""Command-line entry point: ``flexclear generate|clear|compare|bounds``.

Exit codes: 0 ok, 2 configuration error, 3 invalid instance, 4 solver
limit, 5 instance too large for sequence analysis.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .auction import run_auction
from .bounds import (MAX_NODES, MAX_OFFERS, BoundsReport, SizeGuardError, permutation_oracle,
                     reformulate_and_solve)
from .casegen import CASES, CaseConfig, ConfigError, build_instance, run_scenarios
from .continuous import run_continuous
from .formats import (FormatError, dumps, load_instance, read_json, read_sequence,
                      save_instance, sha256_file, write_csv, write_json)
from .model import UnknownBidError, validate_instance
from .optimize import SolverLimitError
from .powerflow import compute_ptdf, flow_window

EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_SOLVER, EXIT_SIZE = 0, 2, 3, 4, 5
SEED_ENV = "FLEXCLEAR_SEED"

log = logging.getLogger("flexclear")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers --------------------------------------------------------------

class Manifest:
    """Provenance record written as manifest.json beside a command's outputs."""

    def __init__(self, command: str, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.inputs = {}
        self.outputs = []
        self.config_hash = None
        self.seed = None
        self.params = {}
        self._start = time.perf_counter()
        self.timings = {}

    def add_input(self, path) -> None:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)

    def time(self, label: str, since: float) -> None:
        self.timings[label] = round(time.perf_counter() - since, 6)

    def write(self) -> None:
        self.timings["total"] = round(time.perf_counter() - self._start, 6)
        write_json(self.out_dir / "manifest.json", {
            "command": self.command, "artifact_version": __version__,
            "config_hash": self.config_hash, "seed": self.seed, "parameters": self.params,
            "inputs": self.inputs, "outputs": sorted(self.outputs),
            "wall_clock_seconds": self.timings,
        })


def _load(instance_dir, manifest: Manifest):
    d = Path(instance_dir)
    try:
        inst = load_instance(d)
    except FormatError as e:
        raise CliError(str(e), EXIT_INVALID) from e
    for name in ("network.json", "setpoint.json", "bids.json"):
        manifest.add_input(d / name)
    problems = validate_instance(inst.network, inst.setpoint, [*inst.bids, *inst.blocks])
    if problems:
        raise CliError("instance is invalid:\n  " + "\n  ".join(problems), EXIT_INVALID)
    return inst


def _seed_override(value):
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return value
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_CONFIG) from None


# -- generate -------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    man = Manifest("generate", out)
    data = {}
    if args.config:
        try:
            data = read_json(args.config)
        except FormatError as e:
            raise CliError(f"config: {e}", EXIT_CONFIG) from e
        if not isinstance(data, dict):
            raise CliError(f"{args.config}: expected a JSON object", EXIT_CONFIG)
        data = {k: v for k, v in data.items() if k != "schema_version"}
        man.add_input(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        cfg = CaseConfig.from_dict(data)
    except ConfigError as e:
        raise CliError(f"config: {e}", EXIT_CONFIG) from e
    cfg.seed = _seed_override(cfg.seed)
    man.seed = cfg.seed
    canon = json.dumps({k: list(v) if isinstance(v, tuple) else v
                        for k, v in vars(cfg).items()}, sort_keys=True)
    man.config_hash = hashlib.sha256(canon.encode()).hexdigest()
    man.params = json.loads(canon)
    t0 = time.perf_counter()
    inst = build_instance(cfg)
    man.time("generate", t0)
    for p in save_instance(inst, out):
        man.outputs.append(p.name)
    man.write()
    print(f"wrote {len(inst.requests)} requests, {len(inst.offers)} offers and "
          f"{len(inst.blocks)} block bids to {out}")
    return EXIT_OK


# -- clear ----------------------------------------------------------------

def cmd_clear(args) -> int:
    out = Path(args.out)
    man = Manifest(f"clear {args.mode}", out)
    inst = _load(args.instance, man)
    man.params = {"mode": args.mode, "backend": args.backend}
    order = None
    if args.sequence:
        if args.mode == "auction":
            log.warning("auction clearing does not depend on arrival order; "
                        "ignoring %s", args.sequence)
        else:
            try:
                order = read_sequence(args.sequence)
            except FormatError as e:
                raise CliError(str(e), EXIT_INVALID) from e
            man.add_input(args.sequence)
    t0 = time.perf_counter()
    try:
        if args.mode == "continuous":
            res = run_continuous(inst, order=order)
        else:
            res = run_auction(inst, backend=args.backend)
    except UnknownBidError as e:
        raise CliError(f"sequence names unknown bid {e.args[0]!r}", EXIT_INVALID) from e
    except SolverLimitError as e:
        raise CliError(f"solver limit: {e}", EXIT_SOLVER) from e
    man.time("clear", t0)

    write_csv(out / "trades.csv",
              ["match_round", "period", "direction", "request_id", "offer_id", "block_id",
               "quantity", "clearing_price"],
              [(t.match_round, t.period, t.direction, t.request_id, t.offer_id,
                t.block_id or "", t.quantity, t.clearing_price) for t in res.trades])
    write_csv(out / "flows.csv",
              ["period", "line", "from", "to", "flow", "initial_flow", "limit", "overload",
               "violation"], _flow_rows(inst, res.injection))
    write_json(out / "outcome.json", {
        "mode": args.mode, "social_welfare": res.social_welfare, "volume": res.volume,
        "n_trades": len(res.trades), "accepted": res.accepted,
        "block_acceptance": res.block_acceptance,
    })
    man.outputs += ["trades.csv", "flows.csv", "outcome.json"]
    man.write()
    print(f"{args.mode}: welfare {res.social_welfare:.6f} EUR, volume {res.volume:.3f} kWh, "
          f"{len(res.trades)} trades")
    return EXIT_OK


def _flow_rows(inst, injection):
    """Per line and period: flow, pre-trade flow, raw overload and the excess
    over the admissible window (limit, or the pre-trade flow if larger)."""
    net = inst.network
    ptdf = compute_ptdf(net)
    f0 = ptdf.flows(inst.setpoint.injection)
    f1 = ptdf.flows(injection)
    limits = net.limits
    rows = []
    for t in range(inst.n_periods):
        lower, upper = flow_window(limits, f0[:, t])
        for k, ln in enumerate(net.lines):
            lim = float(limits[k])
            overload = max(0.0, abs(f1[k, t]) - lim)
            excess = max(0.0, f1[k, t] - upper[k], lower[k] - f1[k, t])
            rows.append((t, k, ln.from_node, ln.to_node, float(f1[k, t]), float(f0[k, t]),
                         "" if lim >= 1e11 else lim, float(overload), float(excess)))
    return rows


# -- compare --------------------------------------------------------------

def cmd_compare(args) -> int:
    out = Path(args.out)
    man = Manifest("compare", out)
    inst = _load(args.instance, man)
    seed = _seed_override(args.seed)
    man.seed = seed
    man.params = {"scenarios": args.scenarios, "backend": args.backend}
    t0 = time.perf_counter()
    try:
        table = run_scenarios(inst, args.scenarios, seed, backend=args.backend,
                              workers=max(1, args.threads))
    except SolverLimitError as e:
        raise CliError(f"solver limit: {e}", EXIT_SOLVER) from e
    man.time("scenarios", t0)
    write_csv(out / "scenarios.csv",
              ["scenario", "case", "welfare", "volume", "auction_welfare", "auction_volume",
               "welfare_pct", "volume_pct"],
              [(r.scenario, r.case, r.welfare, r.volume, r.auction_welfare, r.auction_volume,
                100 * r.welfare_ratio, 100 * r.volume_ratio) for r in table.rows])
    summary = table.summary()
    rows = []
    for case in CASES:
        if case not in summary:
            continue
        s = summary[case]
        rows.append((case, s["welfare"]["Average"], s["welfare"]["Max"], s["welfare"]["Min"],
                     s["volume"]["Average"], s["volume"]["Max"], s["volume"]["Min"]))
    header = ["case", "welfare_average", "welfare_max", "welfare_min",
              "volume_average", "volume_max", "volume_min"]
    write_csv(out / "table.csv", header, rows)
    write_json(out / "summary.json", {
        "unit": "percent of auction", "scenarios": args.scenarios, "seed": seed,
        "cases": _finite_or_null(summary),
        "auction": {c: {"welfare": a.social_welfare, "volume": a.volume}
                    for c, a in table.auction.items()},
    })
    man.outputs += ["scenarios.csv", "table.csv", "summary.json"]
    man.write()
    print(_format_table(rows))
    return EXIT_OK


def _finite_or_null(obj):
    # ratios are undefined when the auction clears nothing
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _format_table(rows) -> str:
    lines = [f"{'':<11}{'Welfare (% of auction)':^27}{'Volume (% of auction)':^27}",
             f"{'case':<11}" + "".join(f"{h:>9}" for h in ("Average", "Max", "Min") * 2)]
    for case, *vals in rows:
        lines.append(f"{case:<11}" + "".join(f"{v:9.1f}" for v in vals))
    return "\n".join(lines)


# -- bounds ---------------------------------------------------------------

def cmd_bounds(args) -> int:
    out = Path(args.out)
    man = Manifest("bounds", out)
    inst = _load(args.instance, man)
    senses = ("min", "max") if args.sense == "both" else (args.sense,)
    man.params = {"sense": args.sense, "oracle": args.oracle, "node_limit": args.node_limit}
    results, code = {}, EXIT_OK
    t0 = time.perf_counter()
    try:
        for s in senses:
            results[s] = reformulate_and_solve(inst, s, node_limit=args.node_limit,
                                               max_offers=args.max_offers, max_nodes=MAX_NODES)
            if results[s].status != "optimal":
                code = EXIT_SOLVER
    except SizeGuardError as e:
        raise CliError(f"{e}\nsequence bounds are meant for small instances (at most "
                       f"{args.max_offers} offers and blocks, {MAX_NODES} nodes); use "
                       "'compare' for sampled arrival orders instead", EXIT_SIZE) from e
    except SolverLimitError as e:
        raise CliError(f"solver limit before any solution: {e}", EXIT_SOLVER) from e
    man.time("bounds", t0)
    auction = run_auction(inst).social_welfare
    best = results.get("max")
    if best is not None and not best.tight:
        best.cap = auction
    report = BoundsReport(results.get("min"), best, auction)
    doc = report.to_dict()
    if args.oracle:
        t1 = time.perf_counter()
        orc = permutation_oracle(inst, max_offers=args.max_offers, workers=max(1, args.threads))
        man.time("oracle", t1)
        doc["oracle"] = orc.to_dict()
    write_json(out / "bounds.json", doc)
    man.outputs.append("bounds.json")
    man.write()
    for label in ("worst", "best"):
        if label in doc:
            lo, hi = doc[label]["interval"]
            pct = doc[label]["percent_of_auction"]
            shown = f"{lo:.6f}" if abs(hi - lo) <= 1e-9 else f"[{lo:.6f}, {hi:.6f}]"
            extra = "" if pct[0] is None else f" ({pct[0]:.1f}% of auction)"
            print(f"{label}: {shown}{extra} tight={doc[label]['relaxation_tight']} "
                  f"sequence={' '.join(doc[label]['witness'])}")
    if args.oracle:
        print(f"oracle: min {doc['oracle']['min_welfare']:.6f} "
              f"max {doc['oracle']['max_welfare']:.6f} over {len(doc['oracle']['table'])} sequences")
    if code == EXIT_SOLVER:
        print("solver stopped on its node limit; values are the best found", file=sys.stderr)
    return code


# -- entry ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flexclear", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for scenario and oracle runs (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a 33-bus case-study instance")
    g.add_argument("--config", help="JSON file with case parameters")
    g.add_argument("--seed", type=int, help=f"RNG seed (the {SEED_ENV} env var wins)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("clear", help="clear an instance continuously or by auction")
    c.add_argument("mode", choices=("continuous", "auction"))
    c.add_argument("instance", help="directory with network/setpoint/bids JSON")
    c.add_argument("--sequence", help="JSON list of bid ids giving the arrival order")
    c.add_argument("--backend", default="auto", choices=("auto", "embedded", "highs"))
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_clear)

    m = sub.add_parser("compare", help="continuous clearing over random arrival orders "
                                       "against the auction, four cases")
    m.add_argument("instance")
    m.add_argument("--scenarios", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--backend", default="auto", choices=("auto", "embedded", "highs"))
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_compare)

    b = sub.add_parser("bounds", help="worst and best arrival sequences of a small instance")
    b.add_argument("instance")
    b.add_argument("--sense", choices=("min", "max", "both"), default="both")
    b.add_argument("--oracle", action="store_true", help="also enumerate every sequence")
    b.add_argument("--node-limit", type=int, default=1_000_000)
    b.add_argument("--max-offers", type=int, default=MAX_OFFERS)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
