"""File formats: JSON instances and reports, CSV tables, atomic writes.

Every JSON document carries ``schema_version``. Unlimited line capacity is
written as ``null``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .model import UNLIMITED, Bid, BlockBid, Direction, Instance, Line, Network, Setpoint, Side

SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Input file does not follow its format; the message names the field."""


# -- atomic output -------------------------------------------------------

def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj: dict) -> None:
    write_text_atomic(path, dumps({"schema_version": SCHEMA_VERSION, **obj}))


def write_csv(path, header: list, rows: Iterable) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    write_text_atomic(path, buf.getvalue())


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    if isinstance(v, (Direction, Side)):
        return v.value
    return v


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- input ----------------------------------------------------------------

def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise FormatError(f"{path}: file not found") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if isinstance(data, dict):
        version = data.get("schema_version")
        if version is not None and version != SCHEMA_VERSION:
            raise FormatError(f"{path}: schema_version {version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
    return data


def _need(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing field '{key}'")
    return obj[key]


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise FormatError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _enum(cls, v, where: str):
    try:
        return cls(v)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise FormatError(f"{where}: {v!r} is not one of {allowed}") from None


# -- network ---------------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "nodes": list(net.nodes),
        "reference": net.reference,
        "lines": [{"from": ln.from_node, "to": ln.to_node, "susceptance": ln.susceptance,
                   "limit": None if ln.limit >= UNLIMITED else ln.limit} for ln in net.lines],
    }


def network_from_dict(data: dict, where: str = "network") -> Network:
    nodes = _need(data, "nodes", where)
    if not isinstance(nodes, list) or not nodes:
        raise FormatError(f"{where}.nodes: expected a non-empty list")
    lines = []
    for k, ln in enumerate(_need(data, "lines", where)):
        w = f"{where}.lines[{k}]"
        limit = ln.get("limit") if isinstance(ln, dict) else None
        lines.append(Line(_need(ln, "from", w), _need(ln, "to", w),
                          _number(_need(ln, "susceptance", w), f"{w}.susceptance"),
                          UNLIMITED if limit is None else _number(limit, f"{w}.limit")))
    return Network(tuple(nodes), tuple(lines), _need(data, "reference", where))


# -- setpoint --------------------------------------------------------------

def setpoint_to_dict(sp: Setpoint, net: Network) -> dict:
    inj = np.asarray(sp.injection, dtype=float)
    return {"nodes": list(net.nodes), "periods": int(inj.shape[1]),
            "injection": [[float(v) for v in row] for row in inj]}


def setpoint_from_dict(data: dict, net: Network, where: str = "setpoint") -> Setpoint:
    rows = _need(data, "injection", where)
    nodes = data.get("nodes", list(net.nodes))
    if list(nodes) != list(net.nodes):
        raise FormatError(f"{where}.nodes: node order differs from the network")
    if not isinstance(rows, list) or len(rows) != net.n_nodes:
        raise FormatError(f"{where}.injection: expected one row per node ({net.n_nodes})")
    width = {len(r) if isinstance(r, list) else -1 for r in rows}
    if len(width) != 1 or -1 in width:
        raise FormatError(f"{where}.injection: rows must be lists of equal length")
    inj = np.array([[_number(v, f"{where}.injection[{i}][{t}]") for t, v in enumerate(r)]
                    for i, r in enumerate(rows)])
    periods = data.get("periods")
    if periods is not None and periods != inj.shape[1]:
        raise FormatError(f"{where}.periods: {periods} but rows hold {inj.shape[1]} values")
    return Setpoint(inj)


# -- bids ---------------------------------------------------------------

def bid_to_dict(b: Bid) -> dict:
    out = {"id": b.id, "side": b.side.value, "direction": b.direction.value, "node": b.node,
           "period": b.period, "quantity": b.quantity, "price": b.price,
           "arrival_index": b.arrival_index}
    return out


def bid_from_dict(d: dict, where: str, side: Optional[Side] = None, block: Optional[str] = None,
                  node=None, arrival=None) -> Bid:
    return Bid(
        id=str(_need(d, "id", where)),
        side=side or _enum(Side, _need(d, "side", where), f"{where}.side"),
        direction=_enum(Direction, _need(d, "direction", where), f"{where}.direction"),
        node=node if node is not None else _need(d, "node", where),
        period=int(_number(_need(d, "period", where), f"{where}.period")),
        quantity=_number(_need(d, "quantity", where), f"{where}.quantity"),
        price=_number(_need(d, "price", where), f"{where}.price"),
        arrival_index=arrival if arrival is not None
        else int(_number(d.get("arrival_index", 0), f"{where}.arrival_index")),
        block_ref=block,
    )


def bids_to_dict(inst: Instance) -> dict:
    return {
        "bids": [bid_to_dict(b) for b in sorted(inst.bids, key=lambda b: b.arrival_index)],
        "blocks": [{"id": k.id, "node": k.node, "arrival_index": k.arrival_index,
                    "sub_offers": [{"id": s.id, "direction": s.direction.value,
                                    "period": s.period, "quantity": s.quantity,
                                    "price": s.price} for s in k.sub_offers]}
                   for k in sorted(inst.blocks, key=lambda b: b.arrival_index)],
    }


def bids_from_dict(data: dict, where: str = "bids") -> tuple:
    raw = _need(data, "bids", where)
    if not isinstance(raw, list):
        raise FormatError(f"{where}.bids: expected a list")
    bids = tuple(bid_from_dict(d, f"{where}.bids[{k}]") for k, d in enumerate(raw))
    blocks = []
    for k, d in enumerate(data.get("blocks", [])):
        w = f"{where}.blocks[{k}]"
        bid_id = str(_need(d, "id", w))
        node = _need(d, "node", w)
        arrival = int(_number(d.get("arrival_index", 0), f"{w}.arrival_index"))
        subs = tuple(bid_from_dict(s, f"{w}.sub_offers[{j}]", Side.OFFER, bid_id, node, arrival)
                     for j, s in enumerate(_need(d, "sub_offers", w)))
        blocks.append(BlockBid(bid_id, node, subs, arrival))
    return bids, tuple(blocks)


# -- instance directories --------------------------------------------------

INSTANCE_FILES = ("network.json", "setpoint.json", "bids.json")


def save_instance(inst: Instance, out_dir) -> list:
    out_dir = Path(out_dir)
    paths = [out_dir / f for f in INSTANCE_FILES]
    write_json(paths[0], network_to_dict(inst.network))
    write_json(paths[1], setpoint_to_dict(inst.setpoint, inst.network))
    write_json(paths[2], bids_to_dict(inst))
    return paths


def load_instance(in_dir) -> Instance:
    in_dir = Path(in_dir)
    net = network_from_dict(read_json(in_dir / "network.json"), "network.json")
    sp = setpoint_from_dict(read_json(in_dir / "setpoint.json"), net, "setpoint.json")
    bids, blocks = bids_from_dict(read_json(in_dir / "bids.json"), "bids.json")
    return Instance(net, sp, bids, blocks)


def read_sequence(path) -> list:
    """An ordered list of bid ids, either a bare JSON list or ``{"sequence": [...]}``."""
    data = read_json(path)
    seq = data.get("sequence") if isinstance(data, dict) else data
    if not isinstance(seq, list) or not all(isinstance(s, str) for s in seq):
        raise FormatError(f"{path}: expected a list of bid ids")
    if len(set(seq)) != len(seq):
        raise FormatError(f"{path}: duplicate bid id in sequence")
    return seq


def fixture_path(name: str) -> Path:
    """Directory of an instance shipped with the package."""
    from importlib import resources
    return Path(str(resources.files("flexclear").joinpath("data", name)))


def load_fixture(name: str) -> Instance:
    return load_instance(fixture_path(name))
