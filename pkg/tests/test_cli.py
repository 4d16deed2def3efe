import csv
import json
import subprocess
import sys

import pytest

from flexclear.cli import main
from flexclear.formats import fixture_path, save_instance, sha256_file

from instances import DOWN, UP, copper_plate, make_instance, offer, request, two_offer_toy

INSTANCE_FILES = ("network.json", "setpoint.json", "bids.json")


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--seed", "4", "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json(path):
    return json.loads(path.read_text())


def test_generate_writes_the_instance(generated):
    net = _json(generated / "network.json")
    sp = _json(generated / "setpoint.json")
    assert len(net["nodes"]) == 33 and len(net["lines"]) == 32
    assert sp["periods"] == 24
    for name in (*INSTANCE_FILES, "manifest.json"):
        assert _json(generated / name)["schema_version"] == 1
    man = _json(generated / "manifest.json")
    assert man["seed"] == 4 and len(man["config_hash"]) == 64
    assert sorted(man["outputs"]) == sorted(INSTANCE_FILES)


def test_same_seed_same_files(generated, tmp_path):
    assert main(["generate", "--seed", "4", "--out", str(tmp_path)]) == 0
    for name in INSTANCE_FILES:
        assert sha256_file(tmp_path / name) == sha256_file(generated / name)


def test_seed_environment_override(generated, tmp_path, monkeypatch):
    monkeypatch.setenv("FLEXCLEAR_SEED", "4")
    assert main(["generate", "--seed", "99", "--out", str(tmp_path)]) == 0
    assert sha256_file(tmp_path / "bids.json") == sha256_file(generated / "bids.json")
    monkeypatch.setenv("FLEXCLEAR_SEED", "four")
    assert main(["generate", "--out", str(tmp_path / "x")]) == 2


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"offer_price": [0.05, 0.01]}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "offer_price" in capsys.readouterr().err
    cfg.write_text('{"seed": 1,\n "n_offers": }')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_config_file_is_applied(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 2, "n_offers": 5, "n_blocks": 0}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    bids = _json(tmp_path / "o" / "bids.json")
    assert bids["blocks"] == []
    assert sum(b["side"] == "offer" for b in bids["bids"]) == 5


def test_clear_continuous(generated, tmp_path):
    assert main(["clear", "continuous", str(generated), "--out", str(tmp_path)]) == 0
    flows = _rows(tmp_path / "flows.csv")
    assert len(flows) == 32 * 24
    assert max(float(r["violation"]) for r in flows) <= 1e-6
    trades = _rows(tmp_path / "trades.csv")
    out = _json(tmp_path / "outcome.json")
    assert out["n_trades"] == len(trades)
    assert out["volume"] == pytest.approx(sum(float(t["quantity"]) for t in trades))
    assert set(out["block_acceptance"].values()) <= {0, 1}


def test_clear_auction_ignores_sequence(generated, tmp_path, caplog):
    seq = tmp_path / "seq.json"
    seq.write_text(json.dumps(["nonsense"]))
    assert main(["clear", "auction", str(generated), "--sequence", str(seq),
                 "--out", str(tmp_path / "a")]) == 0
    assert "ignoring" in caplog.text
    assert max(float(r["violation"]) for r in _rows(tmp_path / "a" / "flows.csv")) <= 1e-6


def test_clear_follows_a_sequence(tmp_path):
    save_instance(two_offer_toy(), tmp_path / "toy")
    for order, welfare in ((["R", "O2", "O1"], 2.0), (["O1", "O2", "R"], 2.5)):
        seq = tmp_path / "seq.json"
        seq.write_text(json.dumps(order))
        out = tmp_path / "_".join(order)
        assert main(["clear", "continuous", str(tmp_path / "toy"), "--sequence", str(seq),
                     "--out", str(out)]) == 0
        assert _json(out / "outcome.json")["social_welfare"] == pytest.approx(welfare)


def test_unknown_sequence_id_exits_3(tmp_path):
    save_instance(two_offer_toy(), tmp_path / "toy")
    seq = tmp_path / "seq.json"
    seq.write_text(json.dumps(["R", "O1", "ghost"]))
    assert main(["clear", "continuous", str(tmp_path / "toy"), "--sequence", str(seq),
                 "--out", str(tmp_path / "o")]) == 3


def test_invalid_instance_exits_3(tmp_path, capsys):
    net, sp = copper_plate(2, 1)
    save_instance(make_instance(net, sp, [request("R", UP, 7, 0, 1, 0.3)]), tmp_path / "bad")
    assert main(["clear", "auction", str(tmp_path / "bad"), "--out", str(tmp_path / "o")]) == 3
    assert "invalid" in capsys.readouterr().err
    (tmp_path / "bad" / "bids.json").write_text("{")
    assert main(["clear", "auction", str(tmp_path / "bad"), "--out", str(tmp_path / "o")]) == 3


def test_compare(generated, tmp_path, capsys):
    assert main(["compare", str(generated), "--scenarios", "3", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    table = _rows(tmp_path / "table.csv")
    assert [r["case"] for r in table] == ["BB and NC", "SB and NC", "BB", "SB"]
    rows = _rows(tmp_path / "scenarios.csv")
    assert len(rows) == 12
    for case in ("BB and NC", "SB and NC", "BB", "SB"):
        assert len({r["auction_welfare"] for r in rows if r["case"] == case}) == 1
    assert all(float(r["welfare_pct"]) <= 100 + 1e-4 for r in rows if r["welfare_pct"])
    assert "BB and NC" in capsys.readouterr().out
    assert _json(tmp_path / "summary.json")["unit"] == "percent of auction"


def test_compare_survives_an_empty_auction(tmp_path):
    net, sp = copper_plate(2, 1)
    save_instance(make_instance(net, sp, [request("R", UP, 1, 0, 1, 0.03),
                                          offer("O", UP, 2, 0, 1, 0.05)]), tmp_path / "i")
    assert main(["compare", str(tmp_path / "i"), "--scenarios", "2", "--out",
                 str(tmp_path / "o")]) == 0
    summary = _json(tmp_path / "o" / "summary.json")
    assert summary["cases"]["SB"]["welfare"]["Average"] is None


def test_compare_is_deterministic(generated, tmp_path):
    for sub in ("a", "b"):
        assert main(["compare", str(generated), "--scenarios", "2", "--seed", "5",
                     "--out", str(tmp_path / sub)]) == 0
    for name in ("scenarios.csv", "table.csv", "summary.json"):
        assert sha256_file(tmp_path / "a" / name) == sha256_file(tmp_path / "b" / name)


def test_bounds_on_the_toy(tmp_path):
    save_instance(two_offer_toy(), tmp_path / "toy")
    assert main(["bounds", str(tmp_path / "toy"), "--oracle", "--out", str(tmp_path / "o")]) == 0
    rep = _json(tmp_path / "o" / "bounds.json")
    assert rep["worst"]["interval"] == pytest.approx([2.0, 2.0])
    assert rep["best"]["interval"] == pytest.approx([2.5, 2.5])
    assert rep["oracle"]["min_welfare"] == pytest.approx(2.0)
    assert rep["oracle"]["max_welfare"] == pytest.approx(2.5)


def test_bounds_single_offer(tmp_path):
    net, sp = copper_plate(2, 1)
    save_instance(make_instance(net, sp, [request("R", DOWN, 2, 0, 3, 0.04),
                                          offer("O", DOWN, 1, 0, 5, 0.01)]), tmp_path / "i")
    assert main(["bounds", str(tmp_path / "i"), "--out", str(tmp_path / "o")]) == 0
    rep = _json(tmp_path / "o" / "bounds.json")
    assert rep["worst"]["interval"][0] == pytest.approx(rep["best"]["interval"][1])


def test_bounds_fixture_contains_the_oracle(tmp_path):
    out = tmp_path / "o"
    assert main(["bounds", str(fixture_path("bounds5")), "--oracle", "--out", str(out)]) == 0
    rep = _json(out / "bounds.json")
    assert rep["worst"]["interval"][0] <= rep["oracle"]["min_welfare"] + 1e-6
    assert rep["best"]["interval"][1] >= rep["oracle"]["max_welfare"] - 1e-6


def test_bounds_size_guard_exits_5(generated, tmp_path, capsys):
    assert main(["bounds", str(generated), "--out", str(tmp_path)]) == 5
    assert "compare" in capsys.readouterr().err


def test_bounds_node_limit_exits_4(tmp_path):
    assert main(["bounds", str(fixture_path("bounds5")), "--node-limit", "0",
                 "--out", str(tmp_path)]) == 4


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "flexclear.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "flexclear" in res.stdout
