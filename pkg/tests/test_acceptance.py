"""Acceptance suite. Each test is one criterion; the summary hook in
conftest prints a pass/fail line per criterion at the end of the run.

The scenario campaign (criteria 1, 2, 4 and part of 7) is computed once and
shared. Every network check recomputes flows from scratch through the
angle-based oracle rather than the library's transfer factors.
"""
import time

import numpy as np
import pytest

from flexclear.auction import run_auction
from flexclear.bounds import permutation_oracle, sequence_bounds
from flexclear.casegen import CASES, CaseConfig, build_grid_33, build_instance, case_variants, \
    run_scenarios
from flexclear.continuous import run_continuous
from flexclear.formats import load_fixture
from flexclear.optimize import Status, solve_lp, solve_milp
from flexclear.powerflow import compute_ptdf, solve_flows

from instances import DOWN, UP, make_instance, offer, random_instance, request, two_node
from oracles import (angle_flows, auction_by_enumeration, binary_enumeration,
                     injection_from_acceptance, injection_from_trades, network_excess,
                     vertex_enumeration)
from programs import random_program

N_INSTANCES, N_SCENARIOS = 50, 100
TOL = 1e-6
SB_CASES, BB_CASES = ("SB and NC", "SB"), ("BB and NC", "BB")


# -- shared checks ---------------------------------------------------------

def aon_breaches(instance, outcome):
    """Blocks whose sub-offers are neither all fully traded nor all untouched."""
    traded = {}
    for tr in outcome.trades:
        traded[tr.offer_id] = traded.get(tr.offer_id, 0.0) + tr.quantity
    bad = []
    for k in instance.blocks:
        ar = outcome.block_acceptance.get(k.id, 0)
        if ar not in (0, 1):
            bad.append(k.id)
            continue
        for s in k.sub_offers:
            q = traded.get(s.id, 0.0)
            ok = q == 0.0 if ar == 0 else abs(q - s.quantity) <= 1e-9 * max(1.0, s.quantity)
            if not ok:
                bad.append(k.id)
                break
    return bad


class Tally:
    def __init__(self):
        self.runs = 0
        self.blocks = 0
        self.breaches = []

    def add(self, instance, outcome):
        self.runs += 1
        self.blocks += len(instance.blocks)
        self.breaches += aon_breaches(instance, outcome)


# -- scenario campaign -------------------------------------------------------

def _campaign_instance(seed, aon):
    inst = build_instance(CaseConfig(seed=seed))
    cases = case_variants(inst)
    table = run_scenarios(inst, N_SCENARIOS, seed=seed, cases=cases, keep_outcomes=True)
    out = {"dominance_gap": {}, "excess": 0.0, "welfare_pct": {}, "volume_pct": {}}
    for label, case in cases.items():
        auc = table.auction[label]
        aon.add(case, auc)
        out["excess"] = max(out["excess"], network_excess(
            case, injection_from_acceptance(case, auc.accepted, auc.block_acceptance)))
        rows = [r for r in table.rows if r.case == label]
        out["dominance_gap"][label] = max(r.welfare - r.auction_welfare for r in rows)
        out["welfare_pct"][label] = np.mean([100 * r.welfare_ratio for r in rows])
        out["volume_pct"][label] = np.mean([100 * r.volume_ratio for r in rows])
        for r in rows:
            res = table.outcomes[r.scenario, label]
            aon.add(case, res)
            out["excess"] = max(out["excess"],
                                network_excess(case, injection_from_trades(case, res.trades)))
    return out


@pytest.fixture(scope="module")
def campaign():
    aon = Tally()
    t0 = time.perf_counter()
    per_instance = [_campaign_instance(seed, aon) for seed in range(N_INSTANCES)]
    return {"instances": per_instance, "aon": aon, "seconds": time.perf_counter() - t0}


@pytest.mark.criterion(1, "continuous welfare <= auction welfare, 50 instances x 100 orders")
def test_order_dominance(campaign, record_property):
    gaps = [max(d["dominance_gap"].values()) for d in campaign["instances"]]
    runs = N_INSTANCES * N_SCENARIOS * len(CASES)
    violating = sum(
        sum(1 for g in d["dominance_gap"].values() if g > TOL) for d in campaign["instances"])
    record_property("detail", f"{runs} runs over {len(CASES)} cases, worst excess "
                              f"{max(gaps):.2e}, {campaign['seconds']:.0f} s")
    assert violating == 0
    assert max(gaps) <= TOL


@pytest.mark.criterion(2, "single bids lose less than block bids; SB volume >= auction")
def test_case_ordering(campaign, record_property):
    pct = {c: np.nanmean([d["welfare_pct"][c] for d in campaign["instances"]]) for c in CASES}
    vol = {c: np.nanmean([d["volume_pct"][c] for d in campaign["instances"]]) for c in CASES}
    sb = np.mean([pct[c] for c in SB_CASES])
    bb = np.mean([pct[c] for c in BB_CASES])
    record_property("detail", "welfare % " + ", ".join(f"{c} {pct[c]:.1f}" for c in CASES)
                    + f"; SB-BB {sb - bb:.1f} pp; SB volume {vol['SB']:.1f}%")
    assert len(campaign["instances"]) >= 20
    assert sb - bb >= 3.0
    assert vol["SB"] >= 100.0


@pytest.mark.criterion(3, "equal-price pair adds volume but no welfare")
def test_equal_price_volume(record_property):
    net, sp = two_node()
    pair_quantity = 4.0
    inst = make_instance(net, sp, [
        request("R", UP, 1, 0, 8, 0.28), offer("O", UP, 2, 0, 8, 0.03),
        offer("Oeq", DOWN, 2, 0, pair_quantity, 0.05), request("Req", DOWN, 1, 0, pair_quantity, 0.05),
    ])
    cont, auc = run_continuous(inst), run_auction(inst)
    assert not aon_breaches(inst, cont) and not aon_breaches(inst, auc)
    extra = cont.volume - auc.volume
    dw = cont.social_welfare - auc.social_welfare
    record_property("detail", f"volume {cont.volume} vs {auc.volume}, welfare diff {dw:.1e}")
    assert extra == pair_quantity
    assert abs(dw) <= 1e-9


@pytest.mark.criterion(4, "no flow beyond the admissible window in criteria 1-2")
def test_network_feasibility(campaign, record_property):
    worst = max(d["excess"] for d in campaign["instances"])
    record_property("detail", f"worst excess {worst:.2e} over {campaign['aon'].runs} solutions")
    assert worst <= TOL


@pytest.fixture(scope="module")
def auction_runs():
    rng = np.random.default_rng(2024)
    results, aon = [], Tally()
    t0 = time.perf_counter()
    for k in range(100):
        # a few at the twelve-block ceiling, the rest spread below it
        n_blocks = 12 if k < 4 else int(rng.integers(0, 11))
        inst = random_instance(5000 + k, n_nodes=int(rng.integers(2, 6)),
                               periods=3 if n_blocks else int(rng.integers(1, 4)),
                               n_requests=int(rng.integers(3, 8)),
                               n_offers=int(rng.integers(1, 5)), n_blocks=n_blocks)
        out = run_auction(inst)
        aon.add(inst, out)
        results.append((len(inst.blocks), out.social_welfare, auction_by_enumeration(inst)))
    return {"results": results, "aon": aon, "seconds": time.perf_counter() - t0}


@pytest.mark.criterion(5, "auction equals acceptance enumeration on 100 small instances")
def test_auction_oracle(auction_runs, record_property):
    res = auction_runs["results"]
    diffs = [abs(a - b) for _, a, b in res]
    record_property("detail", f"max |diff| {max(diffs):.1e}, up to {max(n for n, _, _ in res)} "
                              f"blocks, {auction_runs['seconds']:.0f} s")
    assert len(res) == 100
    assert max(diffs) <= TOL


@pytest.fixture(scope="module")
def fixture_runs():
    inst = load_fixture("bounds5")
    orc = permutation_oracle(inst)
    rep = sequence_bounds(inst)
    aon = Tally()
    requests = [r.id for r in sorted(inst.requests, key=lambda b: b.arrival_index)]
    for seq, _ in orc.table:
        aon.add(inst, run_continuous(inst, order=[*requests, *seq]))
    return inst, orc, rep, aon


@pytest.mark.criterion(6, "sequence bounds bracket every order of the 5-bus fixture")
def test_bounds_bracketing(fixture_runs, record_property):
    inst, orc, rep, _ = fixture_runs
    assert inst.network.n_nodes == 5 and inst.n_periods == 2
    assert len(inst.bids) + len(inst.blocks) == 5 and len(inst.blocks) == 1
    lo, hi = rep.worst.interval[0], rep.best.interval[1]
    welfare = [w for _, w in orc.table]
    pw, pb = rep.percent_of_auction(rep.worst.value), rep.percent_of_auction(rep.best.value)
    record_property("detail", f"worst {rep.worst.value:.4f} ({pw:.1f}%, tight="
                              f"{rep.worst.tight}), best {rep.best.value:.4f} ({pb:.1f}%, tight="
                              f"{rep.best.tight}), oracle {orc.min_welfare:.4f}.."
                              f"{orc.max_welfare:.4f} over {len(welfare)} orders")
    assert all(lo - TOL <= w <= hi + TOL for w in welfare)
    if rep.worst.tight:
        assert rep.worst.relaxed == pytest.approx(orc.min_welfare, abs=TOL)
    if rep.best.tight:
        assert rep.best.relaxed == pytest.approx(orc.max_welfare, abs=TOL)


@pytest.mark.criterion(7, "block bids all-or-nothing in every run of criteria 1-6")
def test_all_or_nothing(campaign, auction_runs, fixture_runs, record_property):
    tallies = [campaign["aon"], auction_runs["aon"], fixture_runs[3]]
    runs = sum(t.runs for t in tallies)
    blocks = sum(t.blocks for t in tallies)
    breaches = [b for t in tallies for b in t.breaches]
    record_property("detail", f"{blocks} block checks in {runs} runs, {len(breaches)} breaches")
    assert not breaches


@pytest.mark.criterion(8, "embedded LP and MILP match enumeration oracles")
def test_solver_oracles(record_property):
    lp_bad, milp_bad, infeasible = 0, 0, 0
    for seed in range(500):
        rng = np.random.default_rng(seed)
        lp, (c, rows, lb, ub, _, sense) = random_program(rng, int(rng.integers(1, 7)),
                                                       int(rng.integers(0, 7)))
        res = solve_lp(lp, backend="embedded")
        ref = vertex_enumeration(c, rows, lb, ub, sense)
        infeasible += ref is None
        if ref is None:
            lp_bad += res.status is not Status.INFEASIBLE
        else:
            lp_bad += res.status is not Status.OPTIMAL or abs(res.objective - ref) > TOL
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        nb = 10 if seed < 20 else int(rng.integers(1, 11))
        lp, (c, rows, lb, ub, bins, sense) = random_program(rng, nb + int(rng.integers(0, 3)),
                                                          int(rng.integers(1, 6)), nb)
        res = solve_milp(lp, backend="embedded")
        ref = binary_enumeration(c, rows, lb, ub, bins, sense)
        if ref is None:
            milp_bad += res.status is not Status.INFEASIBLE
        else:
            milp_bad += res.status is not Status.OPTIMAL or abs(res.objective - ref) > TOL
    record_property("detail", f"LP mismatches {lp_bad}/500 ({infeasible} infeasible), "
                              f"MILP mismatches {milp_bad}/200")
    assert lp_bad == 0 and milp_bad == 0


@pytest.mark.criterion(9, "transfer-factor and angle flows agree on the 33-bus grid")
def test_flow_methods(record_property):
    net = build_grid_33()
    ptdf = compute_ptdf(net)
    lines = [(ln.from_node, ln.to_node, ln.susceptance) for ln in net.lines]
    ref = net.index(net.reference)
    rng = np.random.default_rng(9)
    inj = rng.uniform(-500, 500, (net.n_nodes, 1000))
    inj[ref] -= inj.sum(axis=0)
    by_ptdf = ptdf.flows(inj)
    by_angles = solve_flows(net, inj).flows
    by_oracle = angle_flows(list(net.nodes), lines, net.reference, inj)
    d1 = float(np.max(np.abs(by_ptdf - by_angles)))
    d2 = float(np.max(np.abs(by_ptdf - by_oracle)))
    record_property("detail", f"max |diff| {d1:.1e} (library angles), {d2:.1e} (oracle angles)")
    assert d1 <= 1e-8 and d2 <= 1e-8
