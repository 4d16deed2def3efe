import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexclear.optimize import (LinearProgram, MalformedProgram, Status, solve, solve_lp,
                                solve_milp)
from flexclear.optimize.branch import branch_and_bound

from oracles import binary_enumeration, vertex_enumeration
from programs import random_program


def test_bound_attaining_max():
    lp = LinearProgram("max")
    x = lp.add_var("x", 0, 3, cost=1)
    res = solve_lp(lp)
    assert res.status is Status.OPTIMAL
    assert res.x[x] == pytest.approx(3)
    assert res.objective == pytest.approx(3)


def test_equality_forced():
    lp = LinearProgram()
    x, y = lp.add_var("x", cost=1), lp.add_var("y", cost=1)
    lp.add_constraint({x: 1, y: 1}, "=", 2)
    assert solve_lp(lp).objective == pytest.approx(2)


def test_infeasible_and_unbounded():
    lp = LinearProgram()
    x = lp.add_var("x", 0, 1)
    lp.add_constraint({x: 1}, ">=", 2)
    assert solve_lp(lp).status is Status.INFEASIBLE
    lp = LinearProgram("max")
    lp.add_var("x", 0, np.inf, cost=1)
    assert solve_lp(lp).status is Status.UNBOUNDED


def test_malformed_programs_rejected():
    lp = LinearProgram()
    lp.add_var("x")
    lp.add_constraint({5: 1.0}, "<=", 1)
    with pytest.raises(MalformedProgram):
        solve_lp(lp)
    lp = LinearProgram()
    x = lp.add_var("x")
    lp.add_constraint({x: float("nan")}, "<=", 1)
    with pytest.raises(MalformedProgram):
        solve_lp(lp)
    with pytest.raises(MalformedProgram):
        LinearProgram().add_constraint({}, "<", 1)


def test_single_binary():
    lp = LinearProgram("max")
    z = lp.add_var("z", binary=True, cost=2)
    res = solve_milp(lp)
    assert res.x[z] == pytest.approx(1) and res.objective == pytest.approx(2)


def test_knapsack_three_items():
    values, weights = [10, 13, 7], [4, 6, 3]
    lp = LinearProgram("max")
    zs = [lp.add_var(f"z{k}", binary=True, cost=v) for k, v in enumerate(values)]
    lp.add_constraint(dict(zip(zs, weights)), "<=", 9)
    rows = [(np.array(weights, float), "<=", 9)]
    oracle = binary_enumeration(values, rows, [0, 0, 0], [1, 1, 1], [0, 1, 2], "max")
    assert oracle == 20
    assert solve_milp(lp).objective == pytest.approx(oracle)


def test_node_limit_returns_incumbent_status():
    rng = np.random.default_rng(4)
    lp = LinearProgram("max")
    zs = [lp.add_var(f"z{k}", binary=True, cost=float(rng.integers(5, 20))) for k in range(12)]
    lp.add_constraint({z: float(rng.integers(3, 9)) for z in zs}, "<=", 20.5)
    res = branch_and_bound(lp, node_limit=3)
    assert res.status is Status.ITERATION_LIMIT


def test_duals_are_shadow_prices():
    # min 2x + 3y, x + y >= 4, x <= 3  -> x=3, y=1; raising the cover row costs 3 per unit
    lp = LinearProgram()
    x, y = lp.add_var("x", 0, 3, cost=2), lp.add_var("y", cost=3)
    lp.add_constraint({x: 1, y: 1}, ">=", 4)
    res = solve_lp(lp)
    assert res.objective == pytest.approx(9)
    assert res.duals[0] == pytest.approx(3)


def test_debug_dump_lists_every_constraint():
    lp = LinearProgram("max")
    x = lp.add_var("x", 0, 1, cost=1)
    z = lp.add_var("z", binary=True)
    lp.add_constraint({x: 1, z: -1}, "<=", 0, name="link")
    text = lp.dump()
    assert "maximize" in text and "link:" in text and "binary" in text


def test_backends_agree_on_random_programs():
    rng = np.random.default_rng(11)
    for _ in range(40):
        lp, _ = random_program(rng, 5, 5)
        a, b = solve_lp(lp, "embedded"), solve_lp(lp, "highs")
        assert a.status is b.status
        if a.ok:
            assert a.objective == pytest.approx(b.objective, abs=1e-6)


def _check_against_vertices(seed):
    rng = np.random.default_rng(seed)
    lp, (c, rows, lb, ub, _, sense) = random_program(rng, int(rng.integers(1, 7)),
                                                   int(rng.integers(0, 7)))
    res = solve_lp(lp)
    oracle = vertex_enumeration(c, rows, lb, ub, sense)
    if oracle is None:
        assert res.status is Status.INFEASIBLE
        return
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(oracle, abs=1e-6)
    assert lp.max_violation(res.x) <= 1e-7
    # stationarity and complementary slackness of the returned duals
    A = lp.matrix()
    cvec = lp.cost_vector()
    d = cvec - (A.T @ res.duals if A.size else 0.0)
    assert np.allclose(d, res.reduced_costs, atol=1e-6)
    ax = A @ res.x if A.size else np.zeros(0)
    for i, con in enumerate(lp.constraints):
        if abs(res.duals[i]) > 1e-6:
            assert ax[i] == pytest.approx(con.rhs, abs=1e-6)
    for j in range(lp.n_vars):
        if abs(res.reduced_costs[j]) > 1e-6:
            assert min(abs(res.x[j] - lp.lb[j]), abs(res.x[j] - lp.ub[j])) <= 1e-6


@pytest.mark.parametrize("seed", range(60))
def test_embedded_lp_matches_vertex_enumeration(seed):
    _check_against_vertices(seed)


@pytest.mark.parametrize("seed", range(30))
def test_embedded_milp_matches_binary_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    nb = int(rng.integers(1, 9))
    lp, (c, rows, lb, ub, bins, sense) = random_program(rng, nb + int(rng.integers(0, 3)),
                                                      int(rng.integers(1, 5)), nb)
    res = solve_milp(lp)
    oracle = binary_enumeration(c, rows, lb, ub, bins, sense)
    if oracle is None:
        assert res.status is Status.INFEASIBLE
    else:
        assert res.status is Status.OPTIMAL
        assert res.objective == pytest.approx(oracle, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_milp_never_beats_its_relaxation(seed):
    rng = np.random.default_rng(seed)
    lp, _ = random_program(rng, 6, 4, 4)
    mip = solve_milp(lp)
    relaxed = lp.copy()
    relaxed.binary = [False] * relaxed.n_vars
    rel = solve_lp(relaxed)
    if mip.ok:
        assert rel.ok
        if lp.sense == "min":
            assert mip.objective >= rel.objective - 1e-6
        else:
            assert mip.objective <= rel.objective + 1e-6
        assert lp.max_violation(mip.x) <= 1e-7
        assert all(abs(mip.x[j] - round(mip.x[j])) <= 1e-9 for j in lp.binaries)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_solves_are_deterministic(seed):
    rng = np.random.default_rng(seed)
    lp, _ = random_program(rng, 6, 5, 3)
    a, b = solve(lp, "embedded"), solve(lp, "embedded")
    assert a.status is b.status
    if a.ok:
        assert np.array_equal(a.x, b.x)
