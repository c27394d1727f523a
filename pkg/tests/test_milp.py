import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwph.io.generate import generate_problem
from fwph.lp import LinearProgram
from fwph.milp import MilpModel, ScenarioSolver, prox_linearize, solve_milp
from fwph.model import augmented_lagrangian, scenario_milp
from refs import brute_force_milp, scenario_points


def random_milp(rng):
    n = int(rng.integers(2, 8))
    m = int(rng.integers(1, 6))
    A = rng.integers(-5, 6, (m, n)).astype(float)
    senses = list(rng.choice(["<", "=", ">"], m, p=[0.6, 0.1, 0.3]))
    rhs = rng.integers(0, 15, m).astype(float)
    lb = np.zeros(n)
    ub = rng.integers(1, 6, n).astype(float)
    integer = rng.random(n) < 0.7
    while integer.sum() > 6:
        integer[np.flatnonzero(integer)[0]] = False
    if not integer.all():
        # keep the mixed-integer reference (one LP per lattice point) cheap
        while np.prod(ub[integer] + 1) > 400:
            ub[np.argmax(np.where(integer, ub, 0))] -= 1
    return MilpModel(LinearProgram(rng.normal(size=n), A, senses, rhs, lb, ub), integer)


def test_lp_integral_root_single_node():
    # the relaxation optimum is already integral
    lp = LinearProgram([-1.0, -1.0], [[1.0, 0.0], [0.0, 1.0]], ["<", "<"], [2.0, 3.0], [0, 0], [5, 5])
    sol = solve_milp(MilpModel(lp, [True, True]))
    assert sol.status == "optimal" and sol.nodes == 1
    assert sol.objective == pytest.approx(-5.0)


def test_matches_enumeration_on_random_milps():
    rng = np.random.default_rng(123)
    feasible = 0
    for _ in range(100):
        mdl = random_milp(rng)
        lp = mdl.lp
        ref = brute_force_milp(lp.c, lp.A, lp.senses, lp.rhs, lp.lb, lp.ub, mdl.integrality)
        sol = solve_milp(mdl)
        if ref == np.inf:
            assert sol.status == "infeasible"
            continue
        feasible += 1
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(ref, abs=1e-7 * (1 + abs(ref)))
        ints = np.flatnonzero(mdl.integrality)
        assert np.all(np.abs(sol.x[ints] - np.round(sol.x[ints])) <= 1e-6)
        assert sol.bound <= sol.objective + 1e-9 * (1 + abs(sol.objective))
    assert feasible >= 50


def test_bound_history_monotone_and_limits_certified():
    rng = np.random.default_rng(9)
    for _ in range(60):
        mdl = random_milp(rng)
        full = solve_milp(mdl)
        hist = np.array(full.bound_history)
        assert np.all(np.diff(hist) >= -1e-12)
        for limit in (1, 2, 3):
            part = solve_milp(mdl, node_limit=limit)
            if full.status == "optimal" and part.status == "bound-only":
                assert part.bound <= full.objective + 1e-9 * (1 + abs(full.objective))


def test_compiled_and_python_loops_agree():
    rng = np.random.default_rng(77)
    for _ in range(60):
        mdl = random_milp(rng)
        a = solve_milp(mdl, compiled=False)
        b = solve_milp(mdl, compiled=True)
        assert a.status == b.status and a.nodes == b.nodes
        assert a.bound_history == b.bound_history
        if a.x is not None:
            assert np.array_equal(a.x, b.x)


def test_time_limit_uses_python_loop():
    rng = np.random.default_rng(1)
    mdl = random_milp(rng)
    sol = solve_milp(mdl, time_limit=10.0)
    assert sol.status in ("optimal", "infeasible")
    with pytest.raises(ValueError):
        solve_milp(mdl, time_limit=1.0, compiled=True)


def test_unbounded_status():
    lp = LinearProgram([-1.0, 0.0], np.zeros((0, 2)), [], [], [0, 0], [np.inf, 1])
    assert solve_milp(MilpModel(lp, [False, True])).status == "unbounded"


def test_integer_columns_need_finite_bounds():
    lp = LinearProgram([1.0], np.zeros((0, 1)), [], [], [0], [np.inf])
    with pytest.raises(ValueError):
        MilpModel(lp, [True])


def test_prox_zero_center_adds_half_rho():
    mdl = scenario_milp(generate_problem(0), 0)
    n = mdl.n_first
    out = prox_linearize(mdl, np.zeros(n), np.zeros(n), 2.0)
    assert np.allclose(out.lp.c[:n] - mdl.lp.c[:n], 1.0)
    assert out.offset == 0.0


def test_prox_rejects_non_binary_first_stage():
    lp = LinearProgram([1.0, 1.0], [[1.0, 1.0]], [">"], [1.0], [0, 0], [3, 1])
    mdl = MilpModel(lp, [True, True], n_first=1, names=("build", "y"))
    with pytest.raises(ValueError, match="build"):
        prox_linearize(mdl, [0.0], [0.0], 1.0)


@given(st.integers(0, 49), st.integers(0, 3), st.floats(0.05, 200.0), st.integers(0, 10_000))
def test_prox_linearization_exact_pointwise(seed, s, rho, wseed):
    P = generate_problem(seed)
    s = s % P.n_scenarios
    rng = np.random.default_rng(wseed)
    z = rng.random(P.n_x)
    w = rng.normal(scale=5.0, size=P.n_x)
    mdl = prox_linearize(scenario_milp(P, s), z, w, rho)
    for x_bits in itertools.islice(itertools.product([0.0, 1.0], repeat=P.n_x), 8):
        x = np.array(x_bits)
        y = rng.random(P.scenarios[s].n)
        lin = mdl.objective_value(np.concatenate([x, y]))
        ref = augmented_lagrangian(P, s, x, y, z, w, rho)
        assert lin == pytest.approx(ref, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("seed", [0, 3, 8])
def test_prox_optimum_matches_enumerated_points(seed):
    P = generate_problem(seed)
    rng = np.random.default_rng(seed)
    for s in range(P.n_scenarios):
        pts = scenario_points(P, s)
        solver = ScenarioSolver(scenario_milp(P, s))
        for _ in range(3):
            z, w, rho = rng.random(P.n_x), rng.normal(size=P.n_x) * 3, float(rng.choice([0.5, 5.0, 50.0]))
            ref = min(augmented_lagrangian(P, s, x, y, z, w, rho) for x, y, _ in pts)
            sol = solver.prox(z, w, rho)
            assert sol.objective == pytest.approx(ref, abs=1e-7 * (1 + abs(ref)))


def test_prox_large_rho_returns_center():
    P = generate_problem(2)
    for s in range(P.n_scenarios):
        solver = ScenarioSolver(scenario_milp(P, s))
        for x, _, _ in scenario_points(P, s):
            sol = solver.prox(x, np.zeros(P.n_x), 1e5)
            assert np.allclose(sol.x[: P.n_x], x)


def test_scenario_solver_counters():
    P = generate_problem(1)
    solver = ScenarioSolver(scenario_milp(P, 0))
    solver.linear(np.zeros(P.n_x))
    solver.prox(np.zeros(P.n_x), np.zeros(P.n_x), 1.0)
    solver.recourse(np.zeros(P.n_x))
    assert (solver.milp_solves, solver.miqp_solves, solver.recourse_solves) == (1, 1, 1)
    assert solver.mixed_integer_solves == 2
