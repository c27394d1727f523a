import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwph.fwcore import VertexSet, solve_master_qp
from fwph.hedging import (CONVERGED, TIME_LIMIT, HedgingConfig, PreconditionError, RecourseError, common_point,
                          dual_update, fwph_initialize, residual, residual_split, run_fwph, run_ph, solve_fwph)
from fwph.io.generate import InstanceShape, generate_problem
from fwph.model import (BINARY, CONTINUOUS, INTEGER, DualMultipliers, FirstStageData, ScenarioData,
                        TwoStageProblem, lagrangian_value, scenario_solvers)
from refs import brute_smip, gap_instance, oracle_values

G1 = 114
GAP_SEED = 208


def tol(v, rel=1e-6):
    return rel * (1.0 + abs(v))


# residual and dual update

def test_residual_at_consensus_is_zero():
    assert residual(np.ones((3, 2)), np.ones(2), [0.2, 0.3, 0.5]) == 0.0


def test_residual_single_scenario_norm():
    assert residual(np.array([[3.0, 4.0]]), np.zeros(2), [1.0]) == 5.0


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_residual_identity(S, n, seed):
    rng = np.random.default_rng(seed)
    p = rng.random(S) + 0.05
    p /= p.sum()
    x = rng.normal(scale=10, size=(S, n))
    z_prev = rng.normal(size=n)
    z = p @ x
    lhs, rhs = residual_split(x, z, z_prev, p)
    assert rhs == pytest.approx(residual(x, z_prev, p) ** 2, rel=1e-14)
    assert abs(lhs - rhs) <= 1e-10 * max(lhs, rhs) + 1e-12


def test_dual_update_trivial_cases():
    rng = np.random.default_rng(0)
    p = np.array([0.25, 0.75])
    om = DualMultipliers(np.array([[3.0, -1.0], [-1.0, 1 / 3]]))
    x = rng.random((2, 2))
    z = p @ x
    same = dual_update(om, np.tile(z, (2, 1)), z, 5.0, p)
    assert np.allclose(same.omega, om.omega, atol=1e-15)
    assert np.array_equal(dual_update(om, x, z, 0.0).omega, om.omega)


@given(st.integers(1, 5), st.integers(1, 4), st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_dual_update_keeps_feasibility(S, n, rho, seed):
    rng = np.random.default_rng(seed)
    p = rng.random(S) + 0.05
    p /= p.sum()
    om = DualMultipliers(rng.normal(size=(S, n))).recentered(p)
    x = rng.normal(size=(S, n))
    new = dual_update(om, x, p @ x, rho, p)
    assert np.max(np.abs(p @ new.omega)) <= 1e-12 * (1 + np.max(np.abs(new.omega)))


def test_config_validation():
    for bad in ({"rho": 0.0}, {"eps": -1.0}, {"k_max": 0}, {"t_max": 0}, {"bounds_every": 0}):
        with pytest.raises(ValueError):
            HedgingConfig(**bad)


# PH

@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("rho", [0.5, 50.0])
def test_ph_single_scenario_collapses(seed, rho):
    P = generate_problem(seed, InstanceShape(n_scenarios=1))
    r = run_ph(P, None, HedgingConfig(rho=rho))
    ref = brute_smip(P)
    assert r.termination == CONVERGED and r.iterations == 1 and r.residual == 0.0
    assert r.best_phi == pytest.approx(ref, rel=1e-9, abs=1e-9)


def integer_first_stage():
    first = FirstStageData(c=[1.0], A=np.zeros((0, 1)), senses=[], rhs=[], lb=[0], ub=[3], kinds=[INTEGER])
    sc = ScenarioData(p=1.0, q=[1.0], W=[[1.0]], T=[[1.0]], h=[2.0], y_lb=[0.0], y_ub=[5.0],
                      y_kinds=[CONTINUOUS], senses=[">"])
    return TwoStageProblem(first, [sc])


def test_ph_rejects_general_integer_first_stage():
    with pytest.raises(PreconditionError, match=r"x\[0\]"):
        run_ph(integer_first_stage(), None, HedgingConfig())


@pytest.mark.parametrize("seed", [G1, GAP_SEED])
@pytest.mark.parametrize("rho", [0.1, 1.0, 10.0, 100.0])
def test_ph_bounds_are_valid(seed, rho):
    P = generate_problem(seed)
    ld, smip = oracle_values(seed)
    r = run_ph(P, None, HedgingConfig(rho=rho, k_max=60, eps=1e-6))
    phis = [t.phi for t in r.trace if not math.isnan(t.phi)]
    assert phis and all(math.isfinite(v) for v in phis)
    assert max(phis) <= ld + tol(ld) and max(phis) <= smip + tol(smip)
    assert r.identity_checks == r.iterations
    best = np.maximum.accumulate(phis)
    assert np.array_equal(best, [t.best_phi for t in r.trace])
    assert np.all(np.diff([t.wall for t in r.trace]) >= 0)


def test_ph_bound_stride_and_accounting():
    P = generate_problem(G1)
    S = P.n_scenarios
    r = run_ph(P, None, HedgingConfig(rho=5.0, k_max=6, eps=0.0, bounds_every=3))
    has_bound = [not math.isnan(t.phi) for t in r.trace]
    assert has_bound == [True, False, False, True, False, False, True]
    mi = np.diff([t.milp_solves for t in r.trace])
    assert list(mi) == [S, S, 2 * S, S, S, 2 * S]
    full = run_ph(P, None, HedgingConfig(rho=5.0, k_max=4, eps=0.0))
    assert set(np.diff([t.milp_solves for t in full.trace])) == {2 * S}


def test_ph_rejects_infeasible_omega0():
    P = generate_problem(G1)
    om = DualMultipliers(np.ones((P.n_scenarios, P.n_x)))
    with pytest.raises(PreconditionError):
        run_ph(P, om, HedgingConfig())


# initialization

def test_initialize_single_scenario_singleton():
    P = generate_problem(3, InstanceShape(n_scenarios=1))
    Vs, xy = fwph_initialize(P)
    assert len(Vs) == 1 and len(Vs[0]) == 1
    assert common_point(Vs) is not None


@pytest.mark.parametrize("seed", [G1, 2, GAP_SEED])
def test_initialize_shares_first_scenario_point(seed):
    P = generate_problem(seed)
    Vs, xy = fwph_initialize(P)
    x1 = xy[0][0]
    for V in Vs:
        assert 1 <= len(V) <= 2
        # distance from x1 to Proj_x conv(V) via the master QP with the pure proximal objective
        res = solve_master_qp(V, np.zeros(V.n_x + V.n_y), x1, np.zeros(V.n_x), 1.0)
        assert np.max(np.abs(res.point[: V.n_x] - x1)) <= 1e-9
    assert common_point(Vs) is not None


def no_recourse_problem():
    first = FirstStageData(c=[-1.0], A=np.zeros((0, 1)), senses=[], rhs=[], lb=[0], ub=[1], kinds=[BINARY])
    free = ScenarioData(p=0.5, q=[0.0], W=[[1.0]], T=[[0.0]], h=[0.0], y_lb=[0.0], y_ub=[1.0],
                        y_kinds=[CONTINUOUS], senses=[">"])
    # y >= x with y fixed at 0: x = 1 has no recourse here
    strict = ScenarioData(p=0.5, q=[0.0], W=[[1.0]], T=[[-1.0]], h=[0.0], y_lb=[0.0], y_ub=[0.0],
                          y_kinds=[CONTINUOUS], senses=[">"])
    return TwoStageProblem(first, [free, strict])


def test_initialize_names_scenario_without_recourse():
    with pytest.raises(RecourseError, match="scenario 1"):
        fwph_initialize(no_recourse_problem())


def test_fwph_requires_common_point():
    # seed 0: the per-scenario Lagrangian argmins alone share no first-stage point
    P = generate_problem(0)
    solvers = scenario_solvers(P)
    Vs, xy = fwph_initialize(P, solvers=solvers)
    lone = []
    for V in Vs:
        W = VertexSet(V.n_x, V.n_y)
        W.add(V.points[0])
        lone.append(W)
    assert common_point(lone) is None
    with pytest.raises(PreconditionError):
        run_fwph(P, lone, xy, None, HedgingConfig(), solvers)
    # with t_max >= 2 the condition is not required
    run_fwph(P, lone, xy, None, HedgingConfig(t_max=2, k_max=3), solvers)


# FW-PH

@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_fwph_single_scenario(seed, alpha):
    P = generate_problem(seed, InstanceShape(n_scenarios=1))
    r = solve_fwph(P, HedgingConfig(rho=3.0, alpha=alpha))
    ref = brute_smip(P)
    assert r.termination == CONVERGED and r.iterations <= 2 and r.residual < 1e-9
    assert r.trace[0].phi == pytest.approx(ref, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("rho", [1.0, 10.0])
@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_fwph_reaches_dual_bound(rho, alpha):
    for seed in (G1, GAP_SEED):
        P = generate_problem(seed)
        ld, smip = oracle_values(seed)
        r = solve_fwph(P, HedgingConfig(rho=rho, alpha=alpha, eps=0.0, k_max=500))
        assert abs(r.best_phi - ld) <= 1e-4 * max(1.0, abs(ld))
        assert all(t.phi <= ld + tol(ld) and t.phi <= smip + tol(smip) for t in r.trace)


def test_fwph_gap_instance_closes_on_dual_bound():
    P = gap_instance()
    r = solve_fwph(P, HedgingConfig(rho=1.0, eps=0.0, k_max=300))
    assert abs(r.best_phi - 0.0) <= 1e-4
    assert all(t.phi <= 1e-9 for t in r.trace)


def test_fwph_accounting_and_monotone_vertex_sets():
    P = generate_problem(G1)
    S = P.n_scenarios
    solvers = scenario_solvers(P)
    V0, xy0 = fwph_initialize(P, solvers=solvers)
    before = sum(s.milp_solves + s.recourse_solves for s in solvers)
    snaps = [V.copy() for V in V0]
    r = run_fwph(P, V0, xy0, None, HedgingConfig(rho=10.0, eps=0.0, k_max=15, keep_sdm_log=True), solvers)
    mi = np.diff([before] + [t.milp_solves for t in r.trace])
    qp = np.diff([0] + [t.qp_solves for t in r.trace])
    assert set(mi) == {S} and set(qp) == {S}
    counts = [t.vertices for t in r.trace]
    assert np.all(np.diff(counts) >= 0)
    assert all(V.issuperset(old) for V, old in zip(r.vertex_sets, snaps))
    assert r.identity_checks == r.iterations


def test_fwph_phi_is_lagrangian_at_shifted_multipliers():
    P = generate_problem(GAP_SEED)
    alpha, rho = 1.0, 4.0
    cfg = HedgingConfig(rho=rho, alpha=alpha, eps=0.0, k_max=8)
    runs = [solve_fwph(P, HedgingConfig(rho=rho, alpha=alpha, eps=0.0, k_max=k)) for k in range(1, 9)]
    full = solve_fwph(P, cfg)
    for k, r in enumerate(runs, start=1):
        assert r.trace[-1].phi == full.trace[k - 1].phi
    # the best multiplier reproduces the best bound
    lv = lagrangian_value(P, full.bound_omega)
    assert full.bound_omega.is_feasible(P.probabilities)
    assert lv.value == pytest.approx(full.best_phi, abs=1e-9 * (1 + abs(lv.value)))


def test_fwph_threads_do_not_change_trace():
    P = generate_problem(GAP_SEED)
    a = solve_fwph(P, HedgingConfig(rho=10.0, eps=0.0, k_max=25, threads=1))
    b = solve_fwph(P, HedgingConfig(rho=10.0, eps=0.0, k_max=25, threads=4))
    strip = lambda r: [(t.phi, t.best_phi, t.residual, t.milp_solves, t.vertices) for t in r.trace]
    assert strip(a) == strip(b)


def test_ph_threads_do_not_change_trace():
    P = generate_problem(GAP_SEED)
    a = run_ph(P, None, HedgingConfig(rho=10.0, eps=0.0, k_max=10, threads=1))
    b = run_ph(P, None, HedgingConfig(rho=10.0, eps=0.0, k_max=10, threads=3))
    assert [(t.phi, t.residual) for t in a.trace] == [(t.phi, t.residual) for t in b.trace]


def test_time_limit_stops_early():
    P = generate_problem(G1)
    r = solve_fwph(P, HedgingConfig(rho=1.0, eps=0.0, k_max=100000, time_limit=0.2))
    assert r.termination == TIME_LIMIT and r.termination_letter == "T"
    assert math.isfinite(r.best_phi)


def test_converged_implies_small_residual():
    P = generate_problem(G1)
    r = solve_fwph(P, HedgingConfig(rho=10.0, eps=1e-3))
    if r.termination == CONVERGED:
        assert r.residual < 1e-3
        assert r.termination_letter == "C"
