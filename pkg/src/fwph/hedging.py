"""Progressive hedging and FW-PH.

Both outer loops are synchronous: scenario work inside an iteration may run on
a thread pool, but every reduction (``z``, ``phi``, residuals, multiplier
updates) happens afterwards in fixed scenario order with exactly rounded sums,
so traces do not depend on the number of workers.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fwcore import INIT_FEASIBLE, MILP_VERTEX, VertexSet, run_sdm
from .lp import LinearProgram, solve_lp
from .model import DualMultipliers, SubproblemError, TwoStageProblem, scenario_solvers, weighted_sum

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
TIME_LIMIT = "time-limit"

INEXACT = "inexact-subproblem"
NO_BOUND = "no-bound"


class PreconditionError(ValueError):
    pass


class RecourseError(PreconditionError):
    def __init__(self, scenario: int):
        self.scenario = scenario
        super().__init__(f"recourse assumption violated: scenario {scenario} has no feasible "
                         "recourse for the common first-stage point")


class LimitError(RuntimeError):
    """A solve hit its limits before producing any point to continue with."""


@dataclass
class HedgingConfig:
    rho: float = 1.0
    alpha: float = 0.0
    eps: float = 1e-3
    k_max: int = 1000
    t_max: int = 1
    time_limit: float | None = None
    bounds_every: int = 1
    tau: float = 0.0
    recenter: bool = True
    threads: int = 1
    check_identity: bool = True
    node_limit: int | None = None
    milp_time_limit: float | None = None
    keep_sdm_log: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.k_max < 1 or self.t_max < 1:
            raise ValueError("k_max and t_max must be at least 1")
        if self.bounds_every < 1:
            raise ValueError("bounds_every must be at least 1")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


@dataclass
class IterationRecord:
    k: int
    phi: float
    best_phi: float
    residual: float
    wall: float
    milp_solves: int
    vertices: int
    qp_solves: int = 0
    flags: tuple = ()


@dataclass
class PrimalIterate:
    x: np.ndarray
    y: list
    z: np.ndarray


@dataclass
class RunResult:
    method: str
    iterate: PrimalIterate
    omega: DualMultipliers
    phi: float
    best_phi: float
    termination: str
    trace: list
    bound_omega: DualMultipliers | None = None
    vertex_sets: list | None = None
    identity_checks: int = 0
    sdm_log: list = field(default_factory=list)

    @property
    def termination_letter(self) -> str:
        return "C" if self.termination == CONVERGED else "T"

    @property
    def iterations(self) -> int:
        return self.trace[-1].k if self.trace else 0

    @property
    def residual(self) -> float:
        return self.trace[-1].residual if self.trace else math.nan


def residual(x, z_prev, p) -> float:
    """``sqrt(sum_s p_s ||x_s - z_prev||^2)``."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(z_prev, dtype=float)[None, :]
    return math.sqrt(math.fsum(np.asarray(p) * np.einsum("ij,ij->i", d, d)))


def residual_split(x, z, z_prev, p) -> tuple[float, float]:
    """Primal plus dual squared residual, and the squared stopping residual."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    dp = x - z[None, :]
    dd = z - z_prev
    lhs = math.fsum(p * (np.einsum("ij,ij->i", dp, dp) + float(dd @ dd)))
    rhs = residual(x, z_prev, p) ** 2
    return lhs, rhs


def identity_holds(lhs: float, rhs: float, x, z_prev, rel: float = 1e-10) -> bool:
    # the cross term vanishes only up to the rounding of z, hence the tiny absolute floor
    scale = 1.0 + float(np.max(np.abs(x), initial=0.0)) ** 2 + float(np.max(np.abs(z_prev), initial=0.0)) ** 2
    return abs(lhs - rhs) <= rel * max(lhs, rhs) + 1e-14 * scale


def dual_update(omega: DualMultipliers, x, z, rho: float, p=None, recenter: bool = True) -> DualMultipliers:
    """``omega_s + rho (x_s - z)``, optionally re-centered to keep sum_s p_s omega_s = 0."""
    new = DualMultipliers(omega.omega + rho * (np.asarray(x, dtype=float) - np.asarray(z)[None, :]))
    if recenter and p is not None:
        new = new.recentered(p)
    return new


def _pmap(fn, n, threads):
    if threads <= 1 or n <= 1:
        return [fn(s) for s in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _mi_count(solvers) -> int:
    return sum(s.milp_solves + s.miqp_solves + s.recourse_solves for s in solvers)


def _check_omega0(problem, omega0):
    if omega0.omega.shape != (problem.n_scenarios, problem.n_x):
        raise PreconditionError("omega0 must have one row of length n_x per scenario")
    if not omega0.is_feasible(problem.probabilities):
        raise PreconditionError("omega0 is not dual feasible: sum_s p_s omega_s != 0")


def _point_or_raise(sol, s, what):
    if sol.status in ("infeasible", "unbounded"):
        raise SubproblemError(s, sol.status, what)
    if sol.x is None:
        raise LimitError(f"scenario {s}: {what} hit its limits without a feasible point")
    return sol


def run_ph(problem: TwoStageProblem, omega0: DualMultipliers | None, config: HedgingConfig,
           solvers=None) -> RunResult:
    """PH over D_s = K_s with Lagrangian bound recovery.

    The proximal subproblem is solved exactly as a MILP by linearizing the
    quadratic term, which requires a pure-binary first stage.
    """
    bad = problem.first_stage_binary()
    if bad:
        raise PreconditionError(
            "PH requires a pure-binary first stage; non-binary first-stage variables: "
            + ", ".join(f"x[{i}]" for i in bad))
    p = problem.probabilities
    S, n = problem.n_scenarios, problem.n_x
    omega = DualMultipliers.zeros(problem) if omega0 is None else omega0.copy()
    _check_omega0(problem, omega)
    if solvers is None:
        solvers = scenario_solvers(problem, config.node_limit, config.milp_time_limit)
    rho = config.rho
    start = time.perf_counter()

    init = _pmap(lambda s: _point_or_raise(solvers[s].linear(omega.omega[s]), s, "initial MILP"),
                 S, config.threads)
    x = np.array([sol.x[:n] for sol in init])
    y = [sol.x[n:] for sol in init]
    phis = np.array([sol.bound_value for sol in init])
    flags = (INEXACT,) if any(sol.status != "optimal" for sol in init) else ()
    phi = float(weighted_sum(p, phis))
    best = phi
    z = weighted_sum(p, x)
    trace = [IterationRecord(0, phi, best, residual(x, z, p), time.perf_counter() - start,
                             _mi_count(solvers), 0, 0, flags)]
    bound_omega = omega.copy()
    omega = dual_update(omega, x, z, rho, p, config.recenter)
    z_prev = z
    termination = ITERATION_LIMIT
    checks = 0
    last_phi = phi

    for k in range(1, config.k_max + 1):
        want_bound = k % config.bounds_every == 0
        om = omega.omega

        def work(s):
            b = solvers[s].linear(om[s]) if want_bound else None
            if b is not None and b.status in ("infeasible", "unbounded"):
                raise SubproblemError(s, b.status, "bound MILP")
            prox = _point_or_raise(solvers[s].prox(z_prev, om[s], rho), s, "proximal MILP")
            return b, prox

        out = _pmap(work, S, config.threads)
        x = np.array([o[1].x[:n] for o in out])
        y = [o[1].x[n:] for o in out]
        flags = []
        if want_bound:
            phis = np.array([o[0].bound_value for o in out])
            phi = float(weighted_sum(p, phis))
            last_phi = phi
            if phi > best:
                best = phi
                bound_omega = omega.copy()
            if any(o[0].status != "optimal" for o in out):
                flags.append(INEXACT)
        else:
            phi = math.nan
            flags.append(NO_BOUND)
        if any(o[1].status != "optimal" for o in out) and INEXACT not in flags:
            flags.append(INEXACT)
        z = weighted_sum(p, x)
        res = residual(x, z_prev, p)
        if config.check_identity:
            lhs, rhs = residual_split(x, z, z_prev, p)
            if not identity_holds(lhs, rhs, x, z_prev):
                raise AssertionError(f"residual identity violated at k={k}: {lhs!r} vs {rhs!r}")
            checks += 1
        trace.append(IterationRecord(k, phi, best, res, time.perf_counter() - start,
                                     _mi_count(solvers), 0, 0, tuple(flags)))
        if res < config.eps:
            termination = CONVERGED
            break
        if config.time_limit is not None and time.perf_counter() - start >= config.time_limit:
            termination = TIME_LIMIT
            break
        if k < config.k_max:
            omega = dual_update(omega, x, z, rho, p, config.recenter)
        z_prev = z

    return RunResult("ph", PrimalIterate(x, y, z), omega, last_phi, best, termination, trace,
                     bound_omega=bound_omega, identity_checks=checks)


def fwph_initialize(problem: TwoStageProblem, omega0: DualMultipliers | None = None, solvers=None,
                    threads: int = 1):
    """Initial vertex sets sharing the common first-stage point ``x_1^0``.

    Each scenario contributes its Lagrangian argmin at ``omega0``; every other
    scenario also gets the recourse completion of scenario 0's first stage.
    Returns ``(vertex_sets, [(x_s, y_s), ...])``.
    """
    S, n = problem.n_scenarios, problem.n_x
    omega = DualMultipliers.zeros(problem) if omega0 is None else omega0
    if solvers is None:
        solvers = scenario_solvers(problem)
    sols = _pmap(lambda s: _point_or_raise(solvers[s].linear(omega.omega[s]), s, "initial MILP"),
                 S, threads)
    x1 = sols[0].x[:n]

    def complete(s):
        if s == 0:
            return None
        rec = solvers[s].recourse(x1)
        if rec.status == "infeasible":
            raise RecourseError(s)
        return _point_or_raise(rec, s, "recourse problem")

    recs = _pmap(complete, S, threads)
    Vs = []
    xy0 = []
    for s in range(S):
        ny = problem.scenarios[s].n
        V = VertexSet(n, ny)
        V.add(sols[s].x, MILP_VERTEX)
        if recs[s] is not None:
            V.add(np.concatenate([x1, recs[s].x[n:]]), INIT_FEASIBLE)
        Vs.append(V)
        xy0.append((sols[s].x[:n].copy(), sols[s].x[n:].copy()))
    return Vs, xy0


def common_point(vertex_sets) -> np.ndarray | None:
    """A point of the intersection of Proj_x conv(V_s), or None if it is empty."""
    n = vertex_sets[0].n_x
    sizes = [len(V) for V in vertex_sets]
    ncol = n + sum(sizes)
    rows = []
    rhs = []
    senses = []
    off = n
    for V, k in zip(vertex_sets, sizes):
        r = np.zeros(ncol)
        r[off:off + k] = 1.0
        rows.append(r)
        rhs.append(1.0)
        senses.append("=")
        for i in range(n):
            r = np.zeros(ncol)
            r[off:off + k] = V.X[:, i]
            r[i] = -1.0
            rows.append(r)
            rhs.append(0.0)
            senses.append("=")
        off += k
    lb = np.concatenate([np.full(n, -np.inf), np.zeros(ncol - n)])
    ub = np.full(ncol, np.inf)
    sol = solve_lp(LinearProgram(np.zeros(ncol), np.array(rows), senses, rhs, lb, ub))
    return sol.x[:n] if sol.optimal else None


def run_fwph(problem: TwoStageProblem, V0, xy0, omega0: DualMultipliers | None, config: HedgingConfig,
             solvers=None) -> RunResult:
    """FW-PH: PH whose primal step is a few simplicial-decomposition iterations.

    Every phi^k equals phi(omega_tilde^k) with
    ``omega_tilde^k = omega^k + alpha rho (x^{k-1} - z^{k-1})``, which is dual
    feasible, so each iteration yields a valid Lagrangian bound from the t = 1
    MILP of each scenario alone.
    """
    p = problem.probabilities
    S, n = problem.n_scenarios, problem.n_x
    omega = DualMultipliers.zeros(problem) if omega0 is None else omega0.copy()
    _check_omega0(problem, omega)
    if len(V0) != S or len(xy0) != S:
        raise PreconditionError("need one vertex set and one starting point per scenario")
    if config.t_max == 1 and common_point(V0) is None:
        raise PreconditionError("with t_max = 1 the initial vertex sets must share a common first-stage point")
    if solvers is None:
        solvers = scenario_solvers(problem, config.node_limit, config.milp_time_limit)
    rho, alpha = config.rho, config.alpha
    costs = [np.concatenate([problem.first.c, sc.q]) for sc in problem.scenarios]
    Vs = V0
    start = time.perf_counter()

    x = np.array([np.asarray(xy[0], dtype=float) for xy in xy0])
    y = [np.asarray(xy[1], dtype=float) for xy in xy0]
    z_prev = weighted_sum(p, x)
    omega = dual_update(omega, x, z_prev, rho, p, config.recenter)
    weights = [None] * S
    best = -math.inf
    phi = math.nan
    trace = []
    termination = ITERATION_LIMIT
    checks = 0
    qp_total = 0
    bound_omega = None
    sdm_log = []

    for k in range(1, config.k_max + 1):
        om = omega.omega
        x_tilde = (1.0 - alpha) * z_prev[None, :] + alpha * x

        def work(s):
            return run_sdm(Vs[s], x_tilde[s], y[s], om[s], z_prev, rho, config.t_max, config.tau,
                           solvers[s], costs[s], warm=weights[s])

        outs = _pmap(work, S, config.threads)
        omega_tilde = DualMultipliers(om + alpha * rho * (x - z_prev[None, :]))
        x = np.array([o.x for o in outs])
        y = [o.y for o in outs]
        weights = [o.weights for o in outs]
        qp_total += sum(o.qp_solves for o in outs)
        phi = float(weighted_sum(p, np.array([o.phi for o in outs])))
        flags = [] if all(o.phi_exact for o in outs) else [INEXACT]
        if not all(o.qp_converged for o in outs):
            flags.append("qp-iteration-limit")
        if phi > best:
            best = phi
            bound_omega = omega_tilde
        if config.keep_sdm_log:
            sdm_log.append(outs)
        z = weighted_sum(p, x)
        res = residual(x, z_prev, p)
        if config.check_identity:
            lhs, rhs = residual_split(x, z, z_prev, p)
            if not identity_holds(lhs, rhs, x, z_prev):
                raise AssertionError(f"residual identity violated at k={k}: {lhs!r} vs {rhs!r}")
            checks += 1
        trace.append(IterationRecord(k, phi, best, res, time.perf_counter() - start, _mi_count(solvers),
                                     sum(len(V) for V in Vs), qp_total, tuple(flags)))
        if res < config.eps:
            termination = CONVERGED
            z_prev = z
            break
        if config.time_limit is not None and time.perf_counter() - start >= config.time_limit:
            termination = TIME_LIMIT
            z_prev = z
            break
        if k < config.k_max:
            omega = dual_update(omega, x, z, rho, p, config.recenter)
        z_prev = z

    return RunResult("fwph", PrimalIterate(x, y, z_prev), omega, phi, best, termination, trace,
                     bound_omega=bound_omega, vertex_sets=Vs, identity_checks=checks, sdm_log=sdm_log)


def solve_fwph(problem: TwoStageProblem, config: HedgingConfig, omega0: DualMultipliers | None = None,
               solvers=None) -> RunResult:
    """Initialization followed by the FW-PH loop, sharing one set of MILP handles."""
    if solvers is None:
        solvers = scenario_solvers(problem, config.node_limit, config.milp_time_limit)
    V0, xy0 = fwph_initialize(problem, omega0, solvers, config.threads)
    return run_fwph(problem, V0, xy0, omega0, config, solvers)
