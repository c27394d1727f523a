"""Two-stage SMIP data model, scenario sets K_s, and the Lagrangian.

A scenario ``s`` defines ``K_s = {(x, y): x in X, T_s x + W_s y (sense) h_s,
y in Y_s}``. Multipliers are stored in the scaled form used throughout the
algorithms (``omega_s = mu_s / p_s``), so dual feasibility reads
``sum_s p_s omega_s = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, solve_lp
from .milp import MilpModel, ScenarioSolver

CONTINUOUS, INTEGER, BINARY = "C", "I", "B"
KINDS = (CONTINUOUS, INTEGER, BINARY)
PROB_TOL = 1e-12


def _arr(v, ndim=1):
    a = np.array(v, dtype=float)
    if ndim == 2 and a.ndim == 1 and a.size == 0:
        a = a.reshape(0, 0)
    return a


@dataclass(eq=False)
class FirstStageData:
    c: np.ndarray
    A: np.ndarray
    senses: tuple
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    kinds: tuple

    def __post_init__(self):
        self.c = _arr(self.c)
        self.A = _arr(self.A, 2).reshape(-1, self.c.shape[0]) if np.size(self.A) else np.zeros((0, self.c.shape[0]))
        self.rhs = _arr(self.rhs).reshape(-1)
        self.lb = _arr(self.lb)
        self.ub = _arr(self.ub)
        self.senses = tuple(self.senses)
        self.kinds = tuple(self.kinds)

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass(eq=False)
class ScenarioData:
    p: float
    q: np.ndarray
    W: np.ndarray
    T: np.ndarray
    h: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray
    y_kinds: tuple
    senses: tuple = None

    def __post_init__(self):
        self.p = float(self.p)
        self.q = _arr(self.q)
        self.h = _arr(self.h).reshape(-1)
        m = self.h.shape[0]
        self.W = _arr(self.W).reshape(m, -1) if m else np.zeros((0, self.q.shape[0]))
        self.T = _arr(self.T).reshape(m, -1) if m else np.zeros((0, 0))
        self.y_lb = _arr(self.y_lb)
        self.y_ub = _arr(self.y_ub)
        self.y_kinds = tuple(self.y_kinds)
        if self.senses is None:
            self.senses = ("=",) * m
        self.senses = tuple(self.senses)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]


@dataclass(eq=False)
class TwoStageProblem:
    first: FirstStageData
    scenarios: tuple
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scenarios = tuple(self.scenarios)
        if self.scenarios and self.first.n:
            for sc in self.scenarios:
                if sc.m == 0:
                    sc.T = np.zeros((0, self.first.n))

    @property
    def n_x(self) -> int:
        return self.first.n

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([sc.p for sc in self.scenarios])

    def first_stage_binary(self) -> list[int]:
        """Indices of first-stage variables that are *not* binary."""
        bad = []
        f = self.first
        for i, k in enumerate(f.kinds):
            is_bin = k == BINARY or (k == INTEGER and f.lb[i] >= 0 and f.ub[i] <= 1)
            if not is_bin:
                bad.append(i)
        return bad

    def equals(self, other: "TwoStageProblem") -> bool:
        """Exact (bitwise) equality of all data, used for round-trip checks."""
        def same(a, b):
            a, b = np.asarray(a), np.asarray(b)
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        f, g = self.first, other.first
        if not (same(f.c, g.c) and same(f.A, g.A) and f.senses == g.senses and same(f.rhs, g.rhs)
                and same(f.lb, g.lb) and same(f.ub, g.ub) and f.kinds == g.kinds):
            return False
        if self.name != other.name or self.meta != other.meta or self.n_scenarios != other.n_scenarios:
            return False
        for a, b in zip(self.scenarios, other.scenarios):
            if not (a.p == b.p and same(a.q, b.q) and same(a.W, b.W) and same(a.T, b.T)
                    and same(a.h, b.h) and same(a.y_lb, b.y_lb) and same(a.y_ub, b.y_ub)
                    and a.y_kinds == b.y_kinds and a.senses == b.senses):
                return False
        return True


@dataclass(eq=False)
class DualMultipliers:
    """Scaled multipliers, one row per scenario."""

    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.array(self.omega, dtype=float, ndmin=2)

    @classmethod
    def zeros(cls, problem: TwoStageProblem) -> "DualMultipliers":
        return cls(np.zeros((problem.n_scenarios, problem.n_x)))

    def weighted_sum(self, p) -> np.ndarray:
        return weighted_sum(p, self.omega)

    def is_feasible(self, p, tol: float = 1e-9) -> bool:
        scale = 1.0 + float(np.max(np.abs(self.omega), initial=0.0))
        return float(np.max(np.abs(self.weighted_sum(p)), initial=0.0)) <= tol * scale

    def recentered(self, p) -> "DualMultipliers":
        return DualMultipliers(self.omega - self.weighted_sum(p)[None, :])

    def copy(self) -> "DualMultipliers":
        return DualMultipliers(self.omega.copy())


def weighted_sum(p, rows) -> np.ndarray:
    """``sum_s p_s rows_s`` with exactly rounded, order-independent summation."""
    rows = np.asarray(rows, dtype=float)
    p = np.asarray(p, dtype=float)
    if rows.ndim == 1:
        return np.array(math.fsum(p * rows))
    out = np.empty(rows.shape[1])
    for j in range(rows.shape[1]):
        out[j] = math.fsum(p * rows[:, j])
    return out


@dataclass
class ValidationReport:
    issues: list

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "pass" if self.ok else "; ".join(self.issues)


def _check_bounds(issues, where, lb, ub, kinds, n):
    if lb.shape != (n,) or ub.shape != (n,) or len(kinds) != n:
        issues.append(f"{where}: bounds/kinds length mismatch (expected {n})")
        return
    for i in range(n):
        if kinds[i] not in KINDS:
            issues.append(f"{where}: variable {i} has unknown kind {kinds[i]!r}")
        if np.isnan(lb[i]) or np.isnan(ub[i]) or lb[i] > ub[i]:
            issues.append(f"{where}: variable {i} has lb > ub")
        if kinds[i] == BINARY and (lb[i] < 0 or ub[i] > 1):
            issues.append(f"{where}: binary variable {i} has bounds outside [0, 1]")
        if kinds[i] in (INTEGER, BINARY) and not (np.isfinite(lb[i]) and np.isfinite(ub[i])):
            issues.append(f"{where}: integer variable {i} needs finite bounds")


def validate(problem: TwoStageProblem, check_boundedness: bool = True) -> ValidationReport:
    """Report every violated invariant; never raises."""
    issues = []
    f = problem.first
    n = f.n
    if n < 1:
        issues.append("first stage: n_x must be >= 1")
    if f.A.shape != (len(f.senses), n) or f.rhs.shape != (len(f.senses),):
        issues.append("first stage: constraint dimensions inconsistent")
    if set(f.senses) - {"<", "=", ">"}:
        issues.append("first stage: unknown row sense")
    for name in ("c", "A", "rhs"):
        if not np.all(np.isfinite(getattr(f, name))):
            issues.append(f"first stage: non-finite entries in {name}")
    _check_bounds(issues, "first stage", f.lb, f.ub, f.kinds, n)
    if not problem.scenarios:
        issues.append("at least one scenario is required")
    for s, sc in enumerate(problem.scenarios):
        where = f"scenario {s}"
        if not sc.p > 0:
            issues.append(f"{where}: probability must be positive")
        ny, m = sc.n, sc.m
        if sc.W.shape != (m, ny):
            issues.append(f"{where}: W has shape {sc.W.shape}, expected {(m, ny)}")
        if sc.T.shape != (m, n):
            issues.append(f"{where}: T has {sc.T.shape[1] if sc.T.ndim == 2 else '?'} columns, expected n_x = {n}")
        if len(sc.senses) != m or set(sc.senses) - {"<", "=", ">"}:
            issues.append(f"{where}: row senses inconsistent")
        for name in ("q", "W", "T", "h"):
            if not np.all(np.isfinite(getattr(sc, name))):
                issues.append(f"{where}: non-finite entries in {name}")
        _check_bounds(issues, where, sc.y_lb, sc.y_ub, sc.y_kinds, ny)
    if problem.scenarios:
        total = math.fsum(sc.p for sc in problem.scenarios)
        if abs(total - 1.0) > PROB_TOL:
            issues.append(f"probabilities sum to {total!r} != 1")
    if check_boundedness and not issues:
        issues.extend(_boundedness_issues(problem))
    return ValidationReport(issues)


def _boundedness_issues(problem: TwoStageProblem) -> list:
    """Continuous variables with an infinite bound must be bounded by the rows."""
    out = []
    for s in range(problem.n_scenarios):
        model = scenario_milp(problem, s)
        lp = model.lp
        infinite = [j for j in range(lp.n) if not (np.isfinite(lp.lb[j]) and np.isfinite(lp.ub[j]))]
        for j in infinite:
            for sgn in (1.0, -1.0):
                c = np.zeros(lp.n)
                c[j] = sgn
                sol = solve_lp(LinearProgram(c, lp.A, lp.senses, lp.rhs, lp.lb, lp.ub))
                if sol.status == "unbounded":
                    out.append(f"scenario {s}: variable {j} of (x, y) is unbounded over K_s")
                    break
    return out


def _kinds_to_integrality(kinds) -> np.ndarray:
    return np.array([k != CONTINUOUS for k in kinds], dtype=bool)


def scenario_milp(problem: TwoStageProblem, s: int, w=None) -> MilpModel:
    """``min (c + w)'x + q_s'y`` over ``K_s``; variables ordered ``(x, y)``."""
    f = problem.first
    sc = problem.scenarios[s]
    n, ny = f.n, sc.n
    cx = f.c if w is None else f.c + np.asarray(w, dtype=float)
    c = np.concatenate([cx, sc.q])
    A = np.zeros((f.A.shape[0] + sc.m, n + ny))
    A[: f.A.shape[0], :n] = f.A
    A[f.A.shape[0]:, :n] = sc.T
    A[f.A.shape[0]:, n:] = sc.W
    lp = LinearProgram(
        c=c,
        A=A,
        senses=f.senses + sc.senses,
        rhs=np.concatenate([f.rhs, sc.h]),
        lb=np.concatenate([f.lb, sc.y_lb]),
        ub=np.concatenate([f.ub, sc.y_ub]),
    )
    return MilpModel(lp, _kinds_to_integrality(f.kinds + sc.y_kinds), n_first=n,
                     name=f"{problem.name}:scenario{s}")


def build_extensive_form(problem: TwoStageProblem) -> MilpModel:
    """Deterministic equivalent over ``(x, y_1, ..., y_S)``."""
    f = problem.first
    n = f.n
    sizes = [sc.n for sc in problem.scenarios]
    offs = np.cumsum([n] + sizes)
    ncol = int(offs[-1])
    rows = f.A.shape[0] + sum(sc.m for sc in problem.scenarios)
    A = np.zeros((rows, ncol))
    A[: f.A.shape[0], :n] = f.A
    c = np.zeros(ncol)
    c[:n] = f.c
    senses = list(f.senses)
    rhs = [f.rhs]
    lb = [f.lb]
    ub = [f.ub]
    kinds = list(f.kinds)
    r = f.A.shape[0]
    for s, sc in enumerate(problem.scenarios):
        a, b = int(offs[s]), int(offs[s + 1])
        A[r: r + sc.m, :n] = sc.T
        A[r: r + sc.m, a:b] = sc.W
        c[a:b] = sc.p * sc.q
        r += sc.m
        senses += list(sc.senses)
        rhs.append(sc.h)
        lb.append(sc.y_lb)
        ub.append(sc.y_ub)
        kinds += list(sc.y_kinds)
    lp = LinearProgram(c, A, senses, np.concatenate(rhs), np.concatenate(lb), np.concatenate(ub))
    return MilpModel(lp, _kinds_to_integrality(kinds), n_first=n, name=f"{problem.name}:EF")


def scenario_solvers(problem: TwoStageProblem, node_limit=None, time_limit=None) -> list:
    """One reusable MILP handle per scenario."""
    return [ScenarioSolver(scenario_milp(problem, s), node_limit=node_limit, time_limit=time_limit)
            for s in range(problem.n_scenarios)]


def lagrangian_objective(problem: TwoStageProblem, s: int, x, y, w) -> float:
    """``(c + w_s)'x + q_s'y``; the per-scenario summand of phi."""
    return float((problem.first.c + w) @ x + problem.scenarios[s].q @ y)


def augmented_lagrangian(problem: TwoStageProblem, s: int, x, y, z, w, rho: float) -> float:
    d = np.asarray(x) - z
    return float(problem.first.c @ x + problem.scenarios[s].q @ y + np.dot(w, d) + 0.5 * rho * np.dot(d, d))


@dataclass
class LagrangianValue:
    value: float
    phis: np.ndarray
    points: list
    exact: bool
    flags: list


class SubproblemError(RuntimeError):
    def __init__(self, scenario: int, status: str, detail: str = ""):
        self.scenario = scenario
        self.status = status
        msg = f"scenario {scenario}: subproblem {status}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


def lagrangian_value(problem: TwoStageProblem, omega: DualMultipliers, solvers=None,
                     check_feasible: bool = True) -> LagrangianValue:
    """phi(omega) = sum_s p_s phi_s(omega_s) together with the scenario argmins.

    A scenario solve stopped by a limit contributes its certified dual bound,
    which keeps the result a valid under-estimate; the outcome is then marked
    inexact.
    """
    p = problem.probabilities
    if check_feasible and not omega.is_feasible(p):
        raise ValueError("omega is not dual feasible: sum_s p_s omega_s != 0")
    if solvers is None:
        solvers = scenario_solvers(problem)
    phis = np.empty(problem.n_scenarios)
    points = []
    flags = []
    for s, solver in enumerate(solvers):
        sol = solver.linear(omega.omega[s])
        if sol.status in ("infeasible", "unbounded"):
            raise SubproblemError(s, sol.status)
        phis[s] = sol.bound_value
        if sol.status != "optimal":
            flags.append(s)
        points.append(sol.x)
    return LagrangianValue(float(weighted_sum(p, phis)), phis, points, not flags, flags)
