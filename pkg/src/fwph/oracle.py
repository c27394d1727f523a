"""Independent values of zeta^LD and zeta^SMIP for small instances.

``enumerate_ld`` lists the points of every K_s and solves the convexified
problem ``min sum_s p_s (c'x_s + q_s'y_s)`` over ``(x_s, y_s) in conv(K_s)``
with ``x_s = z`` as one LP. ``kelley_ld`` maximizes the dual function by
cutting planes using only scenario MILPs. The two share no code beyond the
LP solver, which is what makes their agreement meaningful.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, solve_lp
from .milp import solve_milp
from .model import (DualMultipliers, SubproblemError, TwoStageProblem, build_extensive_form,
                    lagrangian_value, scenario_milp, scenario_solvers)

ENUMERATION = "enumeration"
KELLEY = "kelley"
EXTENSIVE_FORM = "extensive-form"

MAX_POINTS = 100_000
FEAS_TOL = 1e-7


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    value: float
    method: str
    certificate: dict = field(default_factory=dict)
    iterations: int = 0
    lower: float = math.nan
    upper: float = math.nan
    converged: bool = True


def solve_ef(problem: TwoStageProblem, node_limit=None, time_limit=None) -> OracleResult:
    """zeta^SMIP from the extensive form."""
    sol = solve_milp(build_extensive_form(problem), node_limit, time_limit)
    if sol.status != "optimal":
        raise OracleError(f"extensive form not solved: {sol.status}")
    return OracleResult(sol.objective, EXTENSIVE_FORM, {"x": sol.x, "nodes": sol.nodes}, sol.nodes,
                        sol.bound, sol.objective)


def _row_ok(A, b, is_eq, v, tol=FEAS_TOL):
    if A.shape[0] == 0:
        return True
    r = A @ v - b
    scale = tol * (1.0 + np.abs(b))
    return bool(np.all(np.where(is_eq, np.abs(r) <= scale, r <= scale)))


def _fiber_vertices(A, b, is_eq, lb, ub, free, base, budget):
    """Vertices of ``{v : A v (<=|=) b, lb <= v <= ub}`` with only ``free`` columns movable.

    Brute force over sets of tight constraints; fine for a handful of columns.
    """
    d = len(free)
    if d == 0:
        return [base.copy()] if _row_ok(A, b, is_eq, base) else []
    resid = b - A @ base
    Af = A[:, free]
    # candidate tight constraints: every row, and both bounds of each free column
    cands = []
    for i in range(A.shape[0]):
        cands.append((Af[i], resid[i], is_eq[i]))
    for k, j in enumerate(free):
        e = np.zeros(d)
        e[k] = 1.0
        if np.isfinite(lb[j]):
            cands.append((e, lb[j], False))
        if np.isfinite(ub[j]):
            cands.append((e, ub[j], False))
    eq_idx = [i for i, cd in enumerate(cands) if cd[2]]
    ineq_idx = [i for i, cd in enumerate(cands) if not cd[2]]
    out = []
    seen = set()
    count = 0
    for extra in range(0, d + 1):
        for combo in itertools.combinations(ineq_idx, extra):
            count += 1
            if count > budget:
                raise OracleError("enumeration budget exceeded while listing fiber vertices")
            rows = eq_idx + list(combo)
            M = np.array([cands[i][0] for i in rows]).reshape(len(rows), d)
            r = np.array([cands[i][1] for i in rows])
            if np.linalg.matrix_rank(M) < d if M.size else d > 0:
                continue
            sol, *_ = np.linalg.lstsq(M, r, rcond=None)
            if np.max(np.abs(M @ sol - r)) > 1e-9 * (1.0 + np.max(np.abs(r))):
                continue
            v = base.copy()
            v[free] = sol
            if np.any(v < lb - FEAS_TOL) or np.any(v > ub + FEAS_TOL) or not _row_ok(A, b, is_eq, v):
                continue
            key = tuple(np.round(v, 9))
            if key not in seen:
                seen.add(key)
                out.append(v)
    return out


def enumerate_points(problem: TwoStageProblem, s: int, budget: int = MAX_POINTS) -> np.ndarray:
    """Points of K_s that generate conv(K_s) for the convexified problem.

    Integer columns are enumerated on their lattice. When every first-stage
    column is integer, the continuous recourse of each assignment is resolved
    by its LP optimum (only the cheapest point per first-stage value can matter
    in the convexified objective); otherwise every fiber vertex is listed.
    """
    model = scenario_milp(problem, s)
    lp = model.lp
    A, b, is_eq, _ = lp.normalized()
    n = lp.n
    n_x = problem.n_x
    ints = np.flatnonzero(model.integrality)
    conts = np.flatnonzero(~model.integrality)
    x_integer = bool(np.all(model.integrality[:n_x]))
    ranges = []
    size = 1
    for j in ints:
        lo, hi = math.ceil(lp.lb[j] - 1e-9), math.floor(lp.ub[j] + 1e-9)
        if hi < lo:
            return np.zeros((0, n))
        ranges.append(range(lo, hi + 1))
        size *= hi - lo + 1
        if size > budget:
            raise OracleError(f"scenario {s}: integer lattice has more than {budget} points")
    c = lp.c
    best = {}
    pts = []
    for combo in itertools.product(*ranges):
        base = np.where(np.isfinite(lp.lb), lp.lb, 0.0).astype(float)
        base[ints] = combo
        if len(conts) == 0:
            if _row_ok(A, b, is_eq, base):
                cand = [base]
            else:
                cand = []
        elif x_integer:
            lbf, ubf = lp.lb.copy(), lp.ub.copy()
            lbf[ints] = combo
            ubf[ints] = combo
            sol = solve_lp(LinearProgram(c, lp.A, lp.senses, lp.rhs, lbf, ubf))
            if sol.status == "unbounded":
                raise OracleError(f"scenario {s}: unbounded continuous fiber")
            cand = [sol.x] if sol.optimal else []
            if cand:
                cand[0][ints] = combo
        else:
            cand = _fiber_vertices(A, b, is_eq, lp.lb, lp.ub, list(conts), base, budget)
        for v in cand:
            if x_integer:
                key = tuple(v[:n_x])
                val = float(c @ v)
                if key not in best or val < best[key][0]:
                    best[key] = (val, v)
            else:
                pts.append(v)
                if len(pts) > budget:
                    raise OracleError(f"scenario {s}: more than {budget} points")
    if x_integer:
        pts = [best[k][1] for k in sorted(best)]
    return np.array(pts).reshape(len(pts), n)


def enumerate_ld(problem: TwoStageProblem, budget: int = MAX_POINTS) -> OracleResult:
    """zeta^LD as one LP over convex weights of the enumerated points."""
    S, n_x = problem.n_scenarios, problem.n_x
    p = problem.probabilities
    c = problem.first.c
    point_sets = []
    total = 0
    for s in range(S):
        P = enumerate_points(problem, s, budget)
        if P.shape[0] == 0:
            raise OracleError(f"scenario {s}: K_s is empty")
        total += P.shape[0]
        if total > budget:
            raise OracleError(f"more than {budget} enumerated points")
        point_sets.append(P)
    ncol = total + n_x
    cost = np.zeros(ncol)
    rows, rhs = [], []
    off = 0
    for s, P in enumerate(point_sets):
        k = P.shape[0]
        q = problem.scenarios[s].q
        cost[off:off + k] = p[s] * (P[:, :n_x] @ c + P[:, n_x:] @ q)
        r = np.zeros(ncol)
        r[off:off + k] = 1.0
        rows.append(r)
        rhs.append(1.0)
        for i in range(n_x):
            r = np.zeros(ncol)
            r[off:off + k] = P[:, i]
            r[total + i] = -1.0
            rows.append(r)
            rhs.append(0.0)
        off += k
    lb = np.concatenate([np.zeros(total), np.full(n_x, -np.inf)])
    ub = np.full(ncol, np.inf)
    lp = LinearProgram(cost, np.array(rows), ["="] * len(rows), rhs, lb, ub)
    sol = solve_lp(lp)
    if not sol.optimal:
        raise OracleError(f"convexified LP returned {sol.status}")
    weights = []
    off = 0
    for P in point_sets:
        weights.append(sol.x[off:off + P.shape[0]])
        off += P.shape[0]
    cert = {"points": point_sets, "weights": weights, "z": sol.x[total:], "n_points": total}
    return OracleResult(sol.objective, ENUMERATION, cert, 1, sol.objective, sol.objective)


def enumerate_smip(problem: TwoStageProblem, budget: int = MAX_POINTS) -> OracleResult:
    """zeta^SMIP by enumeration; requires an all-integer first stage."""
    if not all(k != "C" for k in problem.first.kinds):
        raise OracleError("enumeration of zeta^SMIP needs an integer first stage")
    n_x = problem.n_x
    c = problem.first.c
    p = problem.probabilities
    per = []
    for s in range(problem.n_scenarios):
        P = enumerate_points(problem, s, budget)
        q = problem.scenarios[s].q
        d = {}
        for v in P:
            key = tuple(v[:n_x])
            val = float(q @ v[n_x:])
            d[key] = min(val, d.get(key, math.inf))
        per.append(d)
    common = set(per[0])
    for d in per[1:]:
        common &= set(d)
    if not common:
        raise OracleError("no first-stage point is feasible in every scenario")
    best, arg = math.inf, None
    for key in sorted(common):
        val = float(c @ np.array(key)) + math.fsum(p[s] * per[s][key] for s in range(len(per)))
        if val < best:
            best, arg = val, np.array(key)
    return OracleResult(best, ENUMERATION, {"x": arg}, len(common), best, best)


def kelley_ld(problem: TwoStageProblem, tol_abs: float = 1e-7, tol_rel: float = 1e-7,
              iter_limit: int = 2000, solvers=None, omega0: DualMultipliers | None = None) -> OracleResult:
    """Cutting-plane maximization of phi over dual-feasible omega.

    The master LP carries ``omega`` (box ``|omega| <= R``) and one epigraph
    variable per scenario; cuts are ``theta_s <= (c + omega_s)'x + q_s'y`` at
    every evaluated scenario argmin. If the box is active when the bounds meet,
    it is widened tenfold and the loop continues.
    """
    S, n_x = problem.n_scenarios, problem.n_x
    p = problem.probabilities
    c = problem.first.c
    if solvers is None:
        solvers = scenario_solvers(problem)
    R = 1e3 * (1.0 + float(np.max(np.abs(c), initial=0.0)))
    n_om = S * n_x
    ncol = n_om + S
    cut_rows, cut_rhs = [], []
    seen = [set() for _ in range(S)]
    lower = -math.inf
    best_omega = None
    upper_hist, lower_hist = [], []
    omega = DualMultipliers.zeros(problem) if omega0 is None else omega0.copy()
    upper = math.inf
    it = 0
    converged = False
    while it < iter_limit:
        it += 1
        omega = omega.recentered(p)
        lv = lagrangian_value(problem, omega, solvers)
        if lv.value > lower:
            lower = lv.value
            best_omega = omega.copy()
        lower_hist.append(lower)
        for s, pt in enumerate(lv.points):
            if pt is None:
                raise SubproblemError(s, "bound-only", "no point for a cut")
            key = tuple(np.round(pt, 12))
            if key in seen[s]:
                continue
            seen[s].add(key)
            r = np.zeros(ncol)
            r[s * n_x:(s + 1) * n_x] = -pt[:n_x]
            r[n_om + s] = 1.0
            cut_rows.append(r)
            cut_rhs.append(float(c @ pt[:n_x] + problem.scenarios[s].q @ pt[n_x:]))
        rows = list(cut_rows)
        rhs = list(cut_rhs)
        senses = ["<"] * len(rows)
        for i in range(n_x):
            r = np.zeros(ncol)
            r[[s * n_x + i for s in range(S)]] = p
            rows.append(r)
            rhs.append(0.0)
            senses.append("=")
        cost = np.concatenate([np.zeros(n_om), -p])
        lb = np.concatenate([np.full(n_om, -R), np.full(S, -np.inf)])
        ub = np.concatenate([np.full(n_om, R), np.full(S, np.inf)])
        sol = solve_lp(LinearProgram(cost, np.array(rows), senses, rhs, lb, ub))
        if not sol.optimal:
            raise OracleError(f"Kelley master returned {sol.status}")
        upper = -sol.objective
        upper_hist.append(upper)
        omega = DualMultipliers(sol.x[:n_om].reshape(S, n_x).copy())
        if upper - lower <= tol_abs + tol_rel * abs(lower):
            # the box only matters where it binds with a nonzero reduced cost;
            # otherwise the same basis stays optimal without it
            at_box = np.abs(sol.x[:n_om]) >= R * (1.0 - 1e-9)
            rc = np.abs(sol.reduced_costs[:n_om])
            if np.any(at_box & (rc > 1e-9 * (1.0 + abs(upper)))):
                R *= 10.0
                continue
            converged = True
            break
    cert = {"cuts": len(cut_rows), "omega": best_omega, "box": R,
            "upper_history": upper_hist, "lower_history": lower_hist}
    return OracleResult(lower, KELLEY, cert, it, lower, upper, converged)


def wait_and_see(problem: TwoStageProblem, solvers=None) -> float:
    """phi(0)."""
    return lagrangian_value(problem, DualMultipliers.zeros(problem), solvers).value
