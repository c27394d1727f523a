"""Dense bounded-variable primal simplex.

The solver works on ``min c'x  s.t.  A x (<=|=|>=) b,  lb <= x <= ub`` with
possibly infinite bounds. Rows are normalized to ``<=`` / ``=`` internally,
every row receives a slack (fixed at zero for equalities) and an artificial
column, and Phase 1 minimizes the sum of the artificials that start basic.

The tableau carries the artificial block, so ``B^-1`` is always available and
row duals can be read off directly. Pricing is Dantzig's rule until
``3 * (rows + cols)`` degenerate pivots have been taken, after which Bland's
rule is used for the rest of the phase.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2, 3
STATUS_NAMES = {
    OPTIMAL: "optimal",
    INFEASIBLE: "infeasible",
    UNBOUNDED: "unbounded",
    ITERATION_LIMIT: "iteration_limit",
}

AT_LOWER, AT_UPPER, FREE_ZERO, BASIC = 0, 1, 2, 3

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
TIE_TOL = 1e-12


class SingularBasisError(ArithmeticError):
    """The maintained basis drifted away from a recomputed one."""


@njit(cache=True, nogil=True)
def _reduced_costs(T, head, cost):
    m, N = T.shape
    d = cost.copy()
    for i in range(m):
        cb = cost[head[i]]
        if cb != 0.0:
            for j in range(N):
                d[j] -= cb * T[i, j]
    return d


@njit(cache=True, nogil=True)
def _refresh_basics(T, x, head, status, Acol, sigma, b, n):
    """Recompute basic values from B^-1 (read off the artificial block).

    Returns the largest change, which measures accumulated drift.
    """
    m = T.shape[0]
    rhs = b.copy()
    N = x.shape[0]
    for j in range(N):
        if status[j] == BASIC or x[j] == 0.0:
            continue
        if j < n:
            for i in range(m):
                rhs[i] -= Acol[i, j] * x[j]
        elif j < n + m:
            rhs[j - n] -= x[j]
        else:
            rhs[j - n - m] -= sigma[j - n - m] * x[j]
    drift = 0.0
    for i in range(m):
        v = 0.0
        for k in range(m):
            v += T[i, n + m + k] * sigma[k] * rhs[k]
        diff = abs(v - x[head[i]])
        if diff > drift:
            drift = diff
        x[head[i]] = v
    return drift


@njit(cache=True, nogil=True)
def _run_phase(T, x, L, U, status, head, cost, max_iter, bland_after, counters):
    """Primal simplex iterations for one phase; returns a status code.

    counters = [pivots, degenerate pivots, iterations in this call]
    """
    m, N = T.shape
    d = _reduced_costs(T, head, cost)
    use_bland = counters[1] >= bland_after
    it = 0
    while True:
        if it >= max_iter:
            return ITERATION_LIMIT
        # pricing
        q = -1
        best = 0.0
        qdir = 0.0
        for j in range(N):
            st = status[j]
            if st == BASIC or U[j] <= L[j]:
                continue
            dj = d[j]
            direction = 0.0
            if st == AT_LOWER:
                if dj < -OPT_TOL:
                    direction = 1.0
            elif st == AT_UPPER:
                if dj > OPT_TOL:
                    direction = -1.0
            else:
                if dj < -OPT_TOL:
                    direction = 1.0
                elif dj > OPT_TOL:
                    direction = -1.0
            if direction == 0.0:
                continue
            if use_bland:
                q = j
                qdir = direction
                break
            if abs(dj) > best:
                best = abs(dj)
                q = j
                qdir = direction
        if q < 0:
            return OPTIMAL

        # ratio test; ties go to the lowest variable index
        t_best = np.inf
        leave_row = -1
        leave_var = N + 1
        if np.isfinite(U[q]) and np.isfinite(L[q]):
            t_best = U[q] - L[q]
            leave_row = -2
            leave_var = q
        for i in range(m):
            alpha = -qdir * T[i, q]
            j = head[i]
            if alpha < -PIVOT_TOL and np.isfinite(L[j]):
                t = (x[j] - L[j]) / (-alpha)
            elif alpha > PIVOT_TOL and np.isfinite(U[j]):
                t = (U[j] - x[j]) / alpha
            else:
                continue
            if t < 0.0:
                t = 0.0
            if t < t_best - TIE_TOL:
                t_best = t
                leave_row = i
                leave_var = j
            elif t <= t_best + TIE_TOL and j < leave_var:
                if t < t_best:
                    t_best = t
                leave_row = i
                leave_var = j
        if leave_row == -1:
            return UNBOUNDED

        it += 1
        counters[2] += 1
        if t_best <= TIE_TOL:
            counters[1] += 1
            if counters[1] >= bland_after:
                use_bland = True

        # move
        if t_best > 0.0:
            x[q] += qdir * t_best
            for i in range(m):
                x[head[i]] -= qdir * t_best * T[i, q]
        if leave_row == -2:
            if qdir > 0:
                status[q] = AT_UPPER
                x[q] = U[q]
            else:
                status[q] = AT_LOWER
                x[q] = L[q]
            continue

        r = leave_row
        jl = head[r]
        alpha_r = -qdir * T[r, q]
        if alpha_r < 0.0:
            status[jl] = AT_LOWER
            x[jl] = L[jl]
        else:
            status[jl] = AT_UPPER
            x[jl] = U[jl]
        piv = T[r, q]
        for j in range(N):
            T[r, j] /= piv
        for i in range(m):
            if i == r:
                continue
            f = T[i, q]
            if f != 0.0:
                for j in range(N):
                    T[i, j] -= f * T[r, j]
                T[i, q] = 0.0
        dq = d[q]
        if dq != 0.0:
            for j in range(N):
                d[j] -= dq * T[r, j]
        d[q] = 0.0
        head[r] = q
        status[q] = BASIC
        counters[0] += 1


@njit(cache=True, nogil=True)
def _simplex(A, b, is_eq, c, lb, ub, hint, max_iter):
    m, n = A.shape
    N = n + 2 * m
    T = np.zeros((m, N))
    L = np.empty(N)
    U = np.empty(N)
    x = np.zeros(N)
    status = np.zeros(N, np.int64)
    head = np.empty(m, np.int64)
    sigma = np.ones(m)
    for j in range(n):
        L[j] = lb[j]
        U[j] = ub[j]
        if hint[j] == AT_UPPER and np.isfinite(ub[j]):
            x[j] = ub[j]
            status[j] = AT_UPPER
        elif np.isfinite(lb[j]):
            x[j] = lb[j]
            status[j] = AT_LOWER
        elif np.isfinite(ub[j]):
            x[j] = ub[j]
            status[j] = AT_UPPER
        else:
            x[j] = 0.0
            status[j] = FREE_ZERO
    for i in range(m):
        r = b[i]
        for j in range(n):
            r -= A[i, j] * x[j]
        sj = n + i
        aj = n + m + i
        L[sj] = 0.0
        U[sj] = 0.0 if is_eq[i] else np.inf
        L[aj] = 0.0
        if (not is_eq[i]) and r >= 0.0:
            head[i] = sj
            x[sj] = r
            status[sj] = BASIC
            U[aj] = 0.0
            status[aj] = AT_LOWER
            f = 1.0
        else:
            sigma[i] = 1.0 if r >= 0.0 else -1.0
            head[i] = aj
            x[aj] = abs(r)
            status[aj] = BASIC
            U[aj] = np.inf
            status[sj] = AT_LOWER
            f = sigma[i]
        for j in range(n):
            T[i, j] = A[i, j] * f
        T[i, sj] = f
        T[i, aj] = sigma[i] * f

    bland_after = 3 * (m + n)
    counters = np.zeros(3, np.int64)
    cost1 = np.zeros(N)
    for i in range(m):
        cost1[n + m + i] = 1.0
    code = _run_phase(T, x, L, U, status, head, cost1, max_iter, bland_after, counters)
    drift = _refresh_basics(T, x, head, status, A, sigma, b, n)
    phase1_pivots = counters[0]
    infeas = 0.0
    for i in range(m):
        infeas += x[n + m + i]
    bscale = 1.0
    for i in range(m):
        if abs(b[i]) > bscale:
            bscale = abs(b[i])
    if code == OPTIMAL and infeas > FEAS_TOL * bscale:
        code = INFEASIBLE
    if code == OPTIMAL:
        for i in range(m):
            aj = n + m + i
            U[aj] = 0.0
            if status[aj] != BASIC:
                x[aj] = 0.0
                status[aj] = AT_LOWER
        cost2 = np.zeros(N)
        for j in range(n):
            cost2[j] = c[j]
        counters[1] = 0
        code = _run_phase(T, x, L, U, status, head, cost2,
                          max_iter - counters[2], bland_after, counters)
        d2 = _refresh_basics(T, x, head, status, A, sigma, b, n)
        if d2 > drift:
            drift = d2
    # row duals of the normalized system: y = c_B' B^-1
    y = np.zeros(m)
    for k in range(m):
        v = 0.0
        for i in range(m):
            jb = head[i]
            if jb < n:
                v += c[jb] * T[i, n + m + k]
        y[k] = v * sigma[k]
    return code, x[:n].copy(), y, head, status[:n].copy(), counters[0], phase1_pivots, drift


@dataclass(eq=False)
class LinearProgram:
    """``min c'x`` subject to rows ``A x (sense) rhs`` and variable bounds."""

    c: np.ndarray
    A: np.ndarray
    senses: tuple
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        self.senses = tuple(self.senses)
        m = self.A.shape[0]
        if len(self.senses) != m or self.rhs.shape[0] != m:
            raise ValueError(f"{m} rows but {len(self.senses)} senses and {self.rhs.shape[0]} rhs")
        if self.lb.shape[0] != n or self.ub.shape[0] != n:
            raise ValueError("bound vectors must have one entry per column")
        bad = set(self.senses) - {"<", "=", ">"}
        if bad:
            raise ValueError(f"unknown row senses {sorted(bad)}")
        for name in ("c", "A", "rhs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("NaN bound")

    def derived(self, c=None, lb=None, ub=None) -> "LinearProgram":
        """Copy sharing the rows, with a new objective and/or bounds.

        Only the replaced vectors are checked; the rows were validated once.
        """
        out = object.__new__(LinearProgram)
        out.A, out.senses, out.rhs = self.A, self.senses, self.rhs
        out.c = self.c if c is None else np.asarray(c, dtype=float)
        out.lb = self.lb if lb is None else np.asarray(lb, dtype=float)
        out.ub = self.ub if ub is None else np.asarray(ub, dtype=float)
        n = self.c.shape[0]
        if out.c.shape != (n,) or out.lb.shape != (n,) or out.ub.shape != (n,):
            raise ValueError("replacement vectors must have one entry per column")
        if c is not None and not np.all(np.isfinite(out.c)):
            raise ValueError("non-finite entries in c")
        return out

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def normalized(self):
        """Rows as (A, b, is_eq) with every inequality in ``<=`` form."""
        flip = np.array([s == ">" for s in self.senses], dtype=bool)
        sign = np.where(flip, -1.0, 1.0)
        A = self.A * sign[:, None]
        b = self.rhs * sign
        is_eq = np.array([s == "=" for s in self.senses], dtype=np.bool_)
        return np.ascontiguousarray(A), b, is_eq, sign


@dataclass
class LpBasis:
    head: np.ndarray
    status: np.ndarray


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    basis: LpBasis
    pivots: int
    phase1_pivots: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def default_iteration_limit(m: int, n: int) -> int:
    return 50 * (m + n) + 1000


def solve_arrays(A, b, is_eq, c, lb, ub, hint=None, max_iter=None):
    """Low-level entry used by branch-and-bound; rows must already be normalized."""
    m, n = A.shape
    if hint is None:
        hint = np.zeros(n, np.int64)
    if max_iter is None:
        max_iter = default_iteration_limit(m, n)
    return _simplex(A, b, is_eq, c, lb, ub, hint, max_iter)


def solve_lp(lp: LinearProgram, warm: LpBasis | None = None, max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` to a certified status.

    ``warm`` may carry the structural bound statuses of an earlier basis; they
    decide at which bound each nonbasic column starts. Identical inputs always
    produce the identical pivot sequence.
    """
    A, b, is_eq, sign = lp.normalized()
    hint = None
    if warm is not None:
        hint = np.where(np.asarray(warm.status) == AT_UPPER, AT_UPPER, AT_LOWER).astype(np.int64)
    code, x, y, head, status, pivots, p1, drift = solve_arrays(
        A, b, is_eq, lp.c, lp.lb, lp.ub, hint, max_iter)
    scale = 1.0 + (float(np.max(np.abs(b))) if b.size else 0.0)
    if drift > 1e-6 * scale:
        raise SingularBasisError(f"basis drift {drift:.3e} exceeds tolerance; data may be ill-conditioned")
    duals = y * sign
    red = lp.c - lp.A.T @ duals if lp.m else lp.c.copy()
    objective = float(lp.c @ x) if code == OPTIMAL else np.nan
    return LpSolution(
        status=STATUS_NAMES[int(code)],
        x=x,
        duals=duals,
        reduced_costs=red,
        objective=objective,
        basis=LpBasis(head=head, status=status),
        pivots=int(pivots),
        phase1_pivots=int(p1),
    )


def certify(lp: LinearProgram, sol: LpSolution, tol: float = 1e-9) -> dict:
    """Residuals of an optimal solution: primal, dual sign, complementarity, duality gap."""
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    act = lp.A @ x if lp.m else np.zeros(0)
    prim = 0.0
    for i, s in enumerate(lp.senses):
        r = act[i] - lp.rhs[i]
        viol = max(r, 0.0) if s == "<" else (max(-r, 0.0) if s == ">" else abs(r))
        prim = max(prim, viol)
    prim = max(prim, float(np.max(np.maximum(lp.lb - x, 0.0), initial=0.0)),
               float(np.max(np.maximum(x - lp.ub, 0.0), initial=0.0)))
    # row dual signs: d obj / d rhs is <= 0 for '<' rows and >= 0 for '>' rows
    dual_sign = 0.0
    comp = 0.0
    for i, s in enumerate(lp.senses):
        if s == "<":
            dual_sign = max(dual_sign, y[i])
        elif s == ">":
            dual_sign = max(dual_sign, -y[i])
        if s != "=":
            comp = max(comp, abs(y[i] * (act[i] - lp.rhs[i])))
    # reduced costs must point into the box at the bound each column sits on
    bound_term = 0.0
    for j in range(lp.n):
        dj = d[j]
        at_lb = np.isfinite(lp.lb[j]) and abs(x[j] - lp.lb[j]) <= tol * (1 + abs(lp.lb[j]))
        at_ub = np.isfinite(lp.ub[j]) and abs(x[j] - lp.ub[j]) <= tol * (1 + abs(lp.ub[j]))
        if at_lb and at_ub:
            bound_term += dj * x[j]
            continue
        if at_lb:
            dual_sign = max(dual_sign, -dj)
            bound_term += dj * lp.lb[j]
        elif at_ub:
            dual_sign = max(dual_sign, dj)
            bound_term += dj * lp.ub[j]
        else:
            dual_sign = max(dual_sign, abs(dj))
            comp = max(comp, abs(dj))
    dual_obj = float(lp.rhs @ y) + bound_term
    return {
        "primal": prim,
        "dual": dual_sign,
        "complementarity": comp,
        "dual_objective": dual_obj,
        "gap": abs(sol.objective - dual_obj),
    }
