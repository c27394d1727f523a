"""Simplicial decomposition machinery for one scenario.

The inner approximation of conv(K_s) is the convex hull of a growing
``VertexSet``. Minimizing the augmented Lagrangian over that hull is a convex
QP in the convex-combination weights alone: with ``X`` the x-parts of the
vertices (one per row) and ``l_i = g'v_i + w'x_i``,

    f(a) = l'a + rho/2 ||X'a - z||^2 - w'z,   a in the unit simplex.

It is solved by accelerated projected gradient with adaptive restart, plus an
exact re-solve on the current support whenever that lowers the objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

DEDUP_TOL = 1e-9
QP_TOL = 1e-10

MILP_VERTEX = "milp-vertex"
INIT_FEASIBLE = "init-feasible"


@njit(cache=True, nogil=True)
def _project(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for k in range(n):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        out[i] = max(v[i] - theta, 0.0)
    return out


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{a >= 0, sum(a) = 1}``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    a = _project(v)
    # the projection is exact up to rounding; fold the residual into the largest weight
    a[np.argmax(a)] += 1.0 - a.sum()
    return a


@njit(cache=True, nogil=True)
def _qp_obj(Q, b, a):
    return 0.5 * a @ (Q @ a) + b @ a


@njit(cache=True, nogil=True)
def _fw_gap(g, a):
    return g @ a - np.min(g)


@njit(cache=True, nogil=True)
def _support_solve(Q, b, a):
    """Minimize over the affine hull of the current support; None if not useful."""
    n = a.shape[0]
    idx = np.empty(n, np.int64)
    k = 0
    for i in range(n):
        if a[i] > 1e-14:
            idx[k] = i
            k += 1
    K = np.zeros((k + 1, k + 1))
    r = np.zeros(k + 1)
    for ii in range(k):
        for jj in range(k):
            K[ii, jj] = Q[idx[ii], idx[jj]]
        K[ii, k] = 1.0
        K[k, ii] = 1.0
        r[ii] = -b[idx[ii]]
    r[k] = 1.0
    sol = np.linalg.lstsq(K, r, -1.0)[0]
    res = K @ sol - r
    out = np.zeros(n)
    ok = True
    for ii in range(k):
        if sol[ii] < -1e-13:
            ok = False
        out[idx[ii]] = max(sol[ii], 0.0)
    if np.max(np.abs(res)) > 1e-9 * (1.0 + np.max(np.abs(r))):
        ok = False
    s = out.sum()
    if ok and s > 0:
        out /= s
    return ok, out


@njit(cache=True, nogil=True)
def _active_set(Q, b, a0, tol, max_iter):
    """Primal active-set refinement for the simplex QP, tolerant of singular Q.

    On each support the equality-constrained minimizer is taken when the KKT
    system is consistent; otherwise a descent ray in the null space of
    ``[Q_S; 1']`` is followed to the boundary.
    """
    n = a0.shape[0]
    a = a0.copy()
    for _ in range(max_iter):
        g = Q @ a + b
        f = _qp_obj(Q, b, a)
        S = np.empty(n, np.int64)
        k = 0
        for i in range(n):
            if a[i] > 0.0:
                S[k] = i
                k += 1
        S = S[:k]
        QS = np.empty((k, k))
        for ii in range(k):
            for jj in range(k):
                QS[ii, jj] = Q[S[ii], S[jj]]
        gS = np.empty(k)
        for ii in range(k):
            gS[ii] = g[S[ii]]
        # direction d on S with sum(d) = 0 minimizing the model: [QS 1; 1' 0][d; l] = [-gS; 0]
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = QS
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        r = np.zeros(k + 1)
        r[:k] = -gS
        sol = np.linalg.lstsq(K, r, -1.0)[0]
        scale = 1.0 + np.max(np.abs(gS))
        if np.max(np.abs(K @ sol - r)) <= 1e-10 * scale:
            d = sol[:k]
            full = True
        else:
            M = np.zeros((k + 1, k))
            M[:k, :] = QS
            M[k, :] = 1.0
            _, sv, Vt = np.linalg.svd(M)
            thr = 1e-10 * (1.0 + np.max(np.abs(QS))) * k
            d = np.zeros(k)
            for j in range(k):
                sj = sv[j] if j < sv.shape[0] else 0.0
                if sj <= thr:
                    v = np.ascontiguousarray(Vt[j])
                    d -= (v @ gS) * v
            full = False
        if np.max(np.abs(d)) <= 1e-15 or (full and gS @ d >= -1e-16 * (1.0 + abs(f))):
            # stationary on S: add the most attractive outside index, or stop
            lam = gS @ np.full(k, 1.0 / k) if k > 0 else 0.0
            best = -1
            best_v = lam - tol * (1.0 + abs(f))
            for i in range(n):
                if a[i] == 0.0 and g[i] < best_v:
                    best_v = g[i]
                    best = i
            if best < 0:
                return a
            # move a small amount of mass to the new index through the support's direction
            d_full = -a.copy()
            d_full[best] += 1.0
            dQd = d_full @ (Q @ d_full)
            gd = g @ d_full
            step = 1.0 if dQd <= 0.0 else min(1.0, -gd / dQd)
            if step <= 0.0:
                return a
            a = a + step * d_full
            for i in range(n):
                if a[i] < 1e-16:
                    a[i] = 0.0
            a /= a.sum()
            continue
        # ratio test: largest step in [0, 1] (unbounded ray: no upper cap) keeping a_S >= 0
        step = 1.0 if full else np.inf
        block = -1
        for ii in range(k):
            if d[ii] < 0.0:
                t = -a[S[ii]] / d[ii]
                if t < step:
                    step = t
                    block = ii
        if not np.isfinite(step):
            return a
        for ii in range(k):
            a[S[ii]] += step * d[ii]
        if block >= 0:
            a[S[block]] = 0.0
        for i in range(n):
            if a[i] < 0.0:
                a[i] = 0.0
        a /= a.sum()
    return a


@njit(cache=True, nogil=True)
def _apg(Q, b, a0, lip, tol, iter_limit):
    """Accelerated projected gradient on the simplex; returns (a, iters, gap)."""
    a = a0.copy()
    g = Q @ a + b
    f = 0.5 * a @ (Q @ a) + b @ a
    gap = _fw_gap(g, a)
    if gap <= tol * (1.0 + abs(f)):
        return a, 0, gap
    ok, cand = _support_solve(Q, b, a)
    if ok:
        fc = _qp_obj(Q, b, cand)
        if fc <= f:
            a = cand
            f = fc
            g = Q @ a + b
            gap = _fw_gap(g, a)
            if gap <= tol * (1.0 + abs(f)):
                return a, 0, gap
    step = 1.0 / lip
    yk = a.copy()
    tk = 1.0
    it = 0
    while it < iter_limit:
        it += 1
        gy = Q @ yk + b
        a_new = _project(yk - step * gy)
        f_new = _qp_obj(Q, b, a_new)
        if f_new > f:
            # restart momentum from the last accepted iterate
            yk = a.copy()
            tk = 1.0
            gy = g
            a_new = _project(a - step * g)
            f_new = _qp_obj(Q, b, a_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        yk = a_new + ((tk - 1.0) / t_new) * (a_new - a)
        tk = t_new
        a = a_new
        f = f_new
        g = Q @ a + b
        gap = _fw_gap(g, a)
        if gap <= tol * (1.0 + abs(f)):
            break
        if it % 10 == 0:
            ok, cand = _support_solve(Q, b, a)
            if ok:
                fc = _qp_obj(Q, b, cand)
                if fc <= f:
                    a = cand
                    f = fc
                    g = Q @ a + b
                    yk = a.copy()
                    tk = 1.0
                    gap = _fw_gap(g, a)
                    if gap <= tol * (1.0 + abs(f)):
                        break
    return a, it, gap


class VertexSet:
    """Ordered, de-duplicated points of K_s; the set only grows."""

    def __init__(self, n_x: int, n_y: int, points=(), tags=()):
        self.n_x = n_x
        self.n_y = n_y
        self._pts = np.zeros((0, n_x + n_y))
        self.tags: list = []
        for pt, tag in zip(points, tags):
            self.add(pt, tag)

    def __len__(self):
        return self._pts.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._pts

    @property
    def X(self) -> np.ndarray:
        return self._pts[:, : self.n_x]

    @property
    def Y(self) -> np.ndarray:
        return self._pts[:, self.n_x:]

    def find(self, point) -> int:
        if len(self) == 0:
            return -1
        dist = np.max(np.abs(self._pts - point[None, :]), axis=1)
        i = int(np.argmin(dist))
        return i if dist[i] <= DEDUP_TOL else -1

    def add(self, point, tag: str = MILP_VERTEX) -> tuple[int, bool]:
        """Insert ``point`` unless a duplicate exists; returns (index, added)."""
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.shape[0] != self.n_x + self.n_y:
            raise ValueError("point has the wrong length")
        i = self.find(point)
        if i >= 0:
            return i, False
        self._pts = np.vstack([self._pts, point[None, :]])
        self.tags.append(tag)
        return len(self) - 1, True

    def copy(self) -> "VertexSet":
        out = VertexSet(self.n_x, self.n_y)
        out._pts = self._pts.copy()
        out.tags = list(self.tags)
        return out

    def issuperset(self, other: "VertexSet") -> bool:
        return all(self.find(p) >= 0 for p in other.points)


@dataclass
class MasterQpResult:
    weights: np.ndarray
    point: np.ndarray
    objective: float
    iterations: int
    gap: float
    converged: bool


def _qp_data(V: VertexSet, cost, z, w, rho):
    P = V.points
    X = V.X
    lin = P @ cost + X @ w
    Q = rho * (X @ X.T)
    b = lin - rho * (X @ z)
    const = 0.5 * rho * float(z @ z) - float(w @ z)
    return Q, b, const


def solve_master_qp(V: VertexSet, cost, z, w, rho: float, warm=None, tol: float = QP_TOL,
                    iter_limit: int | None = None) -> MasterQpResult:
    """Minimize ``L(x, y) = cost'(x, y) + w'(x - z) + rho/2 ||x - z||^2`` over conv(V).

    ``cost`` is the concatenated ``(c, q_s)``. Convergence means the
    simplex-restricted Frank-Wolfe gap is at most ``tol * (1 + |objective|)``.
    """
    k = len(V)
    if k == 0:
        raise ValueError("vertex set is empty")
    if not rho > 0:
        raise ValueError("rho must be positive")
    cost = np.asarray(cost, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if k == 1:
        a = np.ones(1)
        return _finish(V, a, cost, z, w, rho, 0, 0.0, True)
    Q, b, const = _qp_data(V, cost, z, w, rho)
    if iter_limit is None:
        iter_limit = 10 * k * k + 500
    if warm is None:
        a0 = np.full(k, 1.0 / k)
    else:
        a0 = np.zeros(k)
        warm = np.asarray(warm, dtype=float)
        a0[: warm.shape[0]] = warm
        a0 = project_to_simplex(a0)
    lip = float(np.max(np.linalg.eigvalsh(Q)))
    if lip <= 1e-14 * (1.0 + float(np.max(np.abs(b)))):
        # the x-parts coincide; the objective is linear in a
        a = np.zeros(k)
        a[int(np.argmin(b))] = 1.0
        g = Q @ a + b
        return _finish(V, a, cost, z, w, rho, 0, float(g @ a - g.min()), True)
    a, iters, gap = _apg(Q, b, a0, lip, tol, iter_limit)
    if gap > tol * (1.0 + abs(_qp_obj(Q, b, a) + const)):
        # slow tail on a flat face: finish with an exact active-set pass
        cand = _active_set(Q, b, a, tol, 20 * k + 50)
        g = Q @ cand + b
        if _qp_obj(Q, b, cand) <= _qp_obj(Q, b, a) + 1e-15 * (1.0 + abs(_qp_obj(Q, b, a))):
            a = cand
            gap = float(_fw_gap(g, cand))
    a[np.argmax(a)] += 1.0 - a.sum()
    f = 0.5 * a @ Q @ a + b @ a + const
    return _finish(V, a, cost, z, w, rho, int(iters), float(gap), gap <= tol * (1.0 + abs(f)))


def _finish(V, a, cost, z, w, rho, iters, gap, converged):
    point = a @ V.points
    x = point[: V.n_x]
    d = x - z
    obj = float(cost @ point + w @ d + 0.5 * rho * d @ d)
    return MasterQpResult(a, point, obj, iters, gap, converged)


@dataclass
class SdmOutcome:
    x: np.ndarray
    y: np.ndarray
    V: VertexSet
    weights: np.ndarray
    phi: float
    phi_exact: bool
    gaps: list
    iterations: int
    milp_solves: int
    qp_solves: int
    vertex_counts: list = field(default_factory=list)
    qp_objectives: list = field(default_factory=list)
    qp_converged: bool = True


class SdmError(RuntimeError):
    pass


def run_sdm(V: VertexSet, x_init, y_init, w, z, rho: float, t_max: int, tau: float, solver,
            cost, warm=None) -> SdmOutcome:
    """Simplicial decomposition for ``min L_s^rho(x, y, z, w)`` over conv(K_s).

    ``solver`` is the scenario MILP handle. ``V`` is extended in place. The
    t = 1 MILP value ``(c + w_hat)'x_hat + q'y_hat`` with
    ``w_hat = w + rho (x_init - z)`` is returned as ``phi``.
    """
    if len(V) == 0:
        raise ValueError("SDM needs a non-empty vertex set")
    if t_max < 1 or tau < 0:
        raise ValueError("need t_max >= 1 and tau >= 0")
    n_x = V.n_x
    cost = np.asarray(cost, dtype=float)
    c = cost[:n_x]
    q = cost[n_x:]
    x_prev = np.asarray(x_init, dtype=float)
    y_prev = np.asarray(y_init, dtype=float)
    phi = np.nan
    phi_exact = True
    gaps = []
    counts = [len(V)]
    objs = []
    milps = qps = 0
    weights = warm
    qp = None
    t = 0
    for t in range(1, t_max + 1):
        w_hat = w + rho * (x_prev - z)
        sol = solver.linear(w_hat)
        milps += 1
        if sol.x is None:
            raise SdmError(f"scenario MILP returned {sol.status} without a point")
        x_hat = sol.x[:n_x]
        y_hat = sol.x[n_x:]
        if t == 1:
            phi = sol.bound_value
            phi_exact = sol.status == "optimal"
        gap = -float((c + w_hat) @ (x_hat - x_prev) + q @ (y_hat - y_prev))
        gaps.append(gap)
        _, added = V.add(sol.x, MILP_VERTEX)
        if weights is not None and len(weights) < len(V):
            weights = np.concatenate([weights, np.zeros(len(V) - len(weights))])
        counts.append(len(V))
        qp = solve_master_qp(V, cost, z, w, rho, warm=weights)
        qps += 1
        objs.append(qp.objective)
        weights = qp.weights
        x_prev = qp.point[:n_x]
        y_prev = qp.point[n_x:]
        if gap <= tau:
            break
    return SdmOutcome(
        x=x_prev, y=y_prev, V=V, weights=weights, phi=phi, phi_exact=phi_exact, gaps=gaps,
        iterations=t, milp_solves=milps, qp_solves=qps, vertex_counts=counts,
        qp_objectives=objs, qp_converged=qp.converged)
