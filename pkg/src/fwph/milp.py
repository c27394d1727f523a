"""Branch-and-bound over the bounded simplex.

Node selection is best-bound (ties by creation order) with a depth-first plunge
until the first incumbent is found. Branching picks the most fractional
integer variable, lowest index on ties. The reported dual bound is certified:
it is the minimum over the incumbent, every open node and every node pruned by
bound, so callers may use it as a valid under-estimate when limits stop the
search early.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import lp as _lp
from .lp import LinearProgram

INT_TOL = 1e-6
GAP_TOL = 1e-9


@dataclass(eq=False)
class MilpModel:
    lp: LinearProgram
    integrality: np.ndarray
    n_first: int = 0
    offset: float = 0.0
    name: str = ""
    names: tuple | None = None

    def __post_init__(self):
        self.integrality = np.asarray(self.integrality, dtype=bool)
        if self.integrality.shape != (self.lp.n,):
            raise ValueError("integrality flags must match the number of columns")
        ints = np.flatnonzero(self.integrality)
        if not (np.all(np.isfinite(self.lp.lb[ints])) and np.all(np.isfinite(self.lp.ub[ints]))):
            raise ValueError("integer variables need finite bounds")
        self._norm = None

    def normalized(self):
        if self._norm is None:
            self._norm = self.lp.normalized()
        return self._norm

    def _derive(self, lp, offset) -> "MilpModel":
        out = object.__new__(MilpModel)
        out.lp, out.integrality, out.n_first = lp, self.integrality, self.n_first
        out.offset, out.name, out.names = offset, self.name, self.names
        out._norm = self.normalized()
        return out

    def with_objective(self, c, offset: float = 0.0) -> "MilpModel":
        return self._derive(self.lp.derived(c=c), offset)

    def with_bounds(self, lb, ub) -> "MilpModel":
        ints = np.flatnonzero(self.integrality)
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        if not (np.all(np.isfinite(lb[ints])) and np.all(np.isfinite(ub[ints]))):
            raise ValueError("integer variables need finite bounds")
        return self._derive(self.lp.derived(lb=lb, ub=ub), self.offset)

    def objective_value(self, x) -> float:
        return float(self.lp.c @ x) + self.offset

    def var_name(self, j: int) -> str:
        if self.names is not None:
            return self.names[j]
        return f"x[{j}]" if j < self.n_first else f"v[{j}]"


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int
    bound_history: list = field(default_factory=list)
    limit: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def bound_value(self) -> float:
        """Objective when proven optimal, otherwise the certified dual bound."""
        return self.objective if self.status == "optimal" else self.bound


class MilpLimitError(RuntimeError):
    pass


def _most_fractional(x, ints):
    best = -1
    best_score = INT_TOL
    for j in ints:
        f = x[j] - math.floor(x[j])
        score = min(f, 1.0 - f)
        if score > best_score:
            best_score = score
            best = j
    return best


def solve_milp(model: MilpModel, node_limit: int | None = None, time_limit: float | None = None,
               gap_tol: float = GAP_TOL, compiled: bool | None = None) -> MilpSolution:
    """Solve ``model`` by branch-and-bound.

    Returns status ``optimal``, ``infeasible``, ``unbounded`` or ``bound-only``
    (a node or time limit stopped the search; ``bound`` is still valid).
    Without a time limit the node loop runs compiled; both loops visit the
    same nodes in the same order.
    """
    if compiled is None:
        compiled = time_limit is None
    if compiled and time_limit is not None:
        raise ValueError("the compiled node loop cannot enforce a time limit")
    A, b, is_eq, _ = model.normalized()
    c = model.lp.c
    lb0 = model.lp.lb.copy()
    ub0 = model.lp.ub.copy()
    ints = np.flatnonzero(model.integrality)
    lb0[ints] = np.ceil(lb0[ints] - INT_TOL)
    ub0[ints] = np.floor(ub0[ints] + INT_TOL)
    if np.any(lb0 > ub0):
        return MilpSolution("infeasible", None, math.inf, math.inf, 0)
    if compiled:
        return _solve_compiled(model, A, b, is_eq, c, lb0, ub0, ints, node_limit, gap_tol)
    start = time.perf_counter()
    n = c.shape[0]

    inc_x = None
    inc_obj = math.inf
    pruned_min = math.inf
    heap = []
    seq = 0
    history = []
    nodes = 0
    plunge = None
    root = (-math.inf, seq, lb0, ub0, np.zeros(n, np.int64))
    heapq.heappush(heap, root)

    def threshold():
        return inc_obj - gap_tol * (1.0 + abs(inc_obj)) if inc_x is not None else math.inf

    def open_min():
        m = heap[0][0] if heap else math.inf
        if plunge is not None:
            m = min(m, plunge[0])
        return m

    limit = ""
    while heap or plunge is not None:
        if plunge is not None:
            node, plunge = plunge, None
        else:
            node = heapq.heappop(heap)
        bound, _, lb, ub, hint = node
        if bound >= threshold():
            pruned_min = min(pruned_min, bound)
            continue
        if (node_limit is not None and nodes >= node_limit) or (
                time_limit is not None and time.perf_counter() - start > time_limit):
            heapq.heappush(heap, node)
            limit = "nodes" if node_limit is not None and nodes >= node_limit else "time"
            break
        nodes += 1
        code, x, _, _, status, _, _, _ = _lp.solve_arrays(A, b, is_eq, c, lb, ub, hint)
        if code == _lp.INFEASIBLE:
            history.append(min(open_min(), pruned_min, inc_obj))
            continue
        if code == _lp.UNBOUNDED:
            return MilpSolution("unbounded", None, -math.inf, -math.inf, nodes)
        if code == _lp.ITERATION_LIMIT:
            raise MilpLimitError(f"{model.name}: LP iteration limit at node {nodes}")
        obj = float(c @ x)
        if obj >= threshold():
            pruned_min = min(pruned_min, obj)
            history.append(min(open_min(), pruned_min, inc_obj))
            continue
        j = _most_fractional(x, ints)
        if j < 0:
            x = _snap(model, x, ints, A, b, is_eq, c, lb, ub)
            if x is not None:
                val = float(c @ x)
                if val < inc_obj:
                    inc_obj, inc_x = val, x
                    keep = []
                    thr = threshold()
                    for item in heap:
                        if item[0] >= thr:
                            pruned_min = min(pruned_min, item[0])
                        else:
                            keep.append(item)
                    heap = keep
                    heapq.heapify(heap)
            history.append(min(open_min(), pruned_min, inc_obj))
            continue
        fl = math.floor(x[j])
        down_ub = ub.copy()
        down_ub[j] = fl
        up_lb = lb.copy()
        up_lb[j] = fl + 1.0
        seq += 1
        down = (obj, seq, lb, down_ub, status)
        seq += 1
        up = (obj, seq, up_lb, ub, status)
        if inc_x is None:
            first, second = (up, down) if x[j] - fl >= 0.5 else (down, up)
            plunge = first
            heapq.heappush(heap, second)
        else:
            heapq.heappush(heap, down)
            heapq.heappush(heap, up)
        history.append(min(open_min(), pruned_min, inc_obj))

    bound = min(open_min(), pruned_min, inc_obj)
    off = model.offset
    if limit:
        return MilpSolution("bound-only", inc_x, inc_obj + off, bound + off, nodes,
                            [h + off for h in history], limit)
    if inc_x is None:
        return MilpSolution("infeasible", None, math.inf, math.inf, nodes, [], "")
    return MilpSolution("optimal", inc_x, inc_obj + off, bound + off, nodes, [h + off for h in history])


def _solve_compiled(model, A, b, is_eq, c, lb0, ub0, ints, node_limit, gap_tol):
    m, n = A.shape
    code, x, inc, bound, nodes, hist, hit = _bnb(
        A, b, is_eq, c, lb0, ub0, ints.astype(np.int64), -1 if node_limit is None else int(node_limit),
        gap_tol, _lp.default_iteration_limit(m, n))
    if code == 2:
        return MilpSolution("unbounded", None, -math.inf, -math.inf, int(nodes))
    if code == 3:
        raise MilpLimitError(f"{model.name}: LP iteration limit at node {nodes}")
    off = model.offset
    history = [float(h) + off for h in hist]
    has_inc = math.isfinite(inc)
    if hit:
        return MilpSolution("bound-only", x if has_inc else None, inc + off, bound + off, int(nodes),
                            history, "nodes")
    if not has_inc:
        return MilpSolution("infeasible", None, math.inf, math.inf, int(nodes), [], "")
    return MilpSolution("optimal", x, inc + off, bound + off, int(nodes), history)


def _snap(model, x, ints, A, b, is_eq, c, lb, ub):
    """Round integer columns; re-solve the continuous part if rounding moved them."""
    x = x.copy()
    r = np.round(x[ints])
    moved = np.max(np.abs(r - x[ints]), initial=0.0)
    x[ints] = r
    if moved <= 1e-9 or len(ints) == x.shape[0]:
        return x
    lbf = lb.copy()
    ubf = ub.copy()
    lbf[ints] = r
    ubf[ints] = r
    code, xf, *_ = _lp.solve_arrays(A, b, is_eq, c, lbf, ubf)
    if code != _lp.OPTIMAL:
        return x
    xf[ints] = r
    return xf


def prox_linearize(model: MilpModel, z, w, rho: float) -> MilpModel:
    """Exact MILP form of ``min c'x + q'y + w'(x - z) + rho/2 ||x - z||^2``.

    Valid only when every first-stage column is binary, where ``x_i^2 = x_i``
    turns the proximal term into ``sum_i rho/2 (1 - 2 z_i) x_i`` plus the
    constant ``rho/2 ||z||^2``. The returned model's ``offset`` carries all
    constants so objective values equal the augmented Lagrangian exactly.
    """
    n = model.n_first
    lp = model.lp
    for i in range(n):
        if not (model.integrality[i] and lp.lb[i] >= 0.0 and lp.ub[i] <= 1.0):
            raise ValueError(f"first-stage variable {model.var_name(i)} is not binary; "
                             "the proximal term cannot be linearized exactly")
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    c = lp.c.copy()
    c[:n] += w + 0.5 * rho * (1.0 - 2.0 * z)
    const = 0.5 * rho * float(z @ z) - float(w @ z)
    return model.with_objective(c, model.offset + const)


class ScenarioSolver:
    """Reusable MILP handle for one scenario model ``min c'x + q'y`` over K_s.

    Keeps counters so callers can audit how many mixed-integer solves an
    algorithm spent. One handle must not be shared by concurrent callers.
    """

    def __init__(self, model: MilpModel, node_limit=None, time_limit=None):
        self.model = model
        self.node_limit = node_limit
        self.time_limit = time_limit
        self.milp_solves = 0
        self.miqp_solves = 0
        self.recourse_solves = 0

    def _solve(self, model):
        return solve_milp(model, self.node_limit, self.time_limit)

    def linear(self, w) -> MilpSolution:
        """``min (c + w)'x + q'y``."""
        self.milp_solves += 1
        c = self.model.lp.c.copy()
        c[: self.model.n_first] += np.asarray(w, dtype=float)
        return self._solve(self.model.with_objective(c))

    def linear_cost(self, cost) -> MilpSolution:
        """Minimize an arbitrary linear objective over the scenario's (x, y)."""
        self.milp_solves += 1
        return self._solve(self.model.with_objective(np.asarray(cost, dtype=float)))

    def prox(self, z, w, rho) -> MilpSolution:
        self.miqp_solves += 1
        return self._solve(prox_linearize(self.model, z, w, rho))

    def recourse(self, x_fixed) -> MilpSolution:
        """``min q'y`` with the first stage fixed at ``x_fixed``."""
        self.recourse_solves += 1
        n = self.model.n_first
        lb = self.model.lp.lb.copy()
        ub = self.model.lp.ub.copy()
        lb[:n] = x_fixed
        ub[:n] = x_fixed
        c = self.model.lp.c.copy()
        c[:n] = 0.0
        fixed = self.model.with_bounds(lb, ub).with_objective(c)
        return self._solve(fixed)

    @property
    def mixed_integer_solves(self) -> int:
        return self.milp_solves + self.miqp_solves


@njit(cache=True, nogil=True)
def _most_fractional_nb(x, ints):
    best = -1
    best_score = INT_TOL
    for j in ints:
        f = x[j] - math.floor(x[j])
        score = min(f, 1.0 - f)
        if score > best_score:
            best_score = score
            best = j
    return best


@njit(cache=True, nogil=True)
def _snap_nb(x, ints, A, b, is_eq, c, lb, ub, max_iter):
    x = x.copy()
    moved = 0.0
    for j in ints:
        r = np.round(x[j])
        moved = max(moved, abs(r - x[j]))
        x[j] = r
    if moved <= 1e-9 or ints.shape[0] == x.shape[0]:
        return x
    lbf = lb.copy()
    ubf = ub.copy()
    for j in ints:
        lbf[j] = x[j]
        ubf[j] = x[j]
    code, xf, _, _, _, _, _, _ = _lp._simplex(A, b, is_eq, c, lbf, ubf, np.zeros(c.shape[0], np.int64), max_iter)
    if code != _lp.OPTIMAL:
        return x
    for j in ints:
        xf[j] = x[j]
    return xf


@njit(cache=True, nogil=True)
def _bnb(A, b, is_eq, c, lb0, ub0, ints, node_limit, gap_tol, max_iter):
    """Compiled twin of the node loop in ``solve_milp`` (no time limit).

    Returns ``(code, x, incumbent, bound, nodes, history, hit_limit)`` where
    code is 0 done, 2 unbounded, 3 LP iteration limit.
    """
    n = c.shape[0]
    cap = 64
    NL = np.empty((cap, n))
    NU = np.empty((cap, n))
    NH = np.zeros((cap, n), np.int64)
    NB = np.empty(cap)
    NL[0] = lb0
    NU[0] = ub0
    NB[0] = -np.inf
    count = 1
    heap = [(-np.inf, 0)]
    plunge = -1
    inc_x = np.zeros(n)
    has_inc = False
    inc_obj = np.inf
    pruned_min = np.inf
    hist = np.empty(64)
    nh = 0
    nodes = 0
    hit = False
    while len(heap) > 0 or plunge >= 0:
        if plunge >= 0:
            nid = plunge
            plunge = -1
        else:
            nid = heapq.heappop(heap)[1]
        bound = NB[nid]
        thr = inc_obj - gap_tol * (1.0 + abs(inc_obj)) if has_inc else np.inf
        if bound >= thr:
            pruned_min = min(pruned_min, bound)
            continue
        if node_limit >= 0 and nodes >= node_limit:
            heapq.heappush(heap, (bound, nid))
            hit = True
            break
        nodes += 1
        lb = NL[nid]
        ub = NU[nid]
        code, x, _, _, status, _, _, _ = _lp._simplex(A, b, is_eq, c, lb, ub, NH[nid], max_iter)
        if code == _lp.UNBOUNDED:
            return 2, inc_x, -np.inf, -np.inf, nodes, hist[:nh], False
        if code == _lp.ITERATION_LIMIT:
            return 3, inc_x, inc_obj, -np.inf, nodes, hist[:nh], False
        record = True
        if code == _lp.OPTIMAL:
            obj = np.dot(c, x)
            j = -1
            if obj >= thr:
                pruned_min = min(pruned_min, obj)
            else:
                j = _most_fractional_nb(x, ints)
                if j < 0:
                    xs = _snap_nb(x, ints, A, b, is_eq, c, lb, ub, max_iter)
                    val = np.dot(c, xs)
                    if val < inc_obj:
                        inc_obj = val
                        inc_x = xs
                        has_inc = True
                        thr = inc_obj - gap_tol * (1.0 + abs(inc_obj))
                        keep = [(-np.inf, 0)]
                        keep.pop()
                        for item in heap:
                            if item[0] >= thr:
                                pruned_min = min(pruned_min, item[0])
                            else:
                                keep.append(item)
                        heap = keep
                        heapq.heapify(heap)
            if j >= 0:
                if count + 2 > cap:
                    cap *= 2
                    NL2 = np.empty((cap, n))
                    NU2 = np.empty((cap, n))
                    NH2 = np.zeros((cap, n), np.int64)
                    NB2 = np.empty(cap)
                    NL2[:count] = NL[:count]
                    NU2[:count] = NU[:count]
                    NH2[:count] = NH[:count]
                    NB2[:count] = NB[:count]
                    NL, NU, NH, NB = NL2, NU2, NH2, NB2
                fl = math.floor(x[j])
                down = count
                up = count + 1
                count += 2
                NL[down] = lb
                NU[down] = ub
                NU[down, j] = fl
                NL[up] = lb
                NU[up] = ub
                NL[up, j] = fl + 1.0
                NH[down] = status[:n]
                NH[up] = status[:n]
                NB[down] = obj
                NB[up] = obj
                if not has_inc:
                    if x[j] - fl >= 0.5:
                        plunge = up
                        heapq.heappush(heap, (obj, down))
                    else:
                        plunge = down
                        heapq.heappush(heap, (obj, up))
                else:
                    heapq.heappush(heap, (obj, down))
                    heapq.heappush(heap, (obj, up))
        if record:
            om = heap[0][0] if len(heap) > 0 else np.inf
            if plunge >= 0:
                om = min(om, NB[plunge])
            if nh == hist.shape[0]:
                h2 = np.empty(2 * nh)
                h2[:nh] = hist
                hist = h2
            hist[nh] = min(om, pruned_min, inc_obj)
            nh += 1
    om = heap[0][0] if len(heap) > 0 else np.inf
    if plunge >= 0:
        om = min(om, NB[plunge])
    return 0, inc_x, inc_obj if has_inc else np.inf, min(om, pruned_min, inc_obj), nodes, hist[:nh], hit
