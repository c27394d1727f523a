"""Seeded desk-scale instance factory.

Instances have a binary first stage (facilities ``x`` under one knapsack
budget) and a mixed-integer recourse: binary rentals, continuous production
that is only available at open facilities, and one costly shortfall column per
cover row. The shortfall columns give relatively complete recourse for every
binary ``x`` by construction, and every column has finite bounds, so every
K_s is bounded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import BINARY, CONTINUOUS, FirstStageData, ScenarioData, TwoStageProblem

MAX_SCENARIOS = 4
MAX_FIRST = 6
MAX_SECOND = 8


@dataclass
class InstanceShape:
    """Unset fields are drawn from the seed."""

    n_scenarios: int | None = None
    n_x: int | None = None
    n_rent: int | None = None
    n_prod: int | None = None
    n_cover: int | None = None

    def resolve(self, rng: np.random.Generator) -> "InstanceShape":
        out = InstanceShape(
            n_scenarios=self.n_scenarios if self.n_scenarios is not None else int(rng.integers(2, 5)),
            n_x=self.n_x if self.n_x is not None else int(rng.integers(2, 5)),
            n_rent=self.n_rent if self.n_rent is not None else int(rng.integers(1, 3)),
            n_prod=self.n_prod if self.n_prod is not None else int(rng.integers(1, 3)),
            n_cover=self.n_cover if self.n_cover is not None else int(rng.integers(1, 3)),
        )
        if not 1 <= out.n_scenarios <= MAX_SCENARIOS:
            raise ValueError(f"n_scenarios must be in [1, {MAX_SCENARIOS}]")
        if not 1 <= out.n_x <= MAX_FIRST:
            raise ValueError(f"n_x must be in [1, {MAX_FIRST}]")
        if min(out.n_rent, out.n_prod) < 0 or out.n_cover < 1:
            raise ValueError("need n_rent, n_prod >= 0 and n_cover >= 1")
        if out.n_rent + out.n_prod + out.n_cover > MAX_SECOND:
            raise ValueError(f"at most {MAX_SECOND} second-stage variables")
        return out


def generate_problem(seed: int, shape: InstanceShape | None = None) -> TwoStageProblem:
    rng = np.random.default_rng(seed)
    sh = (shape or InstanceShape()).resolve(rng)
    n, S = sh.n_x, sh.n_scenarios
    nr, npd, nc = sh.n_rent, sh.n_prod, sh.n_cover
    ny = nr + npd + nc

    c = rng.integers(3, 11, n).astype(float)
    weight = rng.integers(1, 5, n).astype(float)
    budget = float(np.floor(0.6 * weight.sum()))
    first = FirstStageData(c=c, A=weight[None, :], senses=["<"], rhs=[budget],
                           lb=np.zeros(n), ub=np.ones(n), kinds=[BINARY] * n)

    # shared structure
    w_rent = rng.integers(2, 7, (nc, nr)).astype(float)
    w_prod = rng.integers(0, 3, (nc, npd)).astype(float)
    cap = rng.integers(2, 5, npd).astype(float)
    site = rng.integers(0, n, npd)
    pen = rng.integers(15, 26, nc).astype(float)
    demand = rng.integers(3, 13, (S, nc)).astype(float)
    short_ub = demand.max(axis=0)
    # coverage by open sites differs by scenario, so scenarios disagree on x
    t_cov = rng.integers(0, 5, (S, nc, n)).astype(float)

    raw = rng.integers(1, 5, S).astype(float)
    probs = raw / raw.sum()
    probs[-1] = 1.0 - probs[:-1].sum()

    scenarios = []
    for s in range(S):
        q = np.concatenate([rng.integers(1, 7, nr), rng.integers(1, 5, npd), pen]).astype(float)
        W = np.zeros((nc + npd + 2 * nr, ny))
        T = np.zeros((nc + npd + 2 * nr, n))
        h = np.zeros(nc + npd + 2 * nr)
        senses = []
        for i in range(nc):
            W[i, :nr] = w_rent[i]
            W[i, nr:nr + npd] = w_prod[i]
            W[i, nr + npd + i] = 1.0
            T[i] = t_cov[s, i]
            h[i] = demand[s, i]
            senses.append(">")
        for j in range(npd):
            W[nc + j, nr + j] = 1.0
            T[nc + j, site[j]] = -cap[j]
            senses.append("<")
        # a rental needs two open sites, chosen per scenario
        pair = rng.integers(0, n, (nr, 2))
        for r in range(nr):
            for k in range(2):
                row = nc + npd + 2 * r + k
                W[row, r] = 1.0
                T[row, pair[r, k]] = -1.0
                senses.append("<")
        y_lb = np.zeros(ny)
        y_ub = np.concatenate([np.ones(nr), cap, short_ub])
        kinds = [BINARY] * nr + [CONTINUOUS] * (npd + nc)
        scenarios.append(ScenarioData(p=probs[s], q=q, W=W, T=T, h=h, y_lb=y_lb, y_ub=y_ub,
                                      y_kinds=kinds, senses=senses))
    meta = {"generator": f"seed={seed} scenarios={S} n_x={n} rent={nr} prod={npd} cover={nc}"}
    return TwoStageProblem(first, scenarios, name=f"gen-{seed}", meta=meta)


def generate_instance(seed: int, shape: InstanceShape | None = None):
    """Return ``(problem, native document text)``; deterministic in ``seed``."""
    from .native import write_native

    problem = generate_problem(seed, shape)
    return problem, write_native(problem)
