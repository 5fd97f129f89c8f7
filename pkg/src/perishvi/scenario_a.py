"""Single-product perishable inventory with a delivery lead time.

State layout: ``[O_{L-1}, ..., O_1, X_m, ..., X_1]``, youngest first.  The
pipeline slots hold orders still in transit, ``X_m`` is the freshest stock on
hand and ``X_1`` expires at the end of the day.  With ``L = 1`` there is no
pipeline and ``X_m`` is yesterday's order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .distributions import truncated_gamma_demand_pmf
from .errors import ParameterError
from .mdp import (
    CLOSING, DEMAND, EXPIRED, HOLDING, ISSUED, N_STAT_FIELDS, OPENING, RECEIVED,
    SATISFIED, InventoryMDP,
)

FIFO, LIFO = 0, 1
ISSUING = {"fifo": FIFO, "lifo": LIFO}


@dataclass(frozen=True)
class ScenarioAParams:
    m: int = 2
    L: int = 1
    issuing: str = "lifo"
    C_w: float = 7.0
    C_v: float = 3.0
    C_h: float = 1.0
    C_s: float = 5.0
    mu: float = 4.0
    cv: float = 0.5
    A_max: int = 10
    D_max: int = 100
    gamma: float = 0.99

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        if self.L < 1:
            raise ParameterError(f"lead time L must be >= 1, got {self.L}")
        if self.issuing not in ISSUING:
            raise ParameterError(f"issuing must be fifo or lifo, got {self.issuing!r}")
        if self.A_max < 1 or self.D_max < 1:
            raise ParameterError("A_max and D_max must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")


@njit(inline="always")
def _step(tables, s, a, w, nxt, stats):
    meta, costs = tables[2], tables[3]
    m, L, issuing = meta[0], meta[1], meta[2]
    n = m + L - 1
    d = w[0]
    order = a[0]
    # X_k sits at index n - k
    total = 0
    for k in range(1, m + 1):
        total += s[n - k]
    x1 = s[n - 1]
    if issuing == FIFO:
        waste = max(x1 - d, 0)
        cum = 0
        for j in range(1, m):
            cum += s[n - j]
            nxt[n - j] = max(s[n - j - 1] - max(d - cum, 0), 0)
    else:
        younger = total - x1  # sum of X_2..X_m
        waste = max(x1 - max(d - younger, 0), 0)
        # sum_{k=j+2}^{m} X_k for j = 1..m-1, built from the young end
        for j in range(1, m):
            fresher = 0
            for k in range(j + 2, m + 1):
                fresher += s[n - k]
            nxt[n - j] = max(s[n - j - 1] - max(d - fresher, 0), 0)
    if L > 1:
        arriving = s[L - 2]
        for i in range(L - 2, 0, -1):
            nxt[i] = s[i - 1]
        nxt[0] = order
    else:
        arriving = order
    nxt[L - 1] = arriving

    left = max(total - d - waste, 0)
    short = max(d - total, 0)
    reward = -costs[0] * order - costs[1] * left - costs[2] * short - costs[3] * waste

    sold = min(d, total)
    closing = 0
    for k in range(L - 1, n):
        closing += nxt[k]
    stats[DEMAND] = d
    stats[SATISFIED] = sold
    stats[ISSUED] = sold
    stats[EXPIRED] = waste
    stats[RECEIVED] = arriving
    stats[OPENING] = total
    stats[HOLDING] = left
    stats[CLOSING] = closing
    return reward


@njit(inline="always")
def _prob(tables, s, a, w_index, w):
    return tables[0][w_index]


@njit(cache=True)
def _sim_step(tables, s, a, u, nxt, stats):
    cdf = tables[1]
    d = min(np.searchsorted(cdf, u[0], side="right"), cdf.shape[0] - 1)
    w = np.empty(1, np.int64)
    w[0] = d
    return _step(tables, s, a, w, nxt, stats)


@njit(cache=True)
def base_stock_kernel(params, table, radices, tables, s, out):
    """Order up to ``params[0]`` counting stock on hand and in transit."""
    level = np.int64(params[0])
    position = 0
    for i in range(s.shape[0]):
        position += s[i]
    out[0] = max(level - position, 0)


class ScenarioA(InventoryMDP):
    name = "scenario-a"
    convergence_test = "value-span"
    separable = True
    n_products = 1
    n_stats = N_STAT_FIELDS
    uniforms_per_step = 1
    checkpoint_every = 100

    def __init__(self, params: ScenarioAParams | None = None, **overrides):
        params = params or ScenarioAParams(**overrides)
        self.params = params
        self.gamma = params.gamma
        n = params.m + params.L - 1
        self.state_radices = np.full(n, params.A_max + 1, dtype=np.int64)
        self.action_radices = np.array([params.A_max + 1], dtype=np.int64)
        self.sim_action_max = np.array([params.A_max], dtype=np.int64)
        self.demand = truncated_gamma_demand_pmf(params.mu, params.cv, params.D_max)
        meta = np.array([params.m, params.L, ISSUING[params.issuing]], dtype=np.int64)
        costs = np.array([params.C_v, params.C_h, params.C_s, params.C_w])
        self.tables = (self.demand.probs.copy(), self.demand.cdf(), meta, costs)
        self.step_kernel = _step
        self.prob_kernel = _prob
        self.sim_kernel = _sim_step

    @property
    def n_outcomes(self) -> int:
        return self.params.D_max + 1

    def outcomes(self) -> np.ndarray:
        return np.arange(self.params.D_max + 1, dtype=np.int64).reshape(-1, 1)

    def start_state(self) -> np.ndarray:
        return np.zeros(self.state_radices.size, dtype=np.int64)

    def heuristic_kernel(self):
        return base_stock_kernel

    def heuristic_bounds(self):
        return np.array([[0, self.params.A_max]], dtype=np.int64)

    def heuristic_names(self):
        return ["S"]

    def sample_step(self, state, action, u):
        """Advance one day with demand drawn by inverse CDF from ``u[0]``."""
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        nxt = np.zeros_like(s)
        stats = np.zeros(self.n_stats)
        r = _sim_step(self.tables, s, a, np.asarray(u, dtype=np.float64), nxt, stats)
        return nxt, float(r), stats


def base_stock_action(level: int, state) -> int:
    return max(int(level) - int(np.sum(state)), 0)
