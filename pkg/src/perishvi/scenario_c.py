"""Platelet-style inventory with weekday demand and uncertain shelf life on arrival.

Orders arrive the same day, before demand.  The remaining useful life of each
received unit is random: the counts per remaining life follow a multinomial
whose category log-odds are affine in the order quantity.  Stock per
remaining life is capped at ``A_max``; excess units are refused at delivery.

State layout: ``[weekday, X_{m-1}, ..., X_1]`` where ``X_1`` expires tonight.
Outcome layout: ``[demand, Y_m, ..., Y_1]`` with ``Y_m`` the freshest receipts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import special

from .distributions import compositions, n_compositions, truncated_negbinom_pmf
from .errors import CapacityError, ContractViolation, ParameterError
from .mdp import (
    CLOSING, DEMAND, EXPIRED, HOLDING, ISSUED, N_STAT_FIELDS, OPENING,
    RECEIVED, REJECTED, SATISFIED, InventoryMDP, physical_memory_bytes,
)
from .scenario_b import binomial_inverse

WEEKDAYS = 7
# (target successes n, mean delta) for Monday..Sunday
WEEKDAY_DEMAND = (
    (3.5, 5.7), (11.0, 6.9), (7.2, 6.5), (11.1, 6.2), (5.9, 5.8), (5.5, 3.3), (2.2, 3.4),
)
# Shelf-life log-odds coefficients for k = 2..m, keyed by (m, experiment).
SHELF_LIFE = {
    (3, 1): ((1.0, 0.5), (0.0, 0.0)),
    (3, 2): ((1.0, 0.5), (0.40, 0.80)),
    (5, 1): ((1.6, 2.6, 2.8, 1.6), (0.0, 0.0, 0.0, 0.0)),
    (5, 2): ((1.9, 3.1, 3.1, 2.5), (-0.03, -0.06, -0.03, -0.09)),
    (8, 1): ((0.8, 1.4, 1.9, 2.3, 1.7, 1.2, 0.8), (0.0,) * 7),
    (8, 2): (
        (0.8, 1.4, 1.9, 2.3, 1.7, 1.2, 0.8),
        (-0.03, -0.04, -0.05, -0.06, -0.07, -0.08, -0.09),
    ),
}


def shelf_life_coefficients(m: int, experiment: int):
    try:
        return SHELF_LIFE[(m, experiment)]
    except KeyError:
        raise ParameterError(f"no shelf-life coefficients for m={m}, experiment {experiment}")


@dataclass(frozen=True)
class ScenarioCParams:
    m: int = 3
    c0: tuple = (1.0, 0.5)
    c1: tuple = (0.0, 0.0)
    D_max: int = 20
    A_max: int = 20
    C_f: float = 10.0
    C_h: float = 1.0
    C_s: float = 20.0
    C_w: float = 5.0
    gamma: float = 0.95
    weekday_demand: tuple = field(default=WEEKDAY_DEMAND)

    def __post_init__(self):
        if self.m < 2:
            raise ParameterError(f"m must be >= 2, got {self.m}")
        if len(self.c0) != self.m - 1 or len(self.c1) != self.m - 1:
            raise ParameterError(
                f"need {self.m - 1} coefficients per row for m={self.m}, "
                f"got {len(self.c0)} and {len(self.c1)}"
            )
        if len(self.weekday_demand) != WEEKDAYS:
            raise ParameterError("weekday_demand needs seven (n, delta) pairs")
        if self.A_max < 1 or self.D_max < 1:
            raise ParameterError("A_max and D_max must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")

    @classmethod
    def for_experiment(cls, m: int, experiment: int, **overrides):
        c0, c1 = shelf_life_coefficients(m, experiment)
        return cls(m=m, c0=tuple(c0), c1=tuple(c1), **overrides)


def receipt_category_probs(a: int, c0, c1) -> np.ndarray:
    """Probabilities of remaining life k = 1..m on arrival (index k - 1)."""
    logits = np.concatenate([[0.0], np.asarray(c0, float) + np.asarray(c1, float) * a])
    # softmax with the k = 1 category as reference
    w = np.exp(logits - logits.max())
    return w / w.sum()


def weekday_demand_pmf(params: ScenarioCParams, weekday: int):
    if not 0 <= weekday < WEEKDAYS:
        raise ParameterError(f"weekday must be 0..6, got {weekday}")
    n, delta = params.weekday_demand[weekday]
    return truncated_negbinom_pmf(n, delta, params.D_max)


@njit(inline="always")
def _step(tables, s, a, w, nxt, stats):
    meta, costs = tables[2], tables[3]
    m, cap = meta[0], meta[1]
    d = w[0]
    # Z_k = min(X_k + Y_k, cap) for k < m, Z_m = Y_m; X_k at s[m-k], Y_k at w[1+m-k]
    total = 0
    opening = 0
    offered = 0
    for k in range(1, m + 1):
        y = w[1 + m - k]
        offered += y
        if k < m:
            x = s[m - k]
            opening += x
            total += min(x + y, cap)
        else:
            total += min(y, cap)
    z1 = min(s[m - 1] + w[m], cap)
    cum = 0
    closing = 0
    for j in range(1, m):
        if j < m - 1:
            zj = min(s[m - j] + w[1 + m - j], cap)
            znext = min(s[m - j - 1] + w[m - j], cap)
        else:
            zj = min(s[1] + w[2], cap)
            znext = min(w[1], cap)
        cum += zj
        left = max(znext - max(d - cum, 0), 0)
        nxt[m - j] = left
        closing += left
    nxt[0] = (s[0] + 1) % 7
    waste = max(z1 - d, 0)
    reward = (
        -costs[0] * (1.0 if a[0] > 0 else 0.0)
        - costs[1] * max(total - d, 0)
        - costs[2] * max(d - total, 0)
        - costs[3] * waste
    )
    sold = min(d, total)
    stats[DEMAND] = d
    stats[SATISFIED] = sold
    stats[ISSUED] = sold
    stats[EXPIRED] = waste
    stats[RECEIVED] = total - opening
    stats[OPENING] = opening
    stats[HOLDING] = total - sold
    stats[CLOSING] = closing
    stats[REJECTED] = offered - (total - opening)
    return reward


@njit(inline="always")
def _prob(tables, s, a, w_index, w):
    demand, receipts, meta = tables[0], tables[1], tables[2]
    return demand[s[0], w[0]] * receipts[a[0], w_index % meta[2]]


@njit(cache=True)
def _sim_step(tables, s, a, u, nxt, stats):
    meta, cdf, cats = tables[2], tables[4], tables[5]
    m = meta[0]
    order = a[0]
    w = np.empty(m + 1, np.int64)
    # receipts by sequential conditional binomials, freshest category first
    left = order
    mass = 1.0
    for i in range(m - 1):
        k = m - i
        p = cats[order, k - 1]
        frac = p / mass if mass > 0.0 else 0.0
        frac = min(max(frac, 0.0), 1.0)
        y = binomial_inverse(u[i], left, frac)
        w[1 + i] = y
        left -= y
        mass -= p
    w[m] = left
    row = cdf[s[0]]
    w[0] = min(np.searchsorted(row, u[m - 1], side="right"), row.shape[0] - 1)
    return _step(tables, s, a, w, nxt, stats)


@njit(cache=True)
def weekday_ss_kernel(params, table, radices, tables, s, out):
    """Weekday (s, S): order up to S when stock is at most s; s >= S never orders."""
    day = s[0]
    reorder = params[2 * day]
    level = params[2 * day + 1]
    position = 0
    for i in range(1, s.shape[0]):
        position += s[i]
    if reorder < level and position <= reorder:
        out[0] = max(np.int64(level) - position, 0)
    else:
        out[0] = 0


class ScenarioC(InventoryMDP):
    name = "scenario-c"
    convergence_test = "periodic-span"
    period = WEEKDAYS
    separable = False
    n_products = 1
    n_stats = N_STAT_FIELDS
    checkpoint_every = 1

    def __init__(self, params: ScenarioCParams | None = None, **overrides):
        params = params or ScenarioCParams(**overrides)
        self.params = params
        self.gamma = params.gamma
        m, cap = params.m, params.A_max
        self.uniforms_per_step = m
        self.state_radices = np.array([WEEKDAYS] + [cap + 1] * (m - 1), dtype=np.int64)
        self.action_radices = np.array([cap + 1], dtype=np.int64)
        self.sim_action_max = np.array([cap], dtype=np.int64)
        self.demand = [weekday_demand_pmf(params, t) for t in range(WEEKDAYS)]
        self.demand_pmf = np.stack([p.probs for p in self.demand])
        self.demand_cdf = np.stack([p.cdf() for p in self.demand])
        self.category_probs = np.stack(
            [receipt_category_probs(a, params.c0, params.c1) for a in range(cap + 1)]
        )
        self._n_comp = n_compositions(cap, m)
        self._meta = np.array([m, cap, self._n_comp], dtype=np.int64)
        self._costs = np.array([params.C_f, params.C_h, params.C_s, params.C_w])
        self._receipts = None
        self.step_kernel = _step
        self.prob_kernel = _prob
        self.sim_kernel = _sim_step

    # The receipt table has (A_max + 1) * C(A_max + m, m) entries, so it is
    # only built when value iteration or exact probabilities need it.
    @property
    def tables(self):
        receipts = self._receipts if self._receipts is not None else np.zeros((1, 1))
        return (
            self.demand_pmf, receipts, self._meta, self._costs,
            self.demand_cdf, self.category_probs,
        )

    def _check_outcome_capacity(self):
        need = self.n_outcomes * (self.params.m + 1) * 8 * 3
        if need > physical_memory_bytes():
            raise CapacityError(
                f"{self.name}: {self.n_outcomes:,} outcomes need about {need:,} bytes",
                required=self.n_outcomes,
            )

    def receipt_compositions(self) -> np.ndarray:
        self._check_outcome_capacity()
        return compositions(self.params.A_max, self.params.m)

    def receipt_table(self) -> np.ndarray:
        """``R[a, c]`` = P(receipts = composition c | order a)."""
        if self._receipts is None:
            comps = self.receipt_compositions()
            sums = comps.sum(axis=1)
            table = np.zeros((self.params.A_max + 1, comps.shape[0]))
            log_fact = special.gammaln(comps + 1).sum(axis=1)
            for a in range(self.params.A_max + 1):
                rows = np.nonzero(sums == a)[0]
                # composition columns run from Y_m down to Y_1
                logp = np.log(self.category_probs[a][::-1])
                table[a, rows] = np.exp(
                    special.gammaln(a + 1) - log_fact[rows] + comps[rows] @ logp
                )
            self._receipts = table
        return self._receipts

    def prepare(self):
        self.check_capacity()
        self.receipt_table()

    @property
    def n_outcomes(self) -> int:
        return (self.params.D_max + 1) * self._n_comp

    def outcomes(self) -> np.ndarray:
        self.receipt_table()
        comps = self.receipt_compositions()
        n_d = self.params.D_max + 1
        out = np.empty((n_d * comps.shape[0], self.params.m + 1), dtype=np.int64)
        out[:, 0] = np.repeat(np.arange(n_d), comps.shape[0])
        out[:, 1:] = np.tile(comps, (n_d, 1))
        return out

    def outcome_candidates(self):
        """For order a, only receipts summing to a have positive probability."""
        comps = self.receipt_compositions()
        sums = comps.sum(axis=1)
        n_c = comps.shape[0]
        n_d = self.params.D_max + 1
        ptr = [0]
        idx = []
        for a in range(self.params.A_max + 1):
            rows = np.nonzero(sums == a)[0]
            block = (np.arange(n_d)[:, None] * n_c + rows[None, :]).ravel()
            idx.append(block)
            ptr.append(ptr[-1] + block.size)
        return np.array(ptr, dtype=np.int64), np.concatenate(idx).astype(np.int64)

    def max_successors(self) -> int:
        # the weekday of the next state is fixed
        return int(np.prod(self.state_radices[1:]))

    def transition(self, state, action, outcome):
        a = int(np.asarray(action).reshape(-1)[0])
        received = int(np.sum(np.asarray(outcome)[1:]))
        if received != a:
            raise ContractViolation(f"receipts sum to {received} but the order was {a}")
        return super().transition(state, action, outcome)

    def outcome_probabilities(self, state, action):
        self.receipt_table()
        return super().outcome_probabilities(state, action)

    def start_state(self) -> np.ndarray:
        return np.zeros(self.state_radices.size, dtype=np.int64)

    def heuristic_kernel(self):
        return weekday_ss_kernel

    def heuristic_bounds(self):
        return np.array([[0, self.params.A_max]] * (2 * WEEKDAYS), dtype=np.int64)

    def heuristic_names(self):
        names = []
        for t in range(WEEKDAYS):
            names += [f"s{t}", f"S{t}"]
        return names

    def sample_step(self, state, action, u):
        """Advance one day; ``u[:m-1]`` draws receipts, ``u[m-1]`` draws demand."""
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        nxt = np.zeros_like(s)
        stats = np.zeros(self.n_stats)
        r = _sim_step(self.tables, s, a, np.asarray(u, dtype=np.float64), nxt, stats)
        return nxt, float(r), stats


def weekday_ss_action(params, state) -> int:
    day = int(state[0])
    reorder, level = params[2 * day], params[2 * day + 1]
    position = int(np.sum(state[1:]))
    if reorder < level and position <= reorder:
        return max(int(level) - position, 0)
    return 0
