"""Two perishable products with one-way substitution.

Customers who find product B out of stock accept product A instead with
probability ``rho``.  Both products arrive fresh the day after ordering and
are issued oldest first.  State layout: ``[Xa_m, ..., Xa_1, Xb_m, ..., Xb_1]``;
actions are ``(order_a, order_b)`` and the random outcome is the pair of
issued quantities ``(h_a, h_b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import special

from .distributions import binomial_pmf_table, poisson_pmf_cdf, poisson_quantile, poisson_sf
from .errors import ContractViolation, ParameterError
from .mdp import (
    CLOSING, DEMAND, EXPIRED, HOLDING, ISSUED, N_STAT_FIELDS, OPENING, RECEIVED,
    SATISFIED, InventoryMDP,
)

TAIL_CUTOFF = 1e-12


def newsvendor_max_order(m: int, mu: float, C_r: float, C_v: float) -> int:
    """Order cap from the critical ratio applied to demand over the useful life."""
    if C_r <= 0:
        raise ParameterError(f"revenue per unit must be positive, got {C_r}")
    ratio = (C_r - C_v) / C_r
    if ratio <= 0:
        return 0
    return max(poisson_quantile(m * mu, min(ratio, 1.0)), 0)


@dataclass(frozen=True)
class ScenarioBParams:
    m: int = 2
    mu_a: float = 5.0
    mu_b: float = 5.0
    A_a_max: int | None = None  # None: newsvendor cap
    A_b_max: int | None = None
    C_v_a: float = 0.5
    C_v_b: float = 0.5
    C_r_a: float = 1.0
    C_r_b: float = 1.0
    rho: float = 0.5
    gamma: float = 1.0
    fixed_iterations: int = 0  # > 0: run exactly this many sweeps, no stopping test

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        if self.mu_a < 0 or self.mu_b < 0:
            raise ParameterError("Poisson means must be non-negative")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in ("A_a_max", "A_b_max"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ParameterError(f"{name} must be >= 0, got {value}")
        if self.fixed_iterations < 0:
            raise ParameterError("fixed_iterations must be >= 0")

    @property
    def order_caps(self) -> tuple[int, int]:
        a = self.A_a_max
        if a is None:
            a = newsvendor_max_order(self.m, self.mu_a, self.C_r_a, self.C_v_a)
        b = self.A_b_max
        if b is None:
            b = newsvendor_max_order(self.m, self.mu_b, self.C_r_b, self.C_v_b)
        return a, b


@dataclass(frozen=True)
class SubstitutionTables:
    """``Pu[d, y]``: substitution demand given B stock ``y`` ran out.

    ``Pz[d, y]``: total demand on product A given B stock ``y``; mass above
    ``d_max`` is lumped at ``d_max`` so every column sums to one.
    """

    Pu: np.ndarray
    Pz: np.ndarray
    d_max: int


def excess_demand_pmf(y: int, mean: float) -> np.ndarray:
    """P(D - y = c | D >= y) for Poisson D, c = 0, 1, ... until the tail is negligible."""
    if mean == 0:
        return np.array([1.0])
    # log weight of c: (c + y) log(mean) - log((c + y)!), normalised at the end
    upper = int(max(mean - y, 0) + 20 * np.sqrt(mean) + 50)
    while True:
        c = np.arange(upper + 1)
        logw = c * np.log(mean) - special.gammaln(c + y + 1)
        logw -= logw.max()
        w = np.exp(logw)
        if w[-1] < TAIL_CUTOFF * w.sum():
            break
        upper *= 2
    keep = np.nonzero(w >= TAIL_CUTOFF * w.max())[0][-1] + 1
    w = w[:keep]
    return w / w.sum()


def build_substitution_tables(params: ScenarioBParams) -> SubstitutionTables:
    a_cap, b_cap = params.order_caps
    m = params.m
    d_max = m * max(a_cap, b_cap) + 2
    y_max = m * b_cap
    pa, _ = poisson_pmf_cdf(params.mu_a, d_max)
    Pu = np.zeros((d_max + 1, y_max + 1))
    Pz = np.zeros((d_max + 1, y_max + 1))
    for y in range(y_max + 1):
        excess = excess_demand_pmf(y, params.mu_b)
        for c, weight in enumerate(excess):
            accept = binomial_pmf_table(c, params.rho)
            top = min(c, d_max)
            Pu[: top + 1, y] += weight * accept[: top + 1]
        # P(Dz = d) = sum_k P(Da = k) Pu(d - k)
        conv = np.convolve(pa, Pu[:, y])[:d_max]
        Pz[:d_max, y] = conv
        Pz[d_max, y] = max(1.0 - conv.sum(), 0.0)
    return SubstitutionTables(Pu, Pz, d_max)


def issued_joint_table(params: ScenarioBParams, subst: SubstitutionTables) -> np.ndarray:
    """``J[Ia, Ib, ha, hb]`` = P(H = (ha, hb) | stock totals Ia, Ib)."""
    a_cap, b_cap = params.order_caps
    ia_max, ib_max = params.m * a_cap, params.m * b_cap
    pa, _ = poisson_pmf_cdf(params.mu_a, ia_max)
    pb, _ = poisson_pmf_cdf(params.mu_b, ib_max)
    sfa = poisson_sf(np.arange(ia_max + 1), params.mu_a)
    sfb = poisson_sf(np.arange(ib_max + 1), params.mu_b)
    J = np.zeros((ia_max + 1, ib_max + 1, ia_max + 1, ib_max + 1))
    for ia in range(ia_max + 1):
        for ib in range(ib_max + 1):
            block = J[ia, ib]
            # both below stock: no shortage, no substitution
            block[:ia, :ib] = np.outer(pa[:ia], pb[:ib])
            # A runs out, B does not
            block[ia, :ib] = sfa[ia] * pb[:ib]
            # B runs out: A faces its own demand plus accepted substitutes
            pz = subst.Pz[:, ib]
            block[:ia, ib] = pz[:ia] * sfb[ib]
            block[ia, ib] = max(1.0 - pz[:ia].sum(), 0.0) * sfb[ib]
    return J


@njit(inline="always")
def _age_product(s, base, m, issued, order, nxt):
    """Issue oldest first; returns (waste, closing).  X_k sits at base + m - k."""
    cum = 0
    closing = order
    for j in range(1, m):
        cum += s[base + m - j]
        left = max(s[base + m - j - 1] - max(issued - cum, 0), 0)
        nxt[base + m - j] = left
        closing += left
    nxt[base] = order
    waste = max(s[base + m - 1] - issued, 0)
    return waste, closing


@njit(inline="always")
def _step(tables, s, a, w, nxt, stats):
    meta, costs = tables[1], tables[2]
    m = meta[0]
    reward = -(costs[0] * a[0] + costs[1] * a[1]) + costs[2] * w[0] + costs[3] * w[1]
    for p in range(2):
        base = p * m
        opening = 0
        for k in range(m):
            opening += s[base + k]
        waste, closing = _age_product(s, base, m, w[p], a[p], nxt)
        o = p * N_STAT_FIELDS
        stats[o + DEMAND] = w[p]
        stats[o + SATISFIED] = w[p]
        stats[o + ISSUED] = w[p]
        stats[o + EXPIRED] = waste
        stats[o + RECEIVED] = a[p]
        stats[o + OPENING] = opening
        stats[o + HOLDING] = opening - w[p] - waste
        stats[o + CLOSING] = closing
    return reward


@njit(inline="always")
def _prob(tables, s, a, w_index, w):
    m = tables[1][0]
    ia = 0
    ib = 0
    for k in range(m):
        ia += s[k]
        ib += s[m + k]
    return tables[0][ia, ib, w[0], w[1]]


@njit(cache=True)
def poisson_inverse(u, mean):
    """Smallest k with P(X <= k) > u."""
    if mean <= 0.0:
        return 0
    p = np.exp(-mean)
    cdf = p
    k = 0
    limit = mean + 50.0 * np.sqrt(mean) + 100.0
    while u >= cdf and k < limit:
        k += 1
        p *= mean / k
        cdf += p
    return k


@njit(cache=True)
def binomial_inverse(u, n, rho):
    if n <= 0 or rho <= 0.0:
        return 0
    if rho >= 1.0:
        return n
    p = (1.0 - rho) ** n
    cdf = p
    k = 0
    odds = rho / (1.0 - rho)
    while u >= cdf and k < n:
        p *= (n - k) / (k + 1) * odds
        k += 1
        cdf += p
    return k


@njit(cache=True)
def _sim_step(tables, s, a, u, nxt, stats):
    meta, demand = tables[1], tables[3]
    m = meta[0]
    ia = 0
    ib = 0
    for k in range(m):
        ia += s[k]
        ib += s[m + k]
    da = poisson_inverse(u[0], demand[0])
    db = poisson_inverse(u[1], demand[1])
    fill_a = min(da, ia)
    fill_b = min(db, ib)
    accepted = binomial_inverse(u[2], db - fill_b, demand[2])
    substituted = min(accepted, ia - fill_a)
    w = np.empty(2, np.int64)
    w[0] = fill_a + substituted
    w[1] = fill_b
    r = _step(tables, s, a, w, nxt, stats)
    stats[DEMAND] = da
    stats[SATISFIED] = fill_a
    stats[N_STAT_FIELDS + DEMAND] = db
    stats[N_STAT_FIELDS + SATISFIED] = fill_b + substituted
    return r


@njit(cache=True)
def modified_base_stock_kernel(params, table, radices, tables, s, out):
    """Per product: order up to S, plus the oldest stock expected to be left over."""
    m = tables[1][0]
    demand = tables[3]
    for p in range(2):
        base = p * m
        position = 0
        for k in range(m):
            position += s[base + k]
        oldest = s[base + m - 1]
        extra = max(oldest - demand[p], 0.0)
        out[p] = max(np.int64(np.floor(params[p] - position + extra)), 0)


@njit(cache=True)
def _initial_values(revenue, radices, m, out):
    n_dim = radices.shape[0]
    s = np.empty(n_dim, np.int64)
    for idx in range(out.shape[0]):
        rest = idx
        for i in range(n_dim - 1, -1, -1):
            s[i] = rest % radices[i]
            rest //= radices[i]
        ia = 0
        ib = 0
        for k in range(m):
            ia += s[k]
            ib += s[m + k]
        out[idx] = revenue[ia, ib]


class ScenarioB(InventoryMDP):
    name = "scenario-b"
    separable = True
    n_products = 2
    n_stats = 2 * N_STAT_FIELDS
    uniforms_per_step = 3
    checkpoint_every = 1

    def __init__(self, params: ScenarioBParams | None = None, **overrides):
        params = params or ScenarioBParams(**overrides)
        self.params = params
        self.gamma = params.gamma
        self.convergence_test = "fixed" if params.fixed_iterations else "change-span"
        self.fixed_sweeps = params.fixed_iterations
        a_cap, b_cap = params.order_caps
        self.order_caps = (a_cap, b_cap)
        m = params.m
        self.state_radices = np.array([a_cap + 1] * m + [b_cap + 1] * m, dtype=np.int64)
        self.action_radices = np.array([a_cap + 1, b_cap + 1], dtype=np.int64)
        # heuristic orders may reach twice the VI cap
        self.sim_action_max = np.array([2 * a_cap, 2 * b_cap], dtype=np.int64)
        self.substitution = build_substitution_tables(params)
        self.joint = issued_joint_table(params, self.substitution)
        meta = np.array([m], dtype=np.int64)
        costs = np.array([params.C_v_a, params.C_v_b, params.C_r_a, params.C_r_b])
        demand = np.array([params.mu_a, params.mu_b, params.rho])
        self.tables = (self.joint, meta, costs, demand)
        self.step_kernel = _step
        self.prob_kernel = _prob
        self.sim_kernel = _sim_step

    @property
    def n_outcomes(self) -> int:
        a_cap, b_cap = self.order_caps
        return (self.params.m * a_cap + 1) * (self.params.m * b_cap + 1)

    def outcomes(self) -> np.ndarray:
        a_cap, b_cap = self.order_caps
        ha, hb = np.meshgrid(
            np.arange(self.params.m * a_cap + 1), np.arange(self.params.m * b_cap + 1),
            indexing="ij",
        )
        return np.stack([ha.ravel(), hb.ravel()], axis=1).astype(np.int64)

    def stock_totals(self, state) -> tuple[int, int]:
        s = np.asarray(state)
        m = self.params.m
        return int(s[:m].sum()), int(s[m:].sum())

    def issued_joint_pmf(self, state) -> np.ndarray:
        """P(H = (ha, hb) | state) over the full outcome grid, shape (ha, hb)."""
        ia, ib = self.stock_totals(state)
        return self.joint[ia, ib].copy()

    def transition(self, state, action, outcome):
        ia, ib = self.stock_totals(state)
        if outcome[0] > ia or outcome[1] > ib:
            raise ContractViolation(
                f"issued {tuple(int(x) for x in outcome)} exceeds stock ({ia}, {ib})"
            )
        return super().transition(state, action, outcome)

    def expected_revenue_table(self) -> np.ndarray:
        """Expected one-day sales revenue by stock totals ``[Ia, Ib]``."""
        ia_max, ib_max = self.joint.shape[2] - 1, self.joint.shape[3] - 1
        revenue = (
            np.arange(ia_max + 1)[:, None] * self.params.C_r_a
            + np.arange(ib_max + 1)[None, :] * self.params.C_r_b
        )
        return np.einsum("ijkl,kl->ij", self.joint, revenue)

    def initial_value(self, state) -> float:
        ia, ib = self.stock_totals(state)
        return float(self.expected_revenue_table()[ia, ib])

    def initial_values(self) -> np.ndarray:
        self.check_capacity()
        out = np.empty(self.n_states)
        _initial_values(self.expected_revenue_table(), self.state_radices, self.params.m, out)
        return out

    def start_state(self) -> np.ndarray:
        return np.zeros(self.state_radices.size, dtype=np.int64)

    def heuristic_kernel(self):
        return modified_base_stock_kernel

    def heuristic_bounds(self):
        a_cap, b_cap = self.order_caps
        return np.array([[0, 2 * a_cap], [0, 2 * b_cap]], dtype=np.int64)

    def heuristic_names(self):
        return ["S_a", "S_b"]

    def sample_step(self, state, action, u):
        """Advance one day; ``u`` holds three uniforms (demand A, demand B, acceptance)."""
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        nxt = np.zeros_like(s)
        stats = np.zeros(self.n_stats)
        r = _sim_step(self.tables, s, a, np.asarray(u, dtype=np.float64), nxt, stats)
        return nxt, float(r), stats


def modified_base_stock_action(levels, state, m: int, means) -> tuple[int, int]:
    s = np.asarray(state)
    out = []
    for p in range(2):
        stock = s[p * m : (p + 1) * m]
        extra = max(stock[-1] - means[p], 0.0)
        out.append(max(int(np.floor(levels[p] - stock.sum() + extra)), 0))
    return tuple(out)
