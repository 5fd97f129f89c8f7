"""Parallel rollouts of replenishment policies under common random numbers.

Each rollout ``i`` draws its uniforms from a Philox stream keyed by
``base_seed + i``; every candidate policy evaluated in one call sees the same
streams, so differences between candidates are not blurred by sampling noise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import ContractViolation, ParameterError
from .mdp import (
    DEMAND, EXPIRED, HOLDING, N_STAT_FIELDS, RECEIVED, SATISFIED, InventoryMDP,
    encode_state,
)

log = logging.getLogger(__name__)

KPI_NAMES = ("service", "wastage", "holding")


@dataclass(frozen=True)
class RolloutConfig:
    horizon_days: int = 365
    warmup_days: int = 100
    n_rollouts: int = 10000
    base_seed: int = 0
    gamma: float | None = None
    chunk: int = 1000

    def __post_init__(self):
        if self.horizon_days < 0 or self.warmup_days < 0:
            raise ParameterError("horizon_days and warmup_days must be >= 0")
        if self.n_rollouts < 1:
            raise ParameterError(f"n_rollouts must be >= 1, got {self.n_rollouts}")
        if self.chunk < 1:
            raise ParameterError(f"chunk must be >= 1, got {self.chunk}")
        if self.base_seed < 0:
            raise ParameterError("base_seed must be >= 0")

    @property
    def days(self) -> int:
        return self.warmup_days + self.horizon_days


@dataclass
class Policy:
    """A compiled decision rule plus the data it reads.

    ``kernel(params, table, radices, tables, state, out_action)`` writes the
    action for ``state`` into ``out_action``.
    """

    kernel: object
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    table: np.ndarray = field(default_factory=lambda: np.zeros((1, 1), dtype=np.int64))
    name: str = "policy"

    def action(self, model: InventoryMDP, state) -> np.ndarray:
        out = np.zeros(model.action_radices.size, dtype=np.int64)
        self.kernel(
            np.asarray(self.params, dtype=np.float64), self.table,
            np.asarray(model.state_radices, dtype=np.int64), model.tables,
            np.asarray(state, dtype=np.int64), out,
        )
        return out


@njit(cache=True)
def table_policy_kernel(params, table, radices, tables, s, out):
    for i in range(s.shape[0]):
        if s[i] < 0 or s[i] >= radices[i]:
            out[:] = -1
            return
    out[:] = table[encode_state(s, radices)]


@njit(cache=True)
def constant_policy_kernel(params, table, radices, tables, s, out):
    for i in range(out.shape[0]):
        out[i] = np.int64(params[i])


def table_policy(model: InventoryMDP, action_indices, name: str = "value-iteration") -> Policy:
    """Policy that looks up the action for each state, e.g. from value iteration."""
    idx = np.asarray(action_indices, dtype=np.int64)
    if idx.shape != (model.n_states,):
        raise ContractViolation(
            f"policy table has shape {idx.shape}, expected ({model.n_states},)"
        )
    table = np.ascontiguousarray(model.actions()[idx])
    return Policy(table_policy_kernel, np.zeros(1), table, name)


def heuristic_policy(model: InventoryMDP, params, name: str = "heuristic") -> Policy:
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    n = len(model.heuristic_names())
    if params.size != n:
        raise ParameterError(f"{model.name} heuristic takes {n} parameters, got {params.size}")
    return Policy(model.heuristic_kernel(), params, np.zeros((1, 1), dtype=np.int64), name)


def constant_policy(model: InventoryMDP, action, name: str = "constant") -> Policy:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    return Policy(constant_policy_kernel, a, np.zeros((1, 1), dtype=np.int64), name)


_ROLLOUT_KERNELS: dict = {}


def _rollout_kernel(policy, sim):
    key = (policy, sim)
    if key not in _ROLLOUT_KERNELS:

        @njit(parallel=True)
        def run(params, table, radices, tables, action_max, start, uniforms, warmup,
                gamma, n_stats, returns, stat_sums, errors, bad_states):
            n_cand = params.shape[0]
            n_roll = uniforms.shape[0]
            days = uniforms.shape[1]
            for job in prange(n_cand * n_roll):
                c = job // n_roll
                r = job % n_roll
                s = start.copy()
                nxt = np.empty_like(s)
                act = np.empty(action_max.shape[0], np.int64)
                step_stats = np.zeros(n_stats)
                acc = np.zeros(n_stats)
                total = 0.0
                disc = 1.0
                for t in range(days):
                    policy(params[c], table, radices, tables, s, act)
                    bad = False
                    for i in range(act.shape[0]):
                        if act[i] < 0 or act[i] > action_max[i]:
                            bad = True
                    if bad:
                        errors[c, r] = t + 1
                        bad_states[c, r, :] = s
                        break
                    reward = sim(tables, s, act, uniforms[r, t], nxt, step_stats)
                    s, nxt = nxt, s
                    if t >= warmup:
                        total += disc * reward
                        disc *= gamma
                        for k in range(n_stats):
                            acc[k] += step_stats[k]
                returns[c, r] = total
                stat_sums[c, r, :] = acc

        _ROLLOUT_KERNELS[key] = run
    return _ROLLOUT_KERNELS[key]


def rollout_uniforms(model: InventoryMDP, cfg: RolloutConfig, first: int, count: int) -> np.ndarray:
    """Uniform draws for rollouts ``first .. first + count - 1``: shape (count, days, K)."""
    k = model.uniforms_per_step
    out = np.empty((count, cfg.days, k))
    for j in range(count):
        gen = np.random.Generator(np.random.Philox(key=cfg.base_seed + first + j))
        out[j] = gen.random((cfg.days, k))
    return out


def evaluate_candidates(model: InventoryMDP, kernel, param_matrix, cfg: RolloutConfig,
                        table=None):
    """Run ``cfg.n_rollouts`` rollouts for every row of ``param_matrix``.

    Returns ``(returns, stat_sums)`` with shapes (n_cand, n_rollouts) and
    (n_cand, n_rollouts, n_stats); stats are summed over post-warmup days.
    """
    params = np.ascontiguousarray(np.atleast_2d(np.asarray(param_matrix, dtype=np.float64)))
    table = np.zeros((1, 1), dtype=np.int64) if table is None else np.ascontiguousarray(table)
    gamma = float(model.gamma if cfg.gamma is None else cfg.gamma)
    run = _rollout_kernel(kernel, model.sim_kernel)
    n_cand, n_stats = params.shape[0], model.n_stats
    radices = np.ascontiguousarray(model.state_radices, dtype=np.int64)
    action_max = np.ascontiguousarray(model.sim_action_max, dtype=np.int64)
    start = np.ascontiguousarray(model.start_state(), dtype=np.int64)
    returns = np.zeros((n_cand, cfg.n_rollouts))
    stat_sums = np.zeros((n_cand, cfg.n_rollouts, n_stats))
    tables = model.tables
    for first in range(0, cfg.n_rollouts, cfg.chunk):
        count = min(cfg.chunk, cfg.n_rollouts - first)
        u = rollout_uniforms(model, cfg, first, count)
        errors = np.zeros((n_cand, count), dtype=np.int64)
        bad = np.zeros((n_cand, count, start.size), dtype=np.int64)
        ret = np.zeros((n_cand, count))
        sums = np.zeros((n_cand, count, n_stats))
        run(params, table, radices, tables, action_max, start, u, cfg.warmup_days,
            gamma, n_stats, ret, sums, errors, bad)
        if errors.any():
            c, r = np.argwhere(errors)[0]
            raise ContractViolation(
                f"policy chose an infeasible action in state {tuple(int(x) for x in bad[c, r])} "
                f"(candidate {c}, rollout {first + r}, day {errors[c, r] - 1})"
            )
        returns[:, first:first + count] = ret
        stat_sums[:, first:first + count] = sums
    return returns, stat_sums


def kpis_from_stats(stat_sums: np.ndarray, n_products: int, horizon_days: int) -> dict:
    """Per-rollout KPIs keyed ``service``/``wastage``/``holding`` (suffixed per product)."""
    out = {}
    for p in range(n_products):
        o = p * N_STAT_FIELDS
        dem = stat_sums[..., o + DEMAND]
        sat = stat_sums[..., o + SATISFIED]
        exp = stat_sums[..., o + EXPIRED]
        rec = stat_sums[..., o + RECEIVED]
        hold = stat_sums[..., o + HOLDING]
        with np.errstate(divide="ignore", invalid="ignore"):
            service = np.where(dem > 0, 100.0 * sat / np.where(dem > 0, dem, 1), 100.0)
            wastage = np.where(rec > 0, 100.0 * exp / np.where(rec > 0, rec, 1), 0.0)
        holding = hold / horizon_days if horizon_days > 0 else np.zeros_like(hold)
        suffix = "" if n_products == 1 else f"_{'abcdefgh'[p]}"
        out["service" + suffix] = service
        out["wastage" + suffix] = wastage
        out["holding" + suffix] = holding
    return out


def mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), sd


@dataclass
class EvaluationResult:
    policy_name: str
    returns: np.ndarray
    kpis: dict

    @property
    def mean_return(self) -> float:
        return mean_sd(self.returns)[0]

    @property
    def sd_return(self) -> float:
        return mean_sd(self.returns)[1]

    def summary(self) -> dict:
        row = {"policy": self.policy_name}
        row["return_mean"], row["return_sd"] = mean_sd(self.returns)
        for name, values in self.kpis.items():
            row[f"{name}_mean"], row[f"{name}_sd"] = mean_sd(values)
        return row


def evaluate_policy(model: InventoryMDP, policy: Policy, cfg: RolloutConfig | None = None
                    ) -> EvaluationResult:
    cfg = cfg or RolloutConfig()
    returns, sums = evaluate_candidates(model, policy.kernel, policy.params[None, :], cfg,
                                        policy.table)
    kpis = {k: v[0] for k, v in kpis_from_stats(sums, model.n_products,
                                                  cfg.horizon_days).items()}
    return EvaluationResult(policy.name, returns[0], kpis)


def rollout(model: InventoryMDP, policy: Policy, index: int = 0,
            cfg: RolloutConfig | None = None):
    """Step one rollout in Python and return its trajectory.

    Slow, but independent of the parallel kernel; uses the same uniforms as
    rollout ``index`` of :func:`evaluate_candidates`.
    """
    cfg = cfg or RolloutConfig(n_rollouts=1)
    gamma = float(model.gamma if cfg.gamma is None else cfg.gamma)
    u = rollout_uniforms(model, cfg, index, 1)[0]
    s = np.asarray(model.start_state(), dtype=np.int64)
    states, actions, rewards, stats = [], [], [], []
    for t in range(cfg.days):
        a = policy.action(model, s)
        if np.any(a < 0) or np.any(a > model.sim_action_max):
            raise ContractViolation(
                f"policy chose an infeasible action in state {tuple(int(x) for x in s)}"
            )
        nxt, r, st = model.sample_step(s, a, u[t])
        states.append(s)
        actions.append(a)
        rewards.append(r)
        stats.append(st)
        s = np.asarray(nxt, dtype=np.int64)
    rewards = np.array(rewards)
    post = rewards[cfg.warmup_days:]
    ret = float(np.sum(post * gamma ** np.arange(post.size)))
    return {
        "states": np.array(states), "actions": np.array(actions), "rewards": rewards,
        "stats": np.array(stats), "return": ret,
    }


def write_evaluation_csv(path, results) -> None:
    rows = [r.summary() for r in results]
    if not rows:
        return
    keys = list(rows[0])
    for row in rows[1:]:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
