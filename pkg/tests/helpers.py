"""Small explicit MDPs and naive reference computations for the engine tests."""

import hashlib
import itertools

import numpy as np
from numba import njit

from perishvi.mdp import InventoryMDP


@njit(inline="always")
def _tab_step(tables, s, a, w, nxt, stats):
    nxt[0] = tables[1][s[0], a[0], w[0]]
    stats[0] = 1.0
    return tables[2][s[0], a[0], w[0]]


@njit(inline="always")
def _tab_prob(tables, s, a, w_index, w):
    return tables[0][s[0], a[0], w[0]]


class TabularMDP(InventoryMDP):
    """Explicit P[s, a, w], next[s, a, w], reward[s, a, w] arrays."""

    name = "tabular"
    n_stats = 1

    def __init__(self, probs, nxt, rewards, gamma, convergence_test="value-span"):
        self.P = np.ascontiguousarray(probs, dtype=np.float64)
        self.N = np.ascontiguousarray(nxt, dtype=np.int64)
        self.R = np.ascontiguousarray(rewards, dtype=np.float64)
        n_s, n_a, n_w = self.P.shape
        self.gamma = gamma
        self.convergence_test = convergence_test
        self.state_radices = np.array([n_s], dtype=np.int64)
        self.action_radices = np.array([n_a], dtype=np.int64)
        self.tables = (self.P, self.N, self.R)
        self.step_kernel = _tab_step
        self.prob_kernel = _tab_prob
        digest = hashlib.sha256(self.P.tobytes() + self.N.tobytes() + self.R.tobytes())
        self.params = {"digest": digest.hexdigest(), "gamma": gamma}

    @property
    def n_outcomes(self):
        return self.P.shape[2]

    def outcomes(self):
        return np.arange(self.P.shape[2], dtype=np.int64).reshape(-1, 1)


def random_mdp(rng, n_states, n_actions, n_outcomes, gamma=0.9, **kw):
    probs = rng.random((n_states, n_actions, n_outcomes)) + 0.05
    probs /= probs.sum(axis=2, keepdims=True)
    nxt = rng.integers(0, n_states, (n_states, n_actions, n_outcomes))
    rewards = rng.normal(0.0, 1.0, (n_states, n_actions, n_outcomes))
    return TabularMDP(probs, nxt, rewards, gamma, **kw)


def naive_backup(mdp: TabularMDP, values, gamma):
    """Triple loop over states, actions and outcomes."""
    n_s, n_a, n_w = mdp.P.shape
    out = np.empty(n_s)
    act = np.empty(n_s, dtype=np.int64)
    for s in range(n_s):
        best, best_a = -np.inf, -1
        for a in range(n_a):
            q = 0.0
            for w in range(n_w):
                q += mdp.P[s, a, w] * (mdp.R[s, a, w] + gamma * values[mdp.N[s, a, w]])
            if q > best:
                best, best_a = q, a
        out[s], act[s] = best, best_a
    return out, act


def policy_values(mdp: TabularMDP, policy, gamma):
    """Exact discounted value of a deterministic policy by a linear solve."""
    n_s = mdp.P.shape[0]
    trans = np.zeros((n_s, n_s))
    reward = np.zeros(n_s)
    for s in range(n_s):
        a = policy[s]
        for w in range(mdp.P.shape[2]):
            trans[s, mdp.N[s, a, w]] += mdp.P[s, a, w]
            reward[s] += mdp.P[s, a, w] * mdp.R[s, a, w]
    return np.linalg.solve(np.eye(n_s) - gamma * trans, reward)


def brute_force_policy(mdp: TabularMDP, gamma):
    """Enumerate every deterministic policy; return the one that dominates."""
    n_s, n_a, _ = mdp.P.shape
    best_v, best_p = None, None
    for pol in itertools.product(range(n_a), repeat=n_s):
        v = policy_values(mdp, pol, gamma)
        if best_v is None or v.sum() > best_v.sum():
            best_v, best_p = v, pol
    return np.array(best_p), best_v
