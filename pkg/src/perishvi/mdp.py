"""Scenario-agnostic MDP model contract and state indexing.

A model describes its state, action and outcome sets as integer vectors with
fixed per-component bounds.  States are indexed by a mixed-radix code with
the first component most significant, which is also the lexicographic
enumeration order.  The transition ``T(s, a, w) -> (s', r)`` and the outcome
probabilities ``P(w | s, a)`` are numba-compiled scalar functions so the
value-iteration kernels and the simulators share one implementation.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, is_dataclass
from math import prod

import numpy as np
from numba import njit

from .errors import CapacityError, ContractViolation

# Bytes of memory held per state during value iteration: the current and
# next value vectors, the ring buffer for the periodic test and the policy.
BYTES_PER_STATE = 8 * 11

# Per-product step statistics written by every scenario's step kernel.
STAT_FIELDS = (
    "demand", "satisfied", "issued", "expired", "received",
    "opening", "holding", "closing", "rejected",
)
N_STAT_FIELDS = len(STAT_FIELDS)
DEMAND, SATISFIED, ISSUED, EXPIRED, RECEIVED, OPENING, HOLDING, CLOSING, REJECTED = range(
    N_STAT_FIELDS
)


def physical_memory_bytes() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 1 << 34


@njit(cache=True)
def encode_state(s, radices):
    idx = 0
    for i in range(radices.shape[0]):
        idx = idx * radices[i] + s[i]
    return idx


@njit(cache=True)
def decode_state(idx, radices, out):
    for i in range(radices.shape[0] - 1, -1, -1):
        out[i] = idx % radices[i]
        idx //= radices[i]


def encode(states, radices) -> np.ndarray:
    """Vectorised mixed-radix index of each row of ``states``."""
    states = np.asarray(states, dtype=np.int64)
    radices = np.asarray(radices, dtype=np.int64)
    if states.shape[-1] != radices.size:
        raise ContractViolation(
            f"state has {states.shape[-1]} components, expected {radices.size}"
        )
    bad = (states < 0) | (states >= radices)
    if np.any(bad):
        row = np.argwhere(bad.any(axis=-1))[0]
        raise IndexError(f"state {states[tuple(row)].tolist()} is outside bounds {radices.tolist()}")
    idx = np.zeros(states.shape[:-1], dtype=np.int64)
    for i in range(radices.size):
        idx = idx * radices[i] + states[..., i]
    return idx


def decode(indices, radices) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    radices = np.asarray(radices, dtype=np.int64)
    out = np.empty(indices.shape + (radices.size,), dtype=np.int64)
    rest = indices.copy()
    for i in range(radices.size - 1, -1, -1):
        out[..., i] = rest % radices[i]
        rest //= radices[i]
    return out


def params_fingerprint(name: str, params) -> bytes:
    payload = asdict(params) if is_dataclass(params) else dict(params)
    text = json.dumps({"scenario": name, "params": payload}, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).digest()


class InventoryMDP:
    """Base class for the scenario models.

    Subclasses set the attributes below in ``__init__``:

    ``state_radices``, ``action_radices``
        per-component bounds (component value < radix).
    ``tables``
        tuple of arrays handed to the compiled kernels.
    ``step_kernel(tables, s, a, w, next_out, stats_out) -> reward``
        the deterministic transition.
    ``prob_kernel(tables, s, a, w_index, w) -> probability``.
    ``n_stats``
        length of the per-step statistics vector written by ``step_kernel``.
    ``separable``
        True when P(w|s,a) does not depend on ``a`` and the action only
        fills state digits that are zero under ``a = 0`` and adds a constant
        to the reward.  The engine then shares the outcome work across actions.
    ``fixed_sweeps``
        when positive, value iteration runs exactly this many sweeps.
    ``checkpoint_every``
        default checkpoint cadence, in sweeps.

    Models that can be simulated also provide ``sim_kernel(tables, s, a, u,
    next_out, stats_out) -> reward`` driven by ``uniforms_per_step`` uniforms,
    ``sim_action_max``, ``start_state()``, ``n_products`` and the heuristic
    policy hooks ``heuristic_kernel()``, ``heuristic_bounds()`` and
    ``heuristic_names()``.
    """

    name = "mdp"
    convergence_test = "value-span"
    period = 1
    separable = False
    n_stats = 1
    fixed_sweeps = 0
    checkpoint_every = 0

    params = None
    gamma: float
    state_radices: np.ndarray
    action_radices: np.ndarray
    tables: tuple

    # -- sizes (closed form, never enumerates) ---------------------------

    @property
    def n_states(self) -> int:
        return prod(int(r) for r in self.state_radices)

    @property
    def n_actions(self) -> int:
        return prod(int(r) for r in self.action_radices)

    @property
    def n_outcomes(self) -> int:
        raise NotImplementedError

    @property
    def fingerprint(self) -> bytes:
        return params_fingerprint(self.name, self.params)

    def check_capacity(self, limit_bytes: int | None = None) -> None:
        limit = physical_memory_bytes() if limit_bytes is None else limit_bytes
        need = self.n_states * BYTES_PER_STATE
        if need > limit:
            raise CapacityError(
                f"{self.name}: {self.n_states:,} states need about {need:,} bytes "
                f"for value iteration; {limit:,} bytes are available",
                required=self.n_states,
            )

    # -- enumeration -----------------------------------------------------

    def enumerate_states(self) -> np.ndarray:
        self.check_capacity()
        return decode(np.arange(self.n_states), self.state_radices)

    def state_index(self, states) -> np.ndarray:
        return encode(states, self.state_radices)

    def actions(self) -> np.ndarray:
        return decode(np.arange(self.n_actions), self.action_radices)

    def action_index(self, actions) -> np.ndarray:
        return encode(actions, self.action_radices)

    def outcomes(self) -> np.ndarray:
        raise NotImplementedError

    def outcome_candidates(self):
        """Per-action lists of outcome indices that can have positive probability.

        Returns ``(ptr, idx)`` in CSR layout, or None when every outcome is a
        candidate for every action.
        """
        return None

    def prepare(self) -> None:
        """Build any lookup tables that exact probabilities need."""

    def max_successors(self) -> int:
        """Upper bound on distinct next states reachable from one (state, action)."""
        return self.n_states

    def initial_values(self) -> np.ndarray:
        return np.zeros(self.n_states)

    # -- single-point evaluation (Python facing) -------------------------

    def transition(self, state, action, outcome):
        """Apply ``T(s, a, w)``; returns ``(next_state, reward)``."""
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        w = np.asarray(outcome, dtype=np.int64)
        nxt = np.zeros(self.state_radices.size, dtype=np.int64)
        stats = np.zeros(self.n_stats)
        r = self.step_kernel(self.tables, s, a, w, nxt, stats)
        return tuple(int(x) for x in nxt), float(r)

    def step_stats(self, state, action, outcome) -> np.ndarray:
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        w = np.asarray(outcome, dtype=np.int64)
        nxt = np.zeros(self.state_radices.size, dtype=np.int64)
        stats = np.zeros(self.n_stats)
        self.step_kernel(self.tables, s, a, w, nxt, stats)
        return stats

    def outcome_probabilities(self, state, action) -> np.ndarray:
        s = np.asarray(state, dtype=np.int64)
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        return _probabilities(self.prob_kernel, self.tables, s, a, self.outcomes())


@njit
def _probabilities_impl(prob, tables, s, a, outcomes):
    out = np.empty(outcomes.shape[0])
    for w in range(outcomes.shape[0]):
        out[w] = prob(tables, s, a, w, outcomes[w])
    return out


def _probabilities(prob, tables, s, a, outcomes):
    return _probabilities_impl(prob, tables, s, a, outcomes)
