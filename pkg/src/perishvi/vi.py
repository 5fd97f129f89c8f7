"""Batched synchronous value iteration.

Each sweep partitions the states into batches of at most ``max_batch_size``
and runs the Bellman backup for a whole batch in one compiled call whose
outer loop over states is a ``prange``.  Backups only read the previous
value vector, so results do not depend on batch size or thread count: the
sum over outcomes for one ``(s, a)`` is always taken in outcome enumeration
order, and ties in the argmax go to the smallest action index.
"""

from __future__ import annotations

import logging
import os
import re
import struct
import tempfile
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from numba import njit, prange

from .errors import (
    CheckpointError,
    CheckpointFormatError,
    ContractViolation,
    FingerprintMismatch,
    NumericDivergenceError,
    ParameterError,
)
from .mdp import InventoryMDP, decode_state, encode_state, physical_memory_bytes

log = logging.getLogger(__name__)

CONVERGENCE_TESTS = ("value-span", "change-span", "periodic-span", "fixed")
HISTORY_NEEDED = {"value-span": 2, "change-span": 2, "periodic-span": 8, "fixed": 1}
PERIOD = 7


@dataclass
class ViConfig:
    epsilon: float = 1e-4
    gamma: float | None = None  # None: use the model's discount factor
    max_batch_size: int = 65536
    max_iterations: int = 10_000
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    precision: str = "f64"
    convergence_test: str | None = None  # None: use the model's test
    cache: str = "auto"  # transition cache: auto, on or off

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_batch_size < 1:
            raise ParameterError(f"max_batch_size must be >= 1, got {self.max_batch_size}")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.precision not in ("f32", "f64"):
            raise ParameterError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.convergence_test is not None and self.convergence_test not in CONVERGENCE_TESTS:
            raise ParameterError(f"unknown convergence test {self.convergence_test!r}")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if self.cache not in ("auto", "on", "off"):
            raise ParameterError(f"cache must be auto, on or off, got {self.cache!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class ValueFunction:
    values: np.ndarray
    iteration: int
    fingerprint: bytes

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericDivergenceError(
                f"non-finite value at iteration {self.iteration}", self.iteration
            )


@dataclass
class ViResult:
    value_function: ValueFunction
    policy: np.ndarray  # action index per state
    iterations: int
    converged: bool
    wall_seconds: float
    deltas: list = field(default_factory=list)  # (max change, min change) per sweep


# --------------------------------------------------------------------------
# compiled kernels
#
# Two routes compute the same backup.  The on-the-fly kernels evaluate the
# model's transition for every (state, outcome) on every sweep.  The cached
# route evaluates it once, stores the expected reward and the merged
# next-state distribution in CSR form, and each sweep only gathers values.
# Both write Q(s,a) = E[r] + gamma * sum_s' P(s') V(s').


_KERNELS: dict = {}


def _make_general_kernel(step, prob, f32):
    cast = np.float32 if f32 else np.float64

    @njit(parallel=True)
    def backup(tables, radices, actions, outcomes, cand_ptr, cand_idx, n_stats,
               batch, values, gamma, out_v, out_a):
        n_dim = radices.shape[0]
        g = cast(gamma)
        for i in prange(batch.shape[0]):
            s = np.empty(n_dim, np.int64)
            nxt = np.empty(n_dim, np.int64)
            stats = np.empty(n_stats)
            decode_state(batch[i], radices, s)
            best = -np.inf
            best_a = 0
            for a in range(actions.shape[0]):
                act = actions[a]
                mean_r = cast(0.0)
                future = cast(0.0)
                for j in range(cand_ptr[a], cand_ptr[a + 1]):
                    w = cand_idx[j]
                    p = prob(tables, s, act, w, outcomes[w])
                    if p == 0.0:
                        continue
                    r = step(tables, s, act, outcomes[w], nxt, stats)
                    mean_r += cast(p) * cast(r)
                    future += cast(p) * values[encode_state(nxt, radices)]
                q = mean_r + g * future
                if q > best:
                    best = q
                    best_a = a
            out_v[i] = best
            out_a[i] = best_a

    @njit(parallel=True)
    def build(tables, radices, actions, outcomes, cand_ptr, cand_idx, n_stats,
              states, counts, fill, ptr, ns_out, ps_out, r_out):
        # fill=False: count merged successors per (state, action) into counts.
        n_dim = radices.shape[0]
        n_act = actions.shape[0]
        width = 0
        for a in range(n_act):
            width = max(width, cand_ptr[a + 1] - cand_ptr[a])
        for i in prange(states.shape[0]):
            s = np.empty(n_dim, np.int64)
            nxt = np.empty(n_dim, np.int64)
            stats = np.empty(n_stats)
            keys = np.empty(width, np.int64)
            probs = np.empty(width, dtype=cast)
            decode_state(states[i], radices, s)
            for a in range(n_act):
                act = actions[a]
                n = 0
                mean_r = cast(0.0)
                for j in range(cand_ptr[a], cand_ptr[a + 1]):
                    w = cand_idx[j]
                    p = prob(tables, s, act, w, outcomes[w])
                    if p == 0.0:
                        continue
                    r = step(tables, s, act, outcomes[w], nxt, stats)
                    mean_r += cast(p) * cast(r)
                    keys[n] = encode_state(nxt, radices)
                    probs[n] = cast(p)
                    n += 1
                order = np.argsort(keys[:n], kind="mergesort")
                row = i * n_act + a
                if fill:
                    k = ptr[row] - 1
                    last = -1
                    for o in order:
                        if keys[o] != last:
                            k += 1
                            ns_out[k] = keys[o]
                            ps_out[k] = probs[o]
                            last = keys[o]
                        else:
                            ps_out[k] += probs[o]
                    r_out[row] = mean_r
                else:
                    c = 0
                    last = -1
                    for o in order:
                        if keys[o] != last:
                            c += 1
                            last = keys[o]
                    counts[row] = c

    return backup, build


def _make_separable_kernel(step, prob, f32):
    cast = np.float32 if f32 else np.float64

    @njit(inline="always")
    def successors(tables, radices, outcomes, zero_action, s, nxt, stats, ps, ns):
        # Outcomes landing on the same next state in a row share one entry.
        n = 0
        mean_r = cast(0.0)
        total_p = cast(0.0)
        for w in range(outcomes.shape[0]):
            p = prob(tables, s, zero_action, w, outcomes[w])
            if p == 0.0:
                continue
            r = step(tables, s, zero_action, outcomes[w], nxt, stats)
            mean_r += cast(p) * cast(r)
            total_p += cast(p)
            idx = encode_state(nxt, radices)
            if n > 0 and ns[n - 1] == idx:
                ps[n - 1] += cast(p)
            else:
                ps[n] = cast(p)
                ns[n] = idx
                n += 1
        return n, mean_r, total_p

    @njit(parallel=True)
    def backup(tables, radices, actions, outcomes, offsets, action_rewards, n_stats,
               batch, values, gamma, out_v, out_a):
        # Q(s,a) = E[r | a=0] + r_a + gamma * sum p V(s' + offset_a)
        n_dim = radices.shape[0]
        n_out = outcomes.shape[0]
        g = cast(gamma)
        zero_action = actions[0]
        for i in prange(batch.shape[0]):
            s = np.empty(n_dim, np.int64)
            nxt = np.empty(n_dim, np.int64)
            stats = np.empty(n_stats)
            ps = np.empty(n_out, dtype=cast)
            ns = np.empty(n_out, np.int64)
            decode_state(batch[i], radices, s)
            n, mean_r, total_p = successors(
                tables, radices, outcomes, zero_action, s, nxt, stats, ps, ns
            )
            best = -np.inf
            best_a = 0
            for a in range(actions.shape[0]):
                off = offsets[a]
                future = cast(0.0)
                for k in range(n):
                    future += ps[k] * values[ns[k] + off]
                q = mean_r + total_p * cast(action_rewards[a]) + g * future
                if q > best:
                    best = q
                    best_a = a
            out_v[i] = best
            out_a[i] = best_a

    @njit(parallel=True)
    def build(tables, radices, actions, outcomes, n_stats, states, counts, fill,
              ptr, ns_out, ps_out, r_out, p_out):
        n_dim = radices.shape[0]
        n_out = outcomes.shape[0]
        zero_action = actions[0]
        for i in prange(states.shape[0]):
            s = np.empty(n_dim, np.int64)
            nxt = np.empty(n_dim, np.int64)
            stats = np.empty(n_stats)
            ps = np.empty(n_out, dtype=cast)
            ns = np.empty(n_out, np.int64)
            decode_state(states[i], radices, s)
            n, mean_r, total_p = successors(
                tables, radices, outcomes, zero_action, s, nxt, stats, ps, ns
            )
            if fill:
                lo = ptr[i]
                for k in range(n):
                    ns_out[lo + k] = ns[k]
                    ps_out[lo + k] = ps[k]
                r_out[i] = mean_r
                p_out[i] = total_p
            else:
                counts[i] = n

    return backup, build


@njit(parallel=True, cache=True)
def _cached_separable_backup(ptr, ns, ps, mean_r, total_p, offsets, action_rewards,
                             batch, values, gamma, out_v, out_a):
    for i in prange(batch.shape[0]):
        st = batch[i]
        lo, hi = ptr[st], ptr[st + 1]
        best = -np.inf
        best_a = 0
        for a in range(offsets.shape[0]):
            off = offsets[a]
            future = values[0] * 0
            for k in range(lo, hi):
                future += ps[k] * values[ns[k] + off]
            q = mean_r[st] + total_p[st] * action_rewards[a] + gamma * future
            if q > best:
                best = q
                best_a = a
        out_v[i] = best
        out_a[i] = best_a


@njit(parallel=True, cache=True)
def _cached_general_backup(ptr, ns, ps, mean_r, n_actions, batch, values, gamma,
                           out_v, out_a):
    for i in prange(batch.shape[0]):
        st = batch[i]
        best = -np.inf
        best_a = 0
        for a in range(n_actions):
            row = st * n_actions + a
            future = values[0] * 0
            for k in range(ptr[row], ptr[row + 1]):
                future += ps[k] * values[ns[k]]
            q = mean_r[row] + gamma * future
            if q > best:
                best = q
                best_a = a
        out_v[i] = best
        out_a[i] = best_a


def _kernels(model: InventoryMDP, separable: bool, f32: bool):
    key = (model.step_kernel, model.prob_kernel, separable, f32)
    if key not in _KERNELS:
        maker = _make_separable_kernel if separable else _make_general_kernel
        _KERNELS[key] = maker(model.step_kernel, model.prob_kernel, f32)
    return _KERNELS[key]


# Transition caches larger than this share of physical memory are not built.
CACHE_MEMORY_SHARE = 0.25
CACHE_BUILD_CHUNK = 4096


class BackupPlan:
    """Everything the kernels need for one model, built once per run.

    ``cache`` is ``"auto"`` (build the transition cache when its worst-case
    size fits in memory), ``"on"`` or ``"off"``.
    """

    def __init__(self, model: InventoryMDP, dtype=np.float64, cache: str = "auto",
                 separable: bool | None = None):
        if cache not in ("auto", "on", "off"):
            raise ParameterError(f"cache must be auto, on or off, got {cache!r}")
        model.prepare()
        self.model = model
        self.dtype = np.dtype(dtype)
        self.separable = model.separable if separable is None else separable
        self.radices = np.ascontiguousarray(model.state_radices, dtype=np.int64)
        self.actions = np.ascontiguousarray(model.actions(), dtype=np.int64)
        self.outcomes = np.ascontiguousarray(model.outcomes(), dtype=np.int64)
        f32 = self.dtype == np.float32
        self.kernel, self._build = _kernels(model, self.separable, f32)
        if self.separable:
            offsets, rewards = separable_action_deltas(model, self.actions, self.outcomes)
            self.extra = (offsets, rewards)
            self._action_rewards = rewards.astype(self.dtype)
        else:
            cands = model.outcome_candidates()
            if cands is None:
                n_a, n_w = self.actions.shape[0], self.outcomes.shape[0]
                cands = (
                    np.arange(n_a + 1, dtype=np.int64) * n_w,
                    np.tile(np.arange(n_w, dtype=np.int64), n_a),
                )
            self.extra = tuple(np.ascontiguousarray(c, dtype=np.int64) for c in cands)
        self.cached = False
        if cache == "on" or (cache == "auto" and self.cache_upper_bound_bytes() <= (
            CACHE_MEMORY_SHARE * physical_memory_bytes()
        )):
            self._build_cache()

    def cache_upper_bound_bytes(self) -> int:
        n_s = self.model.n_states
        reach = self.model.max_successors()
        if self.separable:
            per_state = min(self.outcomes.shape[0], reach)
        else:
            ptr = self.extra[0]
            per_state = sum(min(int(ptr[a + 1] - ptr[a]), reach) for a in range(len(ptr) - 1))
        return n_s * per_state * (8 + self.dtype.itemsize)

    def _build_cache(self):
        m = self.model
        n_s = m.n_states
        n_rows = n_s if self.separable else n_s * self.actions.shape[0]
        counts = np.zeros(n_rows, dtype=np.int64)
        dummy_i = np.zeros(1, dtype=np.int64)
        dummy_f = np.zeros(1, dtype=self.dtype)
        rows_per = 1 if self.separable else self.actions.shape[0]
        for lo in range(0, n_s, CACHE_BUILD_CHUNK):
            states = np.arange(lo, min(lo + CACHE_BUILD_CHUNK, n_s), dtype=np.int64)
            sub = counts[lo * rows_per : (lo + states.size) * rows_per]
            self._run_build(states, sub, False, dummy_i, dummy_i, dummy_f, dummy_f, dummy_f)
        ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        ns = np.empty(int(ptr[-1]), dtype=np.int64)
        ps = np.empty(int(ptr[-1]), dtype=self.dtype)
        mean_r = np.empty(n_rows, dtype=self.dtype)
        total_p = np.empty(n_s if self.separable else 1, dtype=self.dtype)
        for lo in range(0, n_s, CACHE_BUILD_CHUNK):
            states = np.arange(lo, min(lo + CACHE_BUILD_CHUNK, n_s), dtype=np.int64)
            r0, r1 = lo * rows_per, (lo + states.size) * rows_per
            # Chunk-local CSR pointers into the global arrays.
            self._run_build(
                states, counts[r0:r1], True, ptr[r0:r1 + 1], ns, ps,
                mean_r[r0:r1], total_p[lo : lo + states.size] if self.separable else total_p,
            )
        self.cache = (ptr, ns, ps, mean_r, total_p)
        self.cached = True

    def _run_build(self, states, counts, fill, ptr, ns, ps, mean_r, total_p):
        m = self.model
        if self.separable:
            self._build(m.tables, self.radices, self.actions, self.outcomes, m.n_stats,
                        states, counts, fill, ptr, ns, ps, mean_r, total_p)
        else:
            self._build(m.tables, self.radices, self.actions, self.outcomes,
                        self.extra[0], self.extra[1], m.n_stats,
                        states, counts, fill, ptr, ns, ps, mean_r)

    @property
    def cache_entries(self) -> int:
        return int(self.cache[0][-1]) if self.cached else 0

    def __call__(self, batch, values, gamma):
        out_v = np.empty(batch.shape[0], dtype=self.dtype)
        out_a = np.empty(batch.shape[0], dtype=np.int64)
        values = values.astype(self.dtype, copy=False)
        if self.cached:
            ptr, ns, ps, mean_r, total_p = self.cache
            g = self.dtype.type(gamma)
            if self.separable:
                _cached_separable_backup(ptr, ns, ps, mean_r, total_p, self.extra[0],
                                         self._action_rewards, batch, values, g,
                                         out_v, out_a)
            else:
                _cached_general_backup(ptr, ns, ps, mean_r, self.actions.shape[0],
                                       batch, values, g, out_v, out_a)
            return out_v, out_a
        self.kernel(
            self.model.tables, self.radices, self.actions, self.outcomes,
            self.extra[0], self.extra[1], self.model.n_stats,
            batch, values, float(gamma), out_v, out_a,
        )
        return out_v, out_a


def separable_action_deltas(model, actions, outcomes):
    """Index offset and reward change caused by each action relative to action 0."""
    s0 = np.zeros(model.state_radices.size, dtype=np.int64)
    w0 = outcomes[0]
    base_state, base_r = model.transition(s0, actions[0], w0)
    base_idx = int(model.state_index(np.array(base_state)))
    offsets = np.empty(actions.shape[0], dtype=np.int64)
    rewards = np.empty(actions.shape[0])
    for a in range(actions.shape[0]):
        nxt, r = model.transition(s0, actions[a], w0)
        offsets[a] = int(model.state_index(np.array(nxt))) - base_idx
        rewards[a] = r - base_r
    return offsets, rewards


def iter_batches(n_states: int, max_batch_size: int):
    """Yield ``(index array, n_real)``; the last batch is padded with state 0."""
    for lo in range(0, n_states, max_batch_size):
        hi = min(lo + max_batch_size, n_states)
        batch = np.zeros(max_batch_size if n_states > max_batch_size else hi - lo, dtype=np.int64)
        batch[: hi - lo] = np.arange(lo, hi)
        yield lo, batch, hi - lo


def bellman_backup_batch(model: InventoryMDP, values, state_indices, gamma=None,
                         plan: BackupPlan | None = None):
    """Backup for the given states: ``(new values, argmax action index)``."""
    values = np.ascontiguousarray(values)
    if values.shape != (model.n_states,):
        raise ContractViolation(
            f"value vector has shape {values.shape}, expected ({model.n_states},)"
        )
    if plan is None:
        plan = BackupPlan(model, values.dtype)
    batch = np.ascontiguousarray(state_indices, dtype=np.int64)
    return plan(batch, values, model.gamma if gamma is None else gamma)


def sweep(plan: BackupPlan, values, gamma, max_batch_size):
    n = values.shape[0]
    new_v = np.empty(n, dtype=plan.dtype)
    new_a = np.empty(n, dtype=np.int64)
    for lo, batch, n_real in iter_batches(n, max_batch_size):
        v, a = plan(batch, values, gamma)
        new_v[lo : lo + n_real] = v[:n_real]
        new_a[lo : lo + n_real] = a[:n_real]
    return new_v, new_a


# --------------------------------------------------------------------------
# convergence


def check_convergence(test: str, history, gamma: float, epsilon: float, iteration: int) -> bool:
    """Apply a stopping test to the most recent value vectors.

    ``history`` holds value vectors oldest first; its last entry is V_i.
    """
    if test not in CONVERGENCE_TESTS:
        raise ParameterError(f"unknown convergence test {test!r}")
    if test == "fixed":
        return False
    if test == "periodic-span":
        if iteration < PERIOD:
            return False
        if len(history) < PERIOD + 1:
            raise ContractViolation(
                f"periodic-span test needs {PERIOD + 1} value vectors, got {len(history)}"
            )
        total = np.zeros(np.shape(history[-1]))
        for j in range(PERIOD):
            diff = np.asarray(history[-1 - j], np.float64) - np.asarray(history[-2 - j], np.float64)
            total += diff / gamma ** (iteration - j - 1)
        d_max, d_min = total.max(), total.min()
        return bool(d_max - d_min <= 2 * epsilon * min(abs(d_max), abs(d_min)))
    if len(history) < 2:
        raise ContractViolation(f"{test} test needs 2 value vectors, got {len(history)}")
    diff = np.asarray(history[-1], np.float64) - np.asarray(history[-2], np.float64)
    if test == "value-span":
        return bool(np.max(np.abs(diff)) < epsilon)
    return bool(diff.max() - diff.min() < epsilon)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"PVI1"
_HEADER = struct.Struct("<4sq32sq")
CHECKPOINT_RE = re.compile(r"^values_(\d{8})\.pvi$")


def atomic_write_bytes(path, chunks) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(vf: ValueFunction, path) -> None:
    values = np.ascontiguousarray(vf.values, dtype="<f8")
    header = _HEADER.pack(MAGIC, vf.iteration, vf.fingerprint, values.size)
    try:
        atomic_write_bytes(path, [header, values.tobytes()])
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expected_fingerprint: bytes | None = None) -> ValueFunction:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint header")
    magic, iteration, fingerprint, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if n < 0 or len(data) != _HEADER.size + 8 * n:
        raise CheckpointFormatError(
            f"{path}: expected {n} values, file holds {(len(data) - _HEADER.size) / 8:g}"
        )
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise FingerprintMismatch(expected_fingerprint.hex(), fingerprint.hex())
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=n).astype(np.float64)
    return ValueFunction(values, iteration, fingerprint)


def checkpoint_path(directory, iteration: int) -> Path:
    return Path(directory) / f"values_{iteration:08d}.pvi"


def list_checkpoints(directory) -> list[tuple[int, Path]]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    found = []
    for p in directory.iterdir():
        m = CHECKPOINT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)


# --------------------------------------------------------------------------
# driver


def set_threads(n: int | None) -> None:
    if n:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run_value_iteration(
    model: InventoryMDP,
    config: ViConfig | None = None,
    checkpoint_dir=None,
    resume: bool = False,
    callback=None,
) -> ViResult:
    """Iterate Bellman backups until the stopping test passes.

    With ``checkpoint_dir`` set, a checkpoint is written every
    ``config.checkpoint_every`` iterations and after the last one; older files
    beyond what the stopping test needs are removed.  ``resume`` restarts
    from the newest checkpoint in that directory.
    """
    config = config or ViConfig()
    model.check_capacity()
    t0 = time.perf_counter()
    gamma = model.gamma if config.gamma is None else config.gamma
    test = config.convergence_test or model.convergence_test
    keep = HISTORY_NEEDED[test]
    limit = config.max_iterations
    if test == "fixed" and model.fixed_sweeps and config.convergence_test is None:
        limit = model.fixed_sweeps
    dtype = config.dtype
    fingerprint = model.fingerprint
    plan = BackupPlan(model, dtype, cache=config.cache)

    history: deque = deque(maxlen=keep)
    iteration = 0
    if resume and checkpoint_dir is not None and list_checkpoints(checkpoint_dir):
        iteration, history = _restore(checkpoint_dir, fingerprint, keep, dtype)
        log.info("resumed from iteration %d", iteration)
    else:
        history.append(np.ascontiguousarray(model.initial_values(), dtype=dtype))
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    values = history[-1]
    deltas = []
    converged = test == "fixed" and iteration >= limit
    while not converged and iteration < limit:
        iteration += 1
        values, _ = sweep(plan, values, gamma, config.max_batch_size)
        if not np.all(np.isfinite(values)):
            raise NumericDivergenceError(
                f"non-finite value in sweep {iteration}", iteration
            )
        diff = values.astype(np.float64) - history[-1].astype(np.float64)
        deltas.append((float(diff.max()), float(diff.min())))
        history.append(values)
        if test == "fixed":
            converged = iteration >= limit
        else:
            converged = check_convergence(test, list(history), gamma, config.epsilon, iteration)
        if callback is not None:
            callback(iteration, deltas[-1], converged)
        if checkpoint_dir is not None and config.checkpoint_every and (
            iteration % config.checkpoint_every == 0
        ):
            _write_checkpoint(checkpoint_dir, values, iteration, fingerprint, keep)

    if checkpoint_dir is not None:
        _write_checkpoint(checkpoint_dir, values, iteration, fingerprint, keep)
    _, policy = sweep(plan, values, gamma, config.max_batch_size)
    vf = ValueFunction(values, iteration, fingerprint)
    return ViResult(vf, policy, iteration, bool(converged), time.perf_counter() - t0, deltas)


def extract_policy(model: InventoryMDP, values, gamma=None, max_batch_size=65536) -> np.ndarray:
    values = np.ascontiguousarray(values)
    plan = BackupPlan(model, values.dtype)
    _, policy = sweep(plan, values, model.gamma if gamma is None else gamma, max_batch_size)
    return policy


def _write_checkpoint(directory, values, iteration, fingerprint, keep):
    path = checkpoint_path(directory, iteration)
    if path.exists():
        return
    save_checkpoint(ValueFunction(values.astype(np.float64), iteration, fingerprint), path)
    for it, old in list_checkpoints(directory)[:-keep]:
        try:
            old.unlink()
        except OSError:
            log.warning("could not remove old checkpoint %s", old)


def _restore(directory, fingerprint, keep, dtype):
    found = list_checkpoints(directory)
    latest_it, latest_path = found[-1]
    history: deque = deque(maxlen=keep)
    by_iter = dict(found)
    # Rebuild as much consecutive history as is on disk.
    start = latest_it
    while start - 1 in by_iter and latest_it - (start - 1) < keep:
        start -= 1
    for it in range(start, latest_it + 1):
        vf = load_checkpoint(by_iter[it], fingerprint)
        history.append(vf.values.astype(dtype))
    return latest_it, history
