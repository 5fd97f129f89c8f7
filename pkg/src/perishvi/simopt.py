"""Fitting heuristic policy parameters by simulation.

Two searches are provided: an exhaustive grid for small integer spaces and a
genetic algorithm for larger ones.  Both score every candidate on the same
common-random-number rollouts and maximise the mean return.
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .mdp import InventoryMDP
from .simulate import Policy, RolloutConfig, evaluate_candidates, heuristic_policy, mean_sd

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    """Integer box ``lower[i] <= x[i] <= upper[i]`` with named coordinates."""

    names: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if not len(self.names) == len(self.lower) == len(self.upper):
            raise ParameterError("names, lower and upper must have the same length")
        for n, lo, hi in zip(self.names, self.lower, self.upper):
            if lo > hi:
                raise ParameterError(f"empty range for {n}: {lo} > {hi}")

    @classmethod
    def for_model(cls, model: InventoryMDP) -> "SearchSpace":
        bounds = np.asarray(model.heuristic_bounds(), dtype=np.int64)
        return cls(tuple(model.heuristic_names()), tuple(int(x) for x in bounds[:, 0]),
                   tuple(int(x) for x in bounds[:, 1]))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return int(np.prod([hi - lo + 1 for lo, hi in zip(self.lower, self.upper)],
                           dtype=object))

    def grid(self) -> np.ndarray:
        axes = [range(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, self.dim)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.int64), self.lower, self.upper)


@dataclass
class SearchRecord:
    generation: int
    params: tuple
    mean: float
    sd: float


@dataclass
class SearchResult:
    best_params: np.ndarray
    best_mean: float
    best_sd: float
    evaluations: int
    generations: int
    wall_seconds: float
    history: list = field(default_factory=list)

    def named(self, space: SearchSpace) -> dict:
        return {n: int(v) for n, v in zip(space.names, self.best_params)}


def _better(mean_a, params_a, mean_b, params_b) -> bool:
    """Higher mean wins; exact ties go to the lexicographically smaller vector."""
    if mean_a != mean_b:
        return mean_a > mean_b
    return tuple(params_a) < tuple(params_b)


class ModelEvaluator:
    """Scores heuristic parameter vectors on a model's shared rollouts.

    Called with a list of integer vectors, returns ``(mean, sd)`` per vector.
    """

    def __init__(self, model: InventoryMDP, cfg: RolloutConfig | None = None, kernel=None):
        self.model = model
        self.cfg = cfg or RolloutConfig(n_rollouts=4000)
        self.kernel = kernel or model.heuristic_kernel()

    def __call__(self, candidates) -> list[tuple[float, float]]:
        params = np.array([np.asarray(c, dtype=np.float64) for c in candidates])
        returns, _ = evaluate_candidates(self.model, self.kernel, params, self.cfg)
        return [mean_sd(row) for row in returns]


class _Memo:
    """Evaluates each distinct vector once."""

    def __init__(self, evaluator):
        self.evaluator = evaluator
        self.scores: dict = {}

    def __call__(self, candidates) -> list[tuple[float, float]]:
        keys = [tuple(int(v) for v in c) for c in candidates]
        fresh = list(dict.fromkeys(k for k in keys if k not in self.scores))
        if fresh:
            for key, score in zip(fresh, self.evaluator(fresh)):
                self.scores[key] = (float(score[0]), float(score[1]))
        return [self.scores[k] for k in keys]


def grid_search(space: SearchSpace, evaluator, batch: int = 64) -> SearchResult:
    """Score every point of ``space``; the full table is in ``history``."""
    t0 = time.perf_counter()
    memo = _Memo(evaluator)
    grid = space.grid()
    history = []
    best = None
    for start in range(0, grid.shape[0], batch):
        chunk = grid[start:start + batch]
        for x, (mu, sd) in zip(chunk, memo(chunk)):
            history.append(SearchRecord(0, tuple(int(v) for v in x), mu, sd))
            if best is None or _better(mu, x, best[1], best[0]):
                best = (x.copy(), mu, sd)
    return SearchResult(best[0], best[1], best[2], len(memo.scores), 1,
                        time.perf_counter() - t0, history)


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    max_generations: int = 100
    patience: int = 5
    tournament: int = 2
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # per gene; None means 1 / dim
    elites: int = 1
    creep_prob: float = 0.5  # share of mutations that step by +-1..creep_step
    creep_step: int = 2
    survivors: str = "plus"  # "plus": best of parents and children; "generational"
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ParameterError("population must be >= 2")
        if self.max_generations < 1 or self.patience < 1:
            raise ParameterError("max_generations and patience must be >= 1")
        if not 1 <= self.tournament <= self.population:
            raise ParameterError("tournament size must lie in [1, population]")
        if not 0 <= self.elites < self.population:
            raise ParameterError("elites must lie in [0, population)")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ParameterError("crossover_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0.0 <= self.mutation_prob <= 1.0:
            raise ParameterError("mutation_prob must lie in [0, 1]")
        if not 0.0 <= self.creep_prob <= 1.0 or self.creep_step < 1:
            raise ParameterError("creep_prob must lie in [0, 1] and creep_step be >= 1")
        if self.survivors not in ("plus", "generational"):
            raise ParameterError(f"survivors must be plus or generational, got {self.survivors!r}")


def ga_search(space: SearchSpace, evaluator, ga: GaConfig | None = None,
              callback=None) -> SearchResult:
    """Genetic search over an integer box, maximising mean score.

    Parents are chosen by tournament, combined by uniform crossover and
    mutated gene by gene (a fresh uniform draw, or a small step).  With
    ``survivors="plus"`` the next population is the best of parents and
    children; otherwise children replace parents apart from the elites.
    Stops once the best vector has not changed for ``ga.patience``
    generations, or after ``ga.max_generations``.
    """
    ga = ga or GaConfig()
    rng = np.random.default_rng(ga.seed)
    lo = np.array(space.lower, dtype=np.int64)
    hi = np.array(space.upper, dtype=np.int64)
    p_mut = ga.mutation_prob if ga.mutation_prob is not None else 1.0 / space.dim
    t0 = time.perf_counter()
    memo = _Memo(evaluator)

    def rank_key(x):
        return (-memo.scores[tuple(int(v) for v in x)][0], tuple(int(v) for v in x))

    def breed(pop):
        def pick():
            entrants = rng.choice(len(pop), size=ga.tournament, replace=False)
            return pop[min(entrants, key=lambda i: rank_key(pop[i]))]

        a, b = pick(), pick()
        if rng.random() < ga.crossover_prob:
            child = np.where(rng.random(space.dim) < 0.5, a, b)
        else:
            child = a.copy()
        mutate = rng.random(space.dim) < p_mut
        creep = rng.random(space.dim) < ga.creep_prob
        step = rng.integers(1, ga.creep_step + 1, space.dim) * rng.choice([-1, 1], space.dim)
        reset = rng.integers(lo, hi + 1)
        child = np.where(mutate, np.where(creep, np.clip(child + step, lo, hi), reset), child)
        return np.asarray(child, dtype=np.int64)

    pop = [rng.integers(lo, hi + 1) for _ in range(ga.population)]
    history = []
    best = None
    stale = 0
    generation = 0
    for generation in range(ga.max_generations):
        scores = memo(pop)
        previous = None if best is None else tuple(best[0])
        for x, (mu, sd) in zip(pop, scores):
            history.append(SearchRecord(generation, tuple(int(v) for v in x), mu, sd))
            if best is None or _better(mu, x, best[1], best[0]):
                best = (np.array(x), mu, sd)
        if callback is not None:
            callback(generation, best)
        log.info("generation %d best %s mean %.3f", generation, tuple(best[0]), best[1])
        stale = 0 if tuple(best[0]) != previous else stale + 1
        if stale >= ga.patience or generation + 1 == ga.max_generations:
            break
        ranked = sorted(pop, key=rank_key)
        if ga.survivors == "plus":
            children = [breed(pop) for _ in range(ga.population)]
            memo(children)
            pool = {tuple(int(v) for v in x): x for x in ranked + children}
            pop = sorted(pool.values(), key=rank_key)[:ga.population]
            while len(pop) < ga.population:
                pop.append(pop[len(pop) % len(pool)].copy())
        else:
            nxt = [x.copy() for x in ranked[:ga.elites]]
            while len(nxt) < ga.population:
                nxt.append(breed(pop))
            pop = nxt
    return SearchResult(best[0], best[1], best[2], len(memo.scores), generation + 1,
                        time.perf_counter() - t0, history)


def enforce_constraints(model: InventoryMDP, candidate) -> Policy:
    """Policy for a candidate vector, valid for every point of the search box.

    Weekday (s, S) rules with ``s >= S`` are not rejected: the policy kernel
    simply never orders on that weekday.
    """
    x = np.asarray(candidate, dtype=np.int64)
    space = SearchSpace.for_model(model)
    if x.shape != (space.dim,) or not space.contains(x):
        raise ParameterError(f"candidate {tuple(x)} lies outside the search box")
    return heuristic_policy(model, x)


def fit_heuristic(model: InventoryMDP, cfg: RolloutConfig | None = None,
                  ga: GaConfig | None = None, method: str = "auto",
                  callback=None) -> SearchResult:
    """Grid search for one-parameter heuristics, GA otherwise."""
    space = SearchSpace.for_model(model)
    evaluator = ModelEvaluator(model, cfg)
    if method == "auto":
        method = "grid" if space.dim == 1 else "ga"
    if method == "grid":
        return grid_search(space, evaluator)
    if method == "ga":
        return ga_search(space, evaluator, ga, callback)
    raise ParameterError(f"unknown search method {method!r}")


def write_search_log(path, history, space: SearchSpace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", *space.names, "mean", "sd"])
        for rec in history:
            w.writerow([rec.generation, *rec.params, f"{rec.mean:.6f}", f"{rec.sd:.6f}"])
