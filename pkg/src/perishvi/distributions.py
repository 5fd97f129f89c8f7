"""Exact discrete probability primitives.

Every routine works in log space where a product of large factors is
involved and only exponentiates at the end, so supports of a few hundred
points never underflow to NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ParameterError

PMF_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiscretePmf:
    """Probability mass over the integers ``0..support_max``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("pmf must be a non-empty vector")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ParameterError("pmf has negative or non-finite entries")
        total = probs.sum()
        if abs(total - 1.0) > PMF_TOLERANCE:
            raise ParameterError(f"pmf sums to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF draw: smallest d with cdf[d] > u, for u in [0, 1)."""
        cdf = self.cdf()
        out = np.searchsorted(cdf, u, side="right")
        return np.minimum(out, self.support_max)


def _require_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")


def truncated_gamma_demand_pmf(mu: float, cv: float, d_max: int) -> DiscretePmf:
    """Gamma demand rounded to the nearest integer, with the tail lumped at d_max.

    ``mu`` is the mean and ``cv`` the coefficient of variation, so the gamma
    shape is ``1/cv**2`` and the scale ``mu*cv**2``.
    """
    if mu <= 0 or cv <= 0:
        raise ParameterError(f"gamma demand needs mu > 0 and cv > 0, got {mu}, {cv}")
    if d_max < 1:
        raise ParameterError(f"d_max must be at least 1, got {d_max}")
    shape = 1.0 / cv**2
    scale = mu * cv**2
    edges = (np.arange(d_max + 1) - 0.5) / scale  # d - 1/2 for d = 0..d_max
    edges = np.maximum(edges, 0.0)
    lower = special.gammainc(shape, edges)
    upper = special.gammaincc(shape, edges)
    probs = np.empty(d_max + 1)
    # Differences of the lower CDF lose precision in the right tail, so switch
    # to differences of the survival function past the median.
    left = lower[1:] < 0.5
    probs[:-1] = np.where(left, lower[1:] - lower[:-1], upper[:-1] - upper[1:])
    probs[-1] = upper[-1]
    return DiscretePmf(np.maximum(probs, 0.0))


def poisson_log_pmf(k, mean: float) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if mean == 0:
        return np.where(k == 0, 0.0, -np.inf)
    return k * np.log(mean) - mean - special.gammaln(k + 1)


def poisson_pmf_cdf(mean: float, upper: int) -> tuple[np.ndarray, np.ndarray]:
    """Poisson pmf and cdf on ``0..upper``; mass above ``upper`` is not included."""
    if mean < 0:
        raise ParameterError(f"Poisson mean must be non-negative, got {mean}")
    if upper < 0:
        raise ParameterError(f"upper must be non-negative, got {upper}")
    probs = np.exp(poisson_log_pmf(np.arange(upper + 1), mean))
    return probs, np.cumsum(probs)


def poisson_sf(k, mean: float) -> np.ndarray:
    """P(X >= k) for Poisson(mean), accurate in the far tail."""
    k = np.asarray(k, dtype=np.float64)
    if mean == 0:
        return np.where(k <= 0, 1.0, 0.0)
    # P(X >= k) = P(Gamma(k, 1) <= mean) for integer k >= 1.
    return np.where(k <= 0, 1.0, special.gammainc(np.maximum(k, 1.0), mean))


def poisson_quantile(mean: float, q: float) -> int:
    """Smallest k with P(X <= k) >= q."""
    if mean < 0:
        raise ParameterError(f"Poisson mean must be non-negative, got {mean}")
    _require_probability("q", q)
    if q == 0 or mean == 0:
        return 0
    k = 0
    log_mean = np.log(mean)
    log_p = -mean
    cdf = 0.0
    while True:
        cdf += np.exp(log_p)
        if cdf >= q or cdf >= 1.0:
            return k
        k += 1
        log_p += log_mean - np.log(k)
        if k > mean + 50 * np.sqrt(mean) + 100:
            return k


def negbinom_log_pmf(k, n: float, p: float) -> np.ndarray:
    """Failures before the n-th success, n real (gamma-function form)."""
    k = np.asarray(k, dtype=np.float64)
    return (
        special.gammaln(k + n)
        - special.gammaln(n)
        - special.gammaln(k + 1)
        + n * np.log(p)
        + k * np.log1p(-p)
    )


def truncated_negbinom_pmf(n: float, delta: float, d_max: int) -> DiscretePmf:
    """Negative binomial with target ``n`` and mean ``delta``, tail lumped at d_max."""
    if n <= 0 or delta <= 0:
        raise ParameterError(f"negative binomial needs n > 0, delta > 0, got {n}, {delta}")
    if d_max < 1:
        raise ParameterError(f"d_max must be at least 1, got {d_max}")
    p = n / (n + delta)
    probs = np.empty(d_max + 1)
    probs[:-1] = np.exp(negbinom_log_pmf(np.arange(d_max), n, p))
    # P(X >= d_max) = I_{1-p}(d_max, n)
    probs[-1] = special.betainc(d_max, n, 1.0 - p)
    return DiscretePmf(probs)


def binomial_pmf(k: int, trials: int, rho: float) -> float:
    if trials < 0 or k < 0:
        raise ParameterError(f"binomial needs k >= 0 and trials >= 0, got {k}, {trials}")
    _require_probability("rho", rho)
    if k > trials:
        return 0.0
    return float(binomial_pmf_table(trials, rho)[k])


def binomial_pmf_table(trials: int, rho: float) -> np.ndarray:
    """Binomial pmf over ``0..trials``."""
    k = np.arange(trials + 1, dtype=np.float64)
    if rho == 0.0:
        return (k == 0).astype(np.float64)
    if rho == 1.0:
        return (k == trials).astype(np.float64)
    log_p = (
        special.gammaln(trials + 1)
        - special.gammaln(k + 1)
        - special.gammaln(trials - k + 1)
        + k * np.log(rho)
        + (trials - k) * np.log1p(-rho)
    )
    return np.exp(log_p)


def multinomial_pmf(counts, probs) -> float:
    counts = np.asarray(counts, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if counts.shape != probs.shape:
        raise ParameterError(
            f"counts and probs differ in length: {counts.shape} vs {probs.shape}"
        )
    if np.any(counts < 0) or np.any(probs < 0):
        raise ParameterError("counts and probs must be non-negative")
    if abs(probs.sum() - 1.0) > PMF_TOLERANCE:
        raise ParameterError(f"category probabilities sum to {probs.sum()!r}")
    used = counts > 0
    if np.any(probs[used] == 0):
        return 0.0
    log_p = special.gammaln(counts.sum() + 1) - special.gammaln(counts + 1).sum()
    log_p += np.sum(counts[used] * np.log(probs[used]))
    return float(np.exp(log_p))


def compositions(total_max: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` with sum <= total_max.

    Rows are in lexicographic order, first column most significant.
    """
    if parts == 0:
        return np.zeros((1, 0), dtype=np.int64)
    rows = []
    for head in range(total_max + 1):
        tail = compositions(total_max - head, parts - 1)
        block = np.empty((tail.shape[0], parts), dtype=np.int64)
        block[:, 0] = head
        block[:, 1:] = tail
        rows.append(block)
    return np.concatenate(rows)


def n_compositions(total_max: int, parts: int) -> int:
    """Count of vectors enumerated by :func:`compositions`, C(total_max + parts, parts)."""
    from math import comb

    return comb(total_max + parts, parts)
