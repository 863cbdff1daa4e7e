"""Concentration bounds for certification.

Empirical Bernstein (Maurer-Pontil) for [0, 1] data, its importance-weighted
rescaling to [0, W_max], and binomial tail inversion for plain Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binom

RANGE_TOL = 1e-12


class BoundKind(str, Enum):
    EMPIRICAL_BERNSTEIN = "empirical-bernstein"
    WEIGHTED_BERNSTEIN = "weighted-bernstein"
    BINOMIAL_INVERSION = "binomial-inversion"


@dataclass(frozen=True)
class SampleStats:
    n: int
    mean: float
    variance: float
    max_weight: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("SampleStats needs at least one observation")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


@dataclass(frozen=True)
class CertBound:
    """A finite-sample claim ``P(P_fail <= epsilon) >= 1 - beta``."""

    epsilon: float
    beta: float
    n: int
    kind: BoundKind
    stats: SampleStats

    @property
    def epsilon_capped(self) -> float:
        return min(self.epsilon, 1.0)

    @property
    def slack(self) -> float:
        return self.epsilon - self.stats.mean


@dataclass(frozen=True)
class RunningStats:
    """Mergeable (count, mean, M2) accumulator.

    Merging follows Chan et al.; reducing a fixed sequence of blocks with
    :func:`tree_reduce` is independent of how the blocks were computed.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, xs) -> "RunningStats":
        x = np.asarray(xs, dtype=float).ravel()
        if x.size == 0:
            return cls()
        if np.all(x == x[0]):
            return cls(x.size, float(x[0]), 0.0)
        mu = float(np.mean(x))
        return cls(x.size, mu, float(np.sum((x - mu) ** 2)))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        if delta == 0.0:
            return RunningStats(n, self.mean, self.m2 + other.m2)
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        if self.count < 2:
            raise ValueError("variance needs at least two observations")
        return self.m2 / (self.count - 1)


def tree_reduce(items: Sequence, combine):
    """Pairwise reduction with a shape fixed by ``len(items)`` alone."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [combine(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _finite_array(xs, min_len: int) -> np.ndarray:
    x = np.asarray(xs, dtype=float).ravel()
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("observations must be finite")
    return x


def pair_variance(xs) -> float:
    """Sample variance in pair form, ``sum_{i<j} (x_i - x_j)^2 / (N (N - 1))``.

    Evaluated through the identity with the unbiased variance, which is the
    same quantity in O(N).
    """
    x = _finite_array(xs, 2)
    return RunningStats.of(x).variance


def _log_term(beta: float) -> float:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return math.log(2.0 / beta)


def _bernstein_epsilon(mean: float, var: float, n: int, beta: float, scale: float) -> float:
    lg = _log_term(beta)
    return mean + math.sqrt(2.0 * var * lg / n) + 7.0 * lg * scale / (3.0 * (n - 1))


def empirical_bernstein(xs, beta: float) -> CertBound:
    """Upper confidence bound on the mean of i.i.d. [0, 1] variables."""
    x = _finite_array(xs, 2)
    if x.min() < -RANGE_TOL or x.max() > 1.0 + RANGE_TOL:
        raise ValueError("empirical Bernstein requires observations in [0, 1]")
    st = RunningStats.of(x)
    return bernstein_from_stats(SampleStats(st.count, st.mean, st.variance, 1.0), beta,
                                kind=BoundKind.EMPIRICAL_BERNSTEIN)


def weighted_pac_bound(zs, w_max: float, beta: float) -> CertBound:
    """Bound on ``P_fail`` from importance-weighted losses in ``[0, w_max]``.

    The lower-order term scales with ``w_max``; equivalently this is
    ``w_max`` times :func:`empirical_bernstein` applied to ``zs / w_max``.
    """
    z = _finite_array(zs, 2)
    if w_max < 1.0:
        raise ValueError("w_max must be at least 1")
    if z.min() < -RANGE_TOL or z.max() > w_max * (1.0 + RANGE_TOL):
        raise ValueError(f"weighted losses must lie in [0, {w_max}]: weight bound violated upstream")
    st = RunningStats.of(z)
    return bernstein_from_stats(SampleStats(st.count, st.mean, st.variance, w_max), beta)


def bernstein_from_stats(stats: SampleStats, beta: float,
                         kind: BoundKind = BoundKind.WEIGHTED_BERNSTEIN) -> CertBound:
    if stats.n < 2:
        raise ValueError("the Bernstein bound needs N >= 2")
    eps = _bernstein_epsilon(stats.mean, stats.variance, stats.n, beta, stats.max_weight)
    return CertBound(eps, beta, stats.n, kind, stats)


def log_binomial_cdf(k: int, m: int, e: float) -> float:
    """``log P(Bin(m, e) <= k)``.

    Uses scipy's binomial distribution (Boost incomplete beta); the cephes
    ``bdtr`` loses about 1e-11 relative accuracy for k close to m.
    """
    if e <= 0.0 or k >= m:
        return 0.0
    if e >= 1.0:
        return -math.inf
    return float(binom.logcdf(k, m, e))


def binomial_tail_inversion(k: int, m: int, beta: float) -> float:
    """Largest ``e`` with ``P(Bin(m, e) <= k) >= beta``.

    Bisection on [0, 1] until the bracket stops shrinking in floating point;
    the returned endpoint always satisfies the CDF condition.
    """
    if not (isinstance(k, (int, np.integer)) and isinstance(m, (int, np.integer))):
        raise TypeError("k and m must be integers")
    if m < 1 or not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m and m >= 1, got k={k}, m={m}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if k == m:
        return 1.0
    if beta == 1.0:
        # only e = 0 puts all mass on {X <= k < m}
        return 0.0
    log_beta = math.log(beta)
    lo, hi = 0.0, 1.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-17:
            break
        if log_binomial_cdf(k, m, mid) >= log_beta:
            lo = mid
        else:
            hi = mid
    return lo


def binomial_bound(k: int, m: int, beta: float) -> CertBound:
    eps = binomial_tail_inversion(k, m, beta)
    mean = k / m
    var = mean * (1 - mean) * m / (m - 1) if m > 1 else 0.0
    return CertBound(eps, beta, m, BoundKind.BINOMIAL_INVERSION, SampleStats(m, mean, var, 1.0))


def reduce_stats(blocks: Iterable[RunningStats]) -> RunningStats:
    return tree_reduce(list(blocks), RunningStats.merge)


__all__ = [
    "BoundKind", "SampleStats", "CertBound", "RunningStats", "tree_reduce", "reduce_stats",
    "pair_variance", "empirical_bernstein", "weighted_pac_bound", "bernstein_from_stats",
    "log_binomial_cdf", "binomial_tail_inversion", "binomial_bound",
]
