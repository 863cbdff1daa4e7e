"""Densities over the candidate set and bounded likelihood ratios.

Every density here has an exact, cheap ``pdf`` and a sampler driven by a
caller-owned :class:`numpy.random.Generator`.  ``pdf`` accepts a single point
of shape ``(d,)`` (returns a float) or a batch of shape ``(n, d)`` (returns an
array).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .geometry import HyperRect, PolytopeCross


def _check_theta(theta, dim: int) -> np.ndarray:
    x = np.asarray(theta, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise ValueError(f"theta must have trailing dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("theta has non-finite components")
    return x


def _out(values: np.ndarray, x: np.ndarray):
    return float(values) if x.ndim == 1 else values


class Density:
    """Interface shared by all densities."""

    kind: str = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def support(self):
        raise NotImplementedError

    def pdf(self, theta):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformDensity(Density):
    """Uniform density over a box or a polygon-cross-box region."""

    region: HyperRect | PolytopeCross

    @property
    def kind(self) -> str:
        return "uniform-box" if isinstance(self.region, HyperRect) else "uniform-polytope-cross"

    @property
    def dim(self) -> int:
        return self.region.dim

    @property
    def support(self):
        return self.region

    @property
    def value(self) -> float:
        return 1.0 / self.region.volume

    def pdf(self, theta):
        x = _check_theta(theta, self.dim)
        inside = np.asarray(self.region.contains(x))
        return _out(np.where(inside, self.value, 0.0), x)

    def sample(self, rng, size=None):
        return self.region.sample(rng, size)


@dataclass(frozen=True)
class TruncatedGaussianBox(Density):
    """Product of independent normals, each renormalized to its box interval.

    Sampling is exact per-coordinate inverse-CDF on the truncated interval.
    """

    center: np.ndarray
    sigma: np.ndarray
    box: HyperRect

    kind = "truncated-gaussian"

    def __post_init__(self):
        d = self.box.dim
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (d,)).copy()
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), (d,)).copy()
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValueError("sigma must be positive and finite")
        a = (self.box.lower - c) / s
        b = (self.box.upper - c) / s
        # evaluate the mass on the side of the mean where the CDF is least cancellation-prone
        flip = a > 0
        mass = np.where(flip, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
        if np.any(mass <= 0):
            raise ValueError("truncation interval carries no probability mass")
        log_norm = -np.log(mass) - np.log(s) - 0.5 * np.log(2 * np.pi)
        for name, val in (("center", c), ("sigma", s), ("_a", a), ("_b", b),
                          ("_flip", flip), ("_log_norm", log_norm)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def support(self):
        return self.box

    def pdf(self, theta):
        x = _check_theta(theta, self.dim)
        z = (x - self.center) / self.sigma
        logp = np.sum(self._log_norm - 0.5 * z * z, axis=-1)
        inside = np.asarray(self.box.contains(x))
        return _out(np.where(inside, np.exp(logp), 0.0), x)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        u = rng.random((n, self.dim))
        a, b, flip = self._a, self._b, self._flip
        # upper-tail intervals are mirrored so CDF values stay away from 1
        lo = np.where(flip, ndtr(-b), ndtr(a))
        hi = np.where(flip, ndtr(-a), ndtr(b))
        z = ndtri(lo + u * (hi - lo))
        z = np.where(flip, -z, z)
        z = np.clip(z, a, b)
        out = self.center + self.sigma * z
        return out[0] if size is None else out


@dataclass(frozen=True)
class DefensiveMixture(Density):
    """``alpha * surrogate + (1 - alpha) * nominal``."""

    alpha: float
    surrogate: Density
    nominal: Density

    kind = "mixture"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.surrogate.dim != self.nominal.dim:
            raise ValueError("surrogate and nominal live in different dimensions")

    @property
    def dim(self) -> int:
        return self.nominal.dim

    @property
    def support(self):
        return self.nominal.support

    def pdf(self, theta):
        return self.alpha * self.surrogate.pdf(theta) + (1.0 - self.alpha) * self.nominal.pdf(theta)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        pick = rng.random(n) < self.alpha
        out = np.empty((n, self.dim))
        k = int(pick.sum())
        if k:
            out[pick] = self.surrogate.sample(rng, k)
        if k < n:
            out[~pick] = self.nominal.sample(rng, n - k)
        return out[0] if size is None else out


@dataclass(frozen=True)
class LikelihoodRatio:
    """Importance weight ``nominal(theta) / proposal(theta)`` for a defensive mixture."""

    proposal: DefensiveMixture

    @property
    def nominal(self) -> Density:
        return self.proposal.nominal

    @property
    def w_max(self) -> float:
        return 1.0 / (1.0 - self.proposal.alpha)

    def __call__(self, theta):
        return likelihood_ratio(self, theta)


def likelihood_ratio(lr: LikelihoodRatio, theta):
    """Importance weight at ``theta``; raises if ``theta`` is outside C.

    Written as ``1 / (alpha * s/n + (1 - alpha))`` so that rounding can never
    push a weight above ``1 / (1 - alpha)``.
    """
    mix = lr.proposal
    x = _check_theta(theta, mix.dim)
    pn = np.asarray(mix.nominal.pdf(x), dtype=float)
    if np.any(pn <= 0):
        bad = x if x.ndim == 1 else x[np.argmax(pn <= 0)]
        raise ValueError(f"theta={bad.tolist()} lies outside the nominal support; weight undefined")
    ps = np.asarray(mix.surrogate.pdf(x), dtype=float)
    w = 1.0 / (mix.alpha * (ps / pn) + (1.0 - mix.alpha))
    return _out(w, x)


def pdf(density: Density, theta):
    return density.pdf(theta)


def sample(density: Density, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    return density.sample(rng, size)
