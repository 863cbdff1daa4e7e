"""Least-squares GP classification for failure-boundary discovery.

Binary failure labels are regressed with an ordinary GP; the class score is
the posterior mean and the failure region is where it reaches 0.5.  Queries
are chosen gamma-greedily: uniform exploration with probability ``gamma``,
otherwise the Straddle minimizer over a random candidate pool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .geometry import HyperRect

log = logging.getLogger(__name__)

THRESHOLD = 0.5
JITTER_START = 1e-8
JITTER_MAX = 1e-2


class GPFactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential kernel with per-dimension lengthscales."""

    lengthscale: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if np.any(ls <= 0) or self.signal_variance <= 0:
            raise ValueError("lengthscales and signal variance must be positive")
        object.__setattr__(self, "lengthscale", ls)

    def __call__(self, a, b) -> np.ndarray:
        a = np.atleast_2d(a) / self.lengthscale
        b = np.atleast_2d(b) / self.lengthscale
        sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T)
        return self.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


class GPModel:
    """GP regression on binary labels with a cached Cholesky factor.

    ``mean`` returned by :meth:`posterior` is the class score ``m + m0``
    (prior mean plus posterior correction).
    """

    def __init__(self, kernel: Kernel, noise_variance: float = 0.05, prior_mean: float = 0.0):
        if noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        self.kernel = kernel
        self.noise_variance = float(noise_variance)
        self.prior_mean = float(prior_mean)
        d = kernel.lengthscale.size
        self.train_x = np.empty((0, d))
        self.train_y = np.empty(0)
        self._chol: np.ndarray | None = None
        self._alpha: np.ndarray | None = None
        self.jitter = 0.0

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def n(self) -> int:
        return len(self.train_y)

    def append(self, x, y) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.shape[1] != self.dim or len(x) != len(y):
            raise ValueError("training inputs and labels have inconsistent shapes")
        self.train_x = np.vstack([self.train_x, x])
        self.train_y = np.concatenate([self.train_y, y])
        self._refactor()

    def _refactor(self) -> None:
        if self.n == 0:
            self._chol = self._alpha = None
            return
        k = self.kernel(self.train_x, self.train_x)
        k[np.diag_indices_from(k)] += self.noise_variance
        jitter = JITTER_START * self.kernel.signal_variance
        while True:
            try:
                chol = np.linalg.cholesky(k + jitter * np.eye(self.n))
                break
            except np.linalg.LinAlgError:
                jitter *= 2.0
                if jitter > JITTER_MAX:
                    cond = np.linalg.cond(k)
                    raise GPFactorizationError(
                        f"Gram matrix not positive definite with jitter up to {JITTER_MAX:g} "
                        f"(n={self.n}, condition number={cond:.3e})") from None
        self.jitter = jitter
        self._chol = chol
        self._alpha = cho_solve((chol, True), self.train_y - self.prior_mean)

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior class score and standard deviation at ``x`` (shape (n, d))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        prior_var = self.kernel.signal_variance
        if self.n == 0:
            return np.full(len(x), self.prior_mean), np.full(len(x), np.sqrt(prior_var))
        ks = self.kernel(x, self.train_x)
        mean = self.prior_mean + ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = prior_var - np.sum(v * v, axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def log_marginal_likelihood(self) -> float:
        if self.n == 0:
            return 0.0
        r = self.train_y - self.prior_mean
        return float(-0.5 * r @ self._alpha - np.sum(np.log(np.diag(self._chol)))
                     - 0.5 * self.n * np.log(2 * np.pi))


def posterior(model: GPModel, x):
    """Single-point convenience wrapper returning ``(mean, std)`` floats."""
    m, s = model.posterior(x)
    if np.ndim(x) == 1:
        return float(m[0]), float(s[0])
    return m, s


def straddle_score(model: GPModel, x, kappa: float):
    """``|class_score - 0.5| - kappa * std``; lower is more informative."""
    m, s = model.posterior(x)
    score = np.abs(m - THRESHOLD) - kappa * s
    return float(score[0]) if np.ndim(x) == 1 else score


@dataclass(frozen=True)
class AcquisitionConfig:
    gamma: float = 0.1
    kappa: float = 1.96
    pool_size: int = 512
    budget: int = 200
    n_seed: int = 10

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        if self.budget < 1:
            raise ValueError(f"GP budget must be at least 1, got {self.budget}")
        if self.budget < self.n_seed:
            raise ValueError(f"GP budget {self.budget} is below the {self.n_seed} seed points")


def _project(theta: np.ndarray, dims) -> np.ndarray:
    return np.atleast_2d(theta)[:, list(dims)] if dims is not None else np.atleast_2d(theta)


def _choose(model, cfg, domain, rng, dims, pool=None):
    if rng.random() < cfg.gamma:
        return domain.sample(rng), True
    if pool is None:
        pool = domain.sample(rng, cfg.pool_size)
    scores = straddle_score(model, _project(pool, dims), cfg.kappa)
    return np.array(pool[int(np.argmin(scores))]), False


def select_query(model: GPModel, cfg: AcquisitionConfig, domain, rng: np.random.Generator,
                 projection_dims=None, pool: np.ndarray | None = None,
                 return_explored: bool = False):
    """Next query point in ``domain``.

    ``domain`` is anything with ``sample(rng, size)`` (a box or polygon
    region).  Scores are computed on the projected coordinates; ties go to the
    lowest pool index.  With ``return_explored`` the result is
    ``(theta, explored)`` where ``explored`` marks a uniform exploration draw.
    """
    theta, explored = _choose(model, cfg, domain, rng, projection_dims, pool)
    return (theta, explored) if return_explored else theta


@dataclass
class LabeledSamples:
    theta: np.ndarray
    labels: np.ndarray
    explored: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))


class OracleCallError(RuntimeError):
    def __init__(self, theta, cause: BaseException):
        super().__init__(f"oracle failed at theta={np.asarray(theta).tolist()}: {cause}")
        self.theta = np.asarray(theta)


def default_kernel(domain_box: HyperRect, scale: float = 0.2, signal_variance: float = 1.0) -> Kernel:
    return Kernel(scale * domain_box.widths, signal_variance)


def active_learn(oracle: Callable[[np.ndarray, np.random.Generator], np.ndarray], domain,
                 projection_dims, cfg: AcquisitionConfig, rng: np.random.Generator,
                 kernel: Kernel | None = None, noise_variance: float = 0.05,
                 prior_mean: float = 0.0) -> tuple[GPModel, LabeledSamples]:
    """Label exactly ``cfg.budget`` points and return the fitted GP.

    ``oracle(thetas, rng)`` maps an ``(n, d)`` batch to 0/1 labels.  The GP
    lives on the ``projection_dims`` coordinates of each query; the remaining
    coordinates are drawn uniformly from ``domain`` with the query.
    """
    dims = tuple(projection_dims) if projection_dims is not None else None
    if kernel is None:
        box = domain.bounds.project(dims) if dims is not None else domain.bounds
        kernel = default_kernel(box)
    model = GPModel(kernel, noise_variance, prior_mean)

    thetas, labels, explored = [], [], []

    def label(theta, was_explore):
        try:
            y = int(np.asarray(oracle(np.atleast_2d(theta), rng)).ravel()[0])
        except Exception as exc:
            raise OracleCallError(theta, exc) from exc
        if y not in (0, 1):
            raise OracleCallError(theta, ValueError(f"non-binary label {y}"))
        thetas.append(np.asarray(theta, dtype=float))
        labels.append(y)
        explored.append(was_explore)
        return y

    for theta in domain.sample(rng, cfg.n_seed):
        label(theta, True)
    model.append(_project(np.array(thetas), dims), labels)

    for _ in range(cfg.budget - cfg.n_seed):
        theta, was_explore = _choose(model, cfg, domain, rng, dims)
        y = label(theta, was_explore)
        model.append(_project(theta, dims), [y])

    log.debug("active learning done: %d labels, %d failures", len(labels), sum(labels))
    return model, LabeledSamples(np.array(thetas), np.array(labels, dtype=np.int8),
                                 np.array(explored, dtype=bool))


def grid(domain: HyperRect, resolution: int) -> np.ndarray:
    """Row-major grid: the second coordinate varies fastest."""
    if resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    if domain.dim != 2:
        raise ValueError("level sets are computed on 2-D domains")
    h = np.linspace(domain.lower[0], domain.upper[0], resolution)
    v = np.linspace(domain.lower[1], domain.upper[1], resolution)
    hh, vv = np.meshgrid(h, v, indexing="ij")
    return np.column_stack([hh.ravel(), vv.ravel()])


def level_set_points(model: GPModel, domain: HyperRect, grid_resolution: int = 50,
                     region=None) -> np.ndarray:
    """Grid points whose class score is at least 0.5.

    ``region`` optionally restricts the grid to a 2-D polygon (e.g. a
    non-rectangular candidate set).
    """
    pts = grid(domain, grid_resolution)
    if region is not None:
        pts = pts[np.asarray(region.contains(pts))]
    if len(pts) == 0:
        return pts
    mean, _ = model.posterior(pts)
    return pts[mean >= THRESHOLD]


def fit_hyperparameters(model: GPModel, lengthscale_factors=(0.5, 1.0, 2.0),
                        noise_grid=(0.01, 0.05, 0.1)) -> GPModel:
    """Grid search over lengthscale multipliers and noise by marginal likelihood."""
    best, best_ll = model, -np.inf
    for f in lengthscale_factors:
        for nv in noise_grid:
            cand = GPModel(Kernel(model.kernel.lengthscale * f, model.kernel.signal_variance),
                           nv, model.prior_mean)
            cand.append(model.train_x, model.train_y)
            ll = cand.log_marginal_likelihood()
            if ll > best_ll:
                best, best_ll = cand, ll
    return best
