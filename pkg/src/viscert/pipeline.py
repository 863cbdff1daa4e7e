"""Failure-set learning, surrogate construction and certification.

Sampling is organized in fixed-size blocks.  Block ``b`` of a run draws from
its own generator seeded by ``(seed, *run_tags, b)``, and per-block summaries
are combined with a pairwise tree whose shape depends only on the number of
blocks.  Results are therefore identical for any worker count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bounds import (BoundKind, CertBound, RunningStats, SampleStats, bernstein_from_stats,
                     binomial_bound, tree_reduce)
from .config import RunConfig
from .distributions import (Density, DefensiveMixture, LikelihoodRatio, TruncatedGaussianBox,
                            UniformDensity, likelihood_ratio)
from .geometry import (FailureSet, GeometryError, HyperRect, Polytope2D, PolytopeCross, clip,
                       convex_hull, inflate)
from . import gp as gpmod
from . import systems

log = logging.getLogger(__name__)

BLOCK_SIZE = 2048
WEIGHT_TOL = 1e-12

# run tags keep the random streams of different stages disjoint
TAG_GP, TAG_IS, TAG_MC, TAG_REFERENCE, TAG_LADDER_MC, TAG_LADDER_IS = range(6)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class WeightBoundError(RuntimeError):
    pass


def block_rng(seed: int, tags: Sequence[int], block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags), int(block)]))


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK_SIZE, n - b * BLOCK_SIZE)) for b in range((n + BLOCK_SIZE - 1) // BLOCK_SIZE)]


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(frozen=True)
class BlockSummary:
    stats: RunningStats
    failures: int
    max_weight: float

    def merge(self, other: "BlockSummary") -> "BlockSummary":
        return BlockSummary(self.stats.merge(other.stats), self.failures + other.failures,
                            max(self.max_weight, other.max_weight))


def _losses(oracle, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Batch oracle call; on failure, locate the first offending theta."""
    try:
        loss = np.asarray(oracle(theta, rng), dtype=float)
    except Exception as exc:
        for row in theta:
            try:
                oracle(row[None, :], np.random.default_rng(0))
            except Exception as inner:
                raise gpmod.OracleCallError(row, inner) from inner
        raise gpmod.OracleCallError(theta[0], exc) from exc
    if loss.shape != (len(theta),) or not np.all((loss == 0) | (loss == 1)):
        raise gpmod.OracleCallError(theta[0], ValueError("oracle must return one 0/1 loss per theta"))
    return loss


def _is_block(task) -> BlockSummary:
    oracle, proposal, seed, tags, block, size = task
    rng = block_rng(seed, tags, block)
    theta = proposal.sample(rng, size)
    w = np.asarray(likelihood_ratio(LikelihoodRatio(proposal), theta))
    loss = _losses(oracle, theta, rng)
    return BlockSummary(RunningStats.of(w * loss), int(loss.sum()), float(w.max()))


def _mc_block(task) -> BlockSummary:
    oracle, nominal, seed, tags, block, size = task
    rng = block_rng(seed, tags, block)
    theta = nominal.sample(rng, size)
    loss = _losses(oracle, theta, rng)
    return BlockSummary(RunningStats.of(loss), int(loss.sum()), 1.0)


@dataclass
class CertReport:
    estimator: str
    bound: CertBound
    alpha: float | None
    w_max: float
    n: int
    failure_count: int
    mean_z: float
    var_z: float
    seed: int
    max_weight: float
    wall_time: float = field(default=0.0, compare=False)

    @property
    def epsilon(self) -> float:
        return self.bound.epsilon

    def to_lines(self, prefix: str = "") -> list[str]:
        """Flat ``key=value`` lines; wall time is left out so replays are byte-identical."""
        fields = [
            ("estimator", self.estimator),
            ("kind", self.bound.kind.value),
            ("epsilon", self.bound.epsilon),
            ("epsilon_capped", self.bound.epsilon_capped),
            ("beta", self.bound.beta),
            ("n", self.n),
            ("alpha", "none" if self.alpha is None else self.alpha),
            ("w_max", self.w_max),
            ("failure_count", self.failure_count),
            ("mean_z", self.mean_z),
            ("var_z", self.var_z),
            ("max_weight", self.max_weight),
            ("seed", self.seed),
        ]
        return [f"{prefix}{k}={fmt(v)}" for k, v in fields]

    def summary(self) -> str:
        return (f"{self.estimator} epsilon={fmt(self.epsilon)} beta={fmt(self.bound.beta)} "
                f"n={self.n} w_max={fmt(self.w_max)}")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def build_surrogate(failure: FailureSet, ambient: HyperRect | None = None) -> UniformDensity:
    """Uniform density on the failure polygon times the rest of C's box."""
    ambient = failure.ambient if ambient is None else ambient
    if failure.polytope.area <= 0:
        raise GeometryError("failure polytope is degenerate")
    return UniformDensity(PolytopeCross(failure.polytope, failure.projection_dims, ambient))


def certify_is(oracle: Callable, nominal: Density, surrogate: Density, alpha: float, beta: float,
               n: int, seed: int, workers: int = 1, tags: Sequence[int] = (TAG_IS,)) -> CertReport:
    """Importance-sampled certification with the defensive mixture."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 2:
        raise ValueError("importance-sampled certification needs n >= 2")
    start = time.perf_counter()
    proposal = DefensiveMixture(alpha, surrogate, nominal)
    w_max = 1.0 / (1.0 - alpha)
    tasks = [(oracle, proposal, seed, tuple(tags), b, size) for b, size in _blocks(n)]
    total = tree_reduce(_map(_is_block, tasks, workers), BlockSummary.merge)
    if total.max_weight > w_max + WEIGHT_TOL:
        raise WeightBoundError(f"observed weight {total.max_weight} exceeds 1/(1-alpha) = {w_max}")
    st = total.stats
    stats = SampleStats(st.count, st.mean, st.variance, w_max)
    bound = bernstein_from_stats(stats, beta, BoundKind.WEIGHTED_BERNSTEIN)
    return CertReport("is", bound, alpha, w_max, n, total.failures, st.mean, st.variance, seed,
                      total.max_weight, time.perf_counter() - start)


def certify_mc(oracle: Callable, nominal: Density, beta: float, n: int, seed: int, workers: int = 1,
               tags: Sequence[int] = (TAG_MC,)) -> CertReport:
    """Plain Monte Carlo from the nominal density with binomial tail inversion."""
    if n < 1:
        raise ValueError("n must be at least 1")
    start = time.perf_counter()
    tasks = [(oracle, nominal, seed, tuple(tags), b, size) for b, size in _blocks(n)]
    total = tree_reduce(_map(_mc_block, tasks, workers), BlockSummary.merge)
    k = total.failures
    bound = binomial_bound(k, n, beta)
    var = total.stats.variance if n > 1 else 0.0
    return CertReport("mc", bound, None, 1.0, n, k, total.stats.mean, var, seed, 1.0,
                      time.perf_counter() - start)


def mc_estimate(oracle: Callable, nominal: Density, n: int, seed: int, workers: int = 1,
                tags: Sequence[int] = (TAG_REFERENCE,)) -> float:
    """Point estimate of P_fail from ``n`` nominal draws."""
    tasks = [(oracle, nominal, seed, tuple(tags), b, size) for b, size in _blocks(n)]
    total = tree_reduce(_map(_mc_block, tasks, workers), BlockSummary.merge)
    return total.failures / n


# ------------------------------------------------------------------ problems

@dataclass
class Problem:
    """Oracle, densities and sets describing one system."""

    name: str
    oracle: Callable
    candidate: HyperRect | PolytopeCross
    box: HyperRect
    nominal: Density
    projection_dims: tuple[int, int]
    state_names: tuple[str, ...]
    true_probability: float | None = None

    @property
    def window(self) -> HyperRect:
        return self.box.project(self.projection_dims)

    @property
    def window_region(self):
        """2-D region the failure polygon must stay inside."""
        if isinstance(self.candidate, PolytopeCross):
            return self.candidate.polytope
        return self.window.as_polytope()


def _nominal(cfg: RunConfig, region, box: HyperRect, default_kind: str) -> Density:
    spec = cfg.nominal
    kind = spec.kind if spec else default_kind
    if kind == "uniform":
        return UniformDensity(region)
    if not isinstance(region, HyperRect):
        raise ValueError("truncated Gaussian nominal requires a box candidate set")
    center = box.center if (spec is None or spec.center is None) else np.asarray(spec.center)
    sigma = 1.0 if spec is None else spec.sigma
    return TruncatedGaussianBox(center, np.asarray(sigma, dtype=float), box)


def build_problem(cfg: RunConfig) -> Problem:
    sp = dict(cfg.system_params)
    if cfg.system == "synthetic":
        box = (HyperRect(cfg.candidate_set.lower, cfg.candidate_set.upper) if cfg.candidate_set
               else HyperRect([0.0, 0.0], [1.0, 1.0]))
        if box.dim != 2:
            raise ValueError("the synthetic system is the 2-D failure strip")
        nominal = _nominal(cfg, box, box, "uniform")
        truth = None
        if isinstance(nominal, UniformDensity):
            lo, hi = box.lower[0], box.upper[0]
            truth = max(0.0, min(hi, systems.SYNTHETIC_THRESHOLD) - max(lo, 0.0)) / (hi - lo)
        dims = cfg.failure_set.projection_dims or (0, 1)
        return Problem("synthetic", systems.SyntheticOracle(2), box, box, nominal, dims,
                       ("theta0", "theta1"), truth)
    if cfg.system == "acc":
        params = systems.AccParams(**sp)
        box = HyperRect([0.0, 0.0], [params.gap_max, params.leader_max])
        region = PolytopeCross(systems.acc_candidate_set(params), (0, 1), box)
        nominal = _nominal(cfg, region, box, "uniform")
        dims = cfg.failure_set.projection_dims or (0, 1)
        return Problem("acc", systems.AccOracle(params), region, box, nominal, dims, systems.ACC_STATES)
    halfwidths = {k: sp.pop(k) for k in ("angle_halfwidth", "other_halfwidth") if k in sp}
    params = systems.QuadrotorParams(**sp)
    box = (HyperRect(cfg.candidate_set.lower, cfg.candidate_set.upper) if cfg.candidate_set
           else systems.quadrotor_candidate_box(**halfwidths))
    if box.dim != 12:
        raise ValueError("the quadrotor candidate box must be 12-dimensional")
    nominal = _nominal(cfg, box, box, "truncated_gaussian")
    dims = cfg.failure_set.projection_dims or (systems.H_INDEX, systems.VH_INDEX)
    return Problem("quadrotor", systems.QuadrotorOracle(params), box, box, nominal, dims,
                   systems.QUAD_STATES)


# ------------------------------------------------------------------ certification pipeline

@dataclass
class Exploration:
    failure_set: FailureSet
    model: gpmod.GPModel
    samples: gpmod.LabeledSamples
    level_points: np.ndarray
    grid: np.ndarray
    grid_mean: np.ndarray


def acquisition_config(cfg: RunConfig) -> gpmod.AcquisitionConfig:
    g = cfg.gp
    return gpmod.AcquisitionConfig(g.gamma, g.kappa, g.pool_size, g.budget, g.n_seed)


def failure_set_from_vertices(problem: Problem, vertices, margin: float = 0.0) -> FailureSet:
    poly = inflate(Polytope2D(vertices) if not isinstance(vertices, Polytope2D) else vertices, margin)
    poly = clip(poly, problem.window_region)
    return FailureSet(problem.projection_dims, poly, problem.box)


def compute_failure_set(problem: Problem, cfg: RunConfig) -> Exploration:
    """Active GP learning, then the convex hull of the 0.5 level set, clipped to C."""
    acq = acquisition_config(cfg)
    g = cfg.gp
    window = problem.window
    kernel = gpmod.Kernel(g.lengthscale if g.lengthscale is not None else g.lengthscale_scale * window.widths,
                          g.signal_variance)
    rng = block_rng(cfg.certification.seed, (TAG_GP,), 0)
    model, samples = gpmod.active_learn(problem.oracle, problem.candidate, problem.projection_dims, acq,
                                        rng, kernel, g.noise_variance, g.prior_mean)
    if g.optimize_hyperparameters:
        model = gpmod.fit_hyperparameters(model)
    clip_region = problem.window_region if isinstance(problem.candidate, PolytopeCross) else None
    pts = gpmod.level_set_points(model, window, g.grid_resolution, clip_region)
    grid_pts = gpmod.grid(window, g.grid_resolution)
    grid_mean, _ = model.posterior(grid_pts)
    if len(pts) < 3:
        raise GeometryError(f"GP level set has {len(pts)} points; no failure region to fit")
    hull = inflate(convex_hull(pts), cfg.failure_set.margin)
    poly = clip(hull, problem.window_region)
    return Exploration(FailureSet(problem.projection_dims, poly, problem.box), model, samples, pts,
                       grid_pts, grid_mean)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def run_alg1(cfg: RunConfig, problem: Problem | None = None, outdir=None):
    """Failure set, surrogate and importance-sampled certificate for one config.

    Returns ``(failure_set, surrogate, report, exploration)``; ``exploration``
    is ``None`` when the config supplies the failure polygon directly.
    """
    problem = build_problem(cfg) if problem is None else problem
    c = cfg.certification
    exploration = None
    if cfg.failure_set.vertices is not None:
        failure = _stage("compute_failure_set", failure_set_from_vertices, problem,
                         cfg.failure_set.vertices, cfg.failure_set.margin)
    else:
        exploration = _stage("compute_failure_set", compute_failure_set, problem, cfg)
        failure = exploration.failure_set
    surrogate = _stage("probability_distribution", build_surrogate, failure, problem.box)
    _stage("mixture", DefensiveMixture, c.alpha, surrogate, problem.nominal)
    report = _stage("IS_weighted_PAC", certify_is, problem.oracle, problem.nominal, surrogate,
                    c.alpha, c.beta, c.n, c.seed, cfg.workers)
    if outdir is not None:
        from . import io
        if exploration is not None:
            io.write_exploration(outdir, problem, exploration)
        io.write_failure_set(outdir, failure)
        io.write_reports(outdir, [report])
    return failure, surrogate, report, exploration


# ------------------------------------------------------------------ convergence

def alpha_tag(alpha: float) -> str:
    return f"{alpha:g}".replace(".", "p")


@dataclass
class ConvergenceTable:
    columns: list[str]
    rows: list[dict]
    slopes: dict[str, float]
    true_probability: float


def fit_loglog_slope(x, y) -> float:
    x = np.log10(np.asarray(x, dtype=float))
    y = np.log10(np.maximum(np.asarray(y, dtype=float), np.finfo(float).tiny))
    return float(np.polyfit(x, y, 1)[0])


def convergence_study(cfg: RunConfig, n_ladder: Sequence[int] | None = None,
                      problem: Problem | None = None, failure: FailureSet | None = None,
                      true_probability: float | None = None) -> ConvergenceTable:
    """Binomial and importance-sampled bounds along a ladder of sample sizes.

    Each ladder point is run ``repetitions`` times with independent streams;
    bounds and absolute excesses over the truth are averaged over repetitions.
    """
    ladder = list(cfg.convergence.ladder if n_ladder is None else n_ladder)
    if len(ladder) < 4:
        raise ValueError(f"the ladder needs at least 4 sample sizes, got {len(ladder)}")
    if any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] < 2:
        raise ValueError("the ladder must be strictly increasing with entries >= 2")
    problem = build_problem(cfg) if problem is None else problem
    if failure is None:
        if cfg.failure_set.vertices is not None:
            failure = failure_set_from_vertices(problem, cfg.failure_set.vertices, cfg.failure_set.margin)
        else:
            failure = compute_failure_set(problem, cfg).failure_set
    surrogate = build_surrogate(failure, problem.box)
    c, conv = cfg.certification, cfg.convergence
    truth = true_probability if true_probability is not None else problem.true_probability
    if truth is None:
        ref_n = conv.reference_n or 100 * ladder[-1]
        log.info("estimating reference failure probability from %d nominal draws", ref_n)
        truth = mc_estimate(problem.oracle, problem.nominal, ref_n, c.seed, cfg.workers)
    tags = [alpha_tag(a) for a in conv.alphas]
    reps = conv.repetitions
    mc_eps = np.zeros((len(ladder), reps))
    is_eps = np.zeros((len(ladder), len(tags), reps))
    for i, n in enumerate(ladder):
        for r in range(reps):
            mc_eps[i, r] = certify_mc(problem.oracle, problem.nominal, c.beta, n, c.seed, cfg.workers,
                                      tags=(TAG_LADDER_MC, r, i)).epsilon
            for j, a in enumerate(conv.alphas):
                is_eps[i, j, r] = certify_is(problem.oracle, problem.nominal, surrogate, a, c.beta, n,
                                             c.seed, cfg.workers, tags=(TAG_LADDER_IS, r, i, j)).epsilon
    excess_mc = np.abs(mc_eps - truth).mean(axis=1)
    excess_is = np.abs(is_eps - truth).mean(axis=2)
    m = np.asarray(ladder, dtype=float)
    slope_05 = excess_mc[0] * (m / m[0]) ** -0.5
    slope_10 = excess_is[0, 0] * (m / m[0]) ** -1.0
    columns = (["M", "true_prob", "mc_cp"] + [f"bound_is_{t}" for t in tags] + ["excess_mc_cp"]
               + [f"excess_is_{t}" for t in tags] + ["slope_05", "slope_10"])
    rows = []
    for i, n in enumerate(ladder):
        row = {"M": int(n), "true_prob": float(truth), "mc_cp": float(mc_eps[i].mean())}
        row.update({f"bound_is_{t}": float(is_eps[i, j].mean()) for j, t in enumerate(tags)})
        row["excess_mc_cp"] = float(excess_mc[i])
        row.update({f"excess_is_{t}": float(excess_is[i, j]) for j, t in enumerate(tags)})
        row["slope_05"], row["slope_10"] = float(slope_05[i]), float(slope_10[i])
        rows.append(row)
    slopes = {"mc_cp": fit_loglog_slope(m, excess_mc)}
    slopes.update({f"is_{t}": fit_loglog_slope(m, excess_is[:, j]) for j, t in enumerate(tags)})
    return ConvergenceTable(columns, rows, slopes, float(truth))
