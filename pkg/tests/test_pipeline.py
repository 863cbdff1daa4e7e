import math

import numpy as np
import pytest

from viscert import io
from viscert.config import RunConfig
from viscert.distributions import UniformDensity
from viscert.geometry import FailureSet, GeometryError, HyperRect, Polytope2D
from viscert.gp import OracleCallError
from viscert.pipeline import (BLOCK_SIZE, PipelineError, WeightBoundError, alpha_tag, build_problem,
                              build_surrogate, certify_is, certify_mc, convergence_study,
                              fit_loglog_slope, mc_estimate, run_alg1)
from viscert.systems import SyntheticOracle, quadrotor_candidate_box

LINE = HyperRect([0.0], [1.0])
STRIP_1D = HyperRect([0.0], [0.1])
UNIT = HyperRect([0.0, 0.0], [1.0, 1.0])
STRIP = [[0.0, 0.0], [0.05, 0.0], [0.05, 1.0], [0.0, 1.0]]


def zero_oracle(theta, rng=None):
    return np.zeros(len(theta), dtype=np.int8)


def envelope(n, beta, w_max, p=0.05):
    """Upper envelope for the certified bound when the truth is ``p``.

    Z lies in [0, w_max] with mean p, so Var Z <= w_max * p; the sample
    variance and the sample mean each contribute at most one more sqrt term.
    """
    lg = math.log(2 / beta)
    return p + 2 * math.sqrt(2 * w_max * p * lg / n) + 7 * lg * w_max / (3 * (n - 1))


def test_surrogate_density_on_strip():
    fs = FailureSet((0, 1), Polytope2D([[0, 0], [0.1, 0], [0.1, 1], [0, 1]]), UNIT)
    dens = build_surrogate(fs)
    assert dens.pdf([0.05, 0.5]) == pytest.approx(10.0)
    assert dens.pdf([0.5, 0.5]) == 0.0


def test_surrogate_density_quadrotor():
    box = quadrotor_candidate_box()
    poly = Polytope2D([[-0.4, -0.4], [0.0, -0.4], [-0.4, 0.0]])
    dens = build_surrogate(FailureSet((2, 5), poly, box))
    sides = box.widths
    rest = np.prod([sides[i] for i in range(12) if i not in (2, 5)])
    theta = np.zeros(12)
    theta[2] = theta[5] = -0.3
    assert dens.pdf(theta) == pytest.approx(1 / (poly.area * rest), rel=1e-12)


def test_surrogate_rejects_degenerate_polygon():
    with pytest.raises(GeometryError):
        Polytope2D([[0, 0], [1, 0], [2, 0]])


def test_is_unbiased_on_1d_problem():
    nominal, surrogate = UniformDensity(LINE), UniformDensity(STRIP_1D)
    rep = certify_is(SyntheticOracle(1), nominal, surrogate, 0.5, 0.05, 10**4, seed=3)
    se = math.sqrt(rep.var_z / rep.n)
    assert abs(rep.mean_z - 0.05) <= 3 * se
    # failures inside the surrogate carry weight 1 / (0.5 * 10 + 0.5) = 2/11
    assert rep.max_weight == pytest.approx(2.0, rel=1e-12)
    assert rep.mean_z * rep.n / rep.failure_count == pytest.approx(2 / 11, rel=1e-12)


def test_is_zero_loss():
    nominal, surrogate = UniformDensity(LINE), UniformDensity(STRIP_1D)
    n, beta, alpha = 500, 0.05, 0.35
    rep = certify_is(zero_oracle, nominal, surrogate, alpha, beta, n, seed=0)
    assert rep.mean_z == 0.0
    assert rep.epsilon == pytest.approx(7 * math.log(2 / beta) / (1 - alpha) / (3 * (n - 1)), rel=1e-14)


def test_is_with_surrogate_equal_to_nominal():
    nominal = UniformDensity(UNIT)
    rep = certify_is(SyntheticOracle(), nominal, nominal, 0.5, 0.05, 5000, seed=4)
    assert rep.max_weight == 1.0
    assert rep.mean_z == rep.failure_count / rep.n


def test_is_preconditions():
    nominal = UniformDensity(LINE)
    with pytest.raises(ValueError):
        certify_is(zero_oracle, nominal, nominal, 0.0, 0.05, 100, 0)
    with pytest.raises(ValueError):
        certify_is(zero_oracle, nominal, nominal, 0.5, 0.05, 1, 0)


def test_weight_violation_aborts(monkeypatch):
    import viscert.pipeline as pl

    def inflated(lr, theta):
        return np.full(len(theta), 10.0)

    monkeypatch.setattr(pl, "likelihood_ratio", inflated)
    with pytest.raises(WeightBoundError):
        certify_is(zero_oracle, UniformDensity(LINE), UniformDensity(STRIP_1D), 0.5, 0.05, 100, 0)


def test_oracle_error_carries_theta():
    def picky(theta, rng):
        if np.any(theta[:, 0] > 0.9):
            raise RuntimeError("simulator diverged")
        return np.zeros(len(theta))

    with pytest.raises(OracleCallError) as info:
        certify_mc(picky, UniformDensity(LINE), 0.05, 200, seed=0)
    assert info.value.theta[0] > 0.9


def test_nonbinary_oracle_rejected():
    with pytest.raises(OracleCallError, match="0/1"):
        certify_mc(lambda t, r: np.full(len(t), 0.5), UniformDensity(LINE), 0.05, 10, seed=0)


def test_mc_zero_failures_closed_form():
    for n in (1, 50, 3000):
        rep = certify_mc(zero_oracle, UniformDensity(LINE), 0.05, n, seed=1)
        assert rep.failure_count == 0
        assert rep.epsilon == pytest.approx(1 - 0.05 ** (1 / n), abs=1e-12)


def test_mc_failure_rate():
    n = 10**5
    rep = certify_mc(SyntheticOracle(), UniformDensity(UNIT), 0.05, n, seed=2)
    assert abs(rep.failure_count / n - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / n)
    assert rep.failure_count <= n
    assert math.isfinite(rep.epsilon)


def test_mc_beta_one():
    assert certify_mc(zero_oracle, UniformDensity(LINE), 1.0, 100, seed=0).epsilon == 0.0


def test_reference_estimate_matches_truth():
    assert mc_estimate(SyntheticOracle(), UniformDensity(UNIT), 2 * 10**5, seed=5) == pytest.approx(0.05, abs=0.003)


def test_results_independent_of_workers():
    nominal, surrogate = UniformDensity(UNIT), build_surrogate(FailureSet((0, 1), Polytope2D(STRIP), UNIT))
    n = 3 * BLOCK_SIZE + 17
    a = certify_is(SyntheticOracle(), nominal, surrogate, 0.3, 0.05, n, seed=6, workers=1)
    b = certify_is(SyntheticOracle(), nominal, surrogate, 0.3, 0.05, n, seed=6, workers=2)
    assert a.to_lines() == b.to_lines()


def test_report_lines_exclude_wall_time():
    rep = certify_mc(zero_oracle, UniformDensity(LINE), 0.05, 10, seed=0)
    keys = [line.split("=")[0] for line in rep.to_lines()]
    assert "wall_time" not in keys
    assert {"epsilon", "epsilon_capped", "beta", "n", "w_max", "seed"} <= set(keys)
    assert rep.summary().startswith("mc epsilon=")


def test_build_problem_variants():
    syn = build_problem(RunConfig(system="synthetic"))
    assert syn.true_probability == pytest.approx(0.05)
    acc = build_problem(RunConfig(system="acc"))
    assert acc.window_region.contains([10.0, 10.0])
    quad = build_problem(RunConfig(system="quadrotor"))
    assert quad.projection_dims == (2, 5)
    assert quad.nominal.kind == "truncated-gaussian"
    with pytest.raises(ValueError):
        build_problem(RunConfig(system="synthetic", candidate_set={"lower": [0], "upper": [1]}))


def test_alpha_tags():
    assert alpha_tag(0.15) == "0p15"
    assert alpha_tag(0.35) == "0p35"


def test_loglog_slope():
    m = np.array([1e3, 1e4, 1e5, 1e6])
    assert fit_loglog_slope(m, 3 * m ** -0.5) == pytest.approx(-0.5)


def test_alg1_zero_budget_fails_first_stage():
    cfg = RunConfig(system="synthetic", gp={"budget": 0})
    with pytest.raises(PipelineError, match=r"^\[compute_failure_set\].*budget"):
        run_alg1(cfg)


def test_alg1_writes_artifacts(tmp_path):
    cfg = RunConfig(system="acc", certification={"n": 2000, "seed": 1})
    failure, surrogate, report, exploration = run_alg1(cfg, outdir=tmp_path)
    for name in ("gp_samples.csv", "gp_grid.csv", "gp_polytope.csv", "candidate_polytope.csv",
                 "failure_set.json", "report.txt"):
        assert (tmp_path / name).exists(), name
    header, rows = io.read_csv(tmp_path / "gp_grid.csv")
    assert header == ["h", "v", "mean"] and len(rows) == 2500
    assert io.read_report(tmp_path / "report.txt")["is.estimator"] == "is"
    assert report.max_weight <= report.w_max + 1e-12
    assert exploration.samples.labels.size == 200


def test_alg1_acc_bound_shrinks_on_doubling_ladder():
    cfg = RunConfig(system="acc", certification={"seed": 2})
    problem = build_problem(cfg)
    failure, surrogate, _, _ = run_alg1(cfg, problem)
    ladder = [500 * 2 ** i for i in range(11)]
    eps = [certify_is(problem.oracle, problem.nominal, surrogate, 0.1, 0.05, n, seed=2).epsilon
           for n in ladder]
    drops = sum(b < a for a, b in zip(eps, eps[1:]))
    assert drops >= 9


@pytest.mark.slow
def test_alg1_synthetic_coverage():
    beta, n = 0.05, 1000
    inside = 0
    for seed in range(100):
        cfg = RunConfig(system="synthetic", certification={"seed": seed, "beta": beta, "n": n})
        _, _, rep, _ = run_alg1(cfg)
        assert rep.max_weight <= rep.w_max + 1e-12
        inside += 0.05 <= rep.epsilon <= envelope(n, beta, rep.w_max)
    assert inside >= 95


def test_convergence_table_layout():
    cfg = RunConfig(system="synthetic", failure_set={"vertices": STRIP},
                    convergence={"alphas": [0.15, 0.35], "repetitions": 2})
    ladder = [1000, 3000, 10000, 30000, 100000]
    table = convergence_study(cfg, ladder)
    assert table.columns == ["M", "true_prob", "mc_cp", "bound_is_0p15", "bound_is_0p35",
                             "excess_mc_cp", "excess_is_0p15", "excess_is_0p35", "slope_05", "slope_10"]
    assert [r["M"] for r in table.rows] == ladder
    assert all(r["true_prob"] == 0.05 for r in table.rows)
    ref = [r["slope_05"] for r in table.rows]
    assert fit_loglog_slope(ladder, ref) == pytest.approx(-0.5)
    assert set(table.slopes) == {"mc_cp", "is_0p15", "is_0p35"}


@pytest.mark.slow
def test_convergence_bounds_mostly_decrease():
    cfg = RunConfig(system="synthetic", failure_set={"vertices": STRIP},
                    convergence={"alphas": [0.15, 0.35], "repetitions": 3}, certification={"seed": 5})
    table = convergence_study(cfg)
    for col in ("mc_cp", "bound_is_0p15", "bound_is_0p35"):
        vals = [r[col] for r in table.rows]
        assert sum(b <= a for a, b in zip(vals, vals[1:])) >= 0.8 * (len(vals) - 1), col


def test_convergence_ladder_checks():
    cfg = RunConfig(system="synthetic", failure_set={"vertices": STRIP})
    with pytest.raises(ValueError, match="at least 4"):
        convergence_study(cfg, [1000, 10000, 100000])
    with pytest.raises(ValueError, match="increasing"):
        convergence_study(cfg, [1000, 500, 10000, 100000])


def test_failure_set_from_config_is_clipped_to_candidate():
    cfg = RunConfig(system="acc", failure_set={"vertices": [[-5, -5], [20, -5], [20, 20], [-5, 20]]},
                    certification={"n": 200})
    failure, _, _, exploration = run_alg1(cfg)
    assert exploration is None
    assert failure.polytope.area == pytest.approx(build_problem(cfg).window_region.area, rel=1e-9)
