import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from viscert import io
from viscert.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
EPS_LINE = re.compile(r"^(is|mc) epsilon=(\S+) beta=(\S+) n=(\d+) w_max=(\S+)$")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_lines(out):
    found = {}
    for line in out.strip().splitlines():
        m = EPS_LINE.match(line)
        assert m, line
        found[m.group(1)] = float(m.group(2))
    return found


def test_explore_writes_files(tmp_path, capsys):
    code, out, _ = run(capsys, "explore", "--system", "synthetic", "--output-dir", tmp_path)
    assert code == 0
    for name in ("gp_samples.csv", "gp_grid.csv", "gp_polytope.csv", "failure_set.json"):
        assert (tmp_path / name).exists()
    header, rows = io.read_csv(tmp_path / "gp_polytope.csv")
    assert header == ["h", "v"]
    assert rows[0] == rows[-1]
    header, rows = io.read_csv(tmp_path / "gp_samples.csv")
    assert header == ["h", "v", "label"] and len(rows) == 200


def test_explore_zero_budget(tmp_path, capsys):
    code, _, err = run(capsys, "explore", "--system", "synthetic", "--output-dir", tmp_path, "--budget", "0")
    assert code != 0
    assert "compute_failure_set" in err and "budget" in err


def test_explore_is_replayable(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(capsys, "explore", "--config", CONFIGS / "synthetic.json", "--output-dir", out)[0] == 0
    for name in ("gp_samples.csv", "gp_grid.csv", "gp_polytope.csv", "failure_set.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_global_flags_before_subcommand(tmp_path, capsys):
    code, _, _ = run(capsys, "--system", "synthetic", "--output-dir", tmp_path, "--seed", "3",
                     "explore", "--budget", "20")
    assert code == 0
    assert json.loads((tmp_path / "failure_set.json").read_text())["projection_dims"] == [0, 1]


def test_certify_is_synthetic(tmp_path, capsys):
    assert run(capsys, "explore", "--system", "synthetic", "--output-dir", tmp_path)[0] == 0
    code, out, _ = run(capsys, "certify", "--system", "synthetic", "--output-dir", tmp_path,
                       "--estimator", "is", "--n", "10000", "--beta", "0.05")
    assert code == 0
    eps = parse_lines(out)
    assert list(eps) == ["is"]
    assert 0.05 < eps["is"] < 0.12


def test_certify_both_prints_two_lines(tmp_path, capsys):
    assert run(capsys, "explore", "--system", "synthetic", "--output-dir", tmp_path)[0] == 0
    code, out, _ = run(capsys, "certify", "--system", "synthetic", "--output-dir", tmp_path, "--n", "2000")
    assert code == 0
    assert list(parse_lines(out)) == ["is", "mc"]
    report = io.read_report(tmp_path / "report.txt")
    assert report["is.estimator"] == "is" and report["mc.estimator"] == "mc"
    assert float(report["is.w_max"]) == pytest.approx(1 / 0.9)


def test_certify_mc_without_failures(tmp_path, capsys):
    cfg = {"system": "synthetic", "candidate_set": {"lower": [0.5, 0.0], "upper": [1.0, 1.0]},
           "output_dir": str(tmp_path)}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "certify", "--config", path, "--estimator", "mc", "--n", "700")
    assert code == 0
    assert parse_lines(out)["mc"] == pytest.approx(1 - 0.05 ** (1 / 700), abs=1e-12)


def test_certify_missing_descriptor(tmp_path, capsys):
    code, _, err = run(capsys, "certify", "--system", "synthetic", "--output-dir", tmp_path, "--estimator", "is")
    assert code != 0
    assert "failure_set.json" in err


def test_certify_reports_identical_across_workers(tmp_path, capsys):
    cfg = CONFIGS / "synthetic.json"
    outs = []
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        assert run(capsys, "explore", "--config", cfg, "--output-dir", out)[0] == 0
        assert run(capsys, "certify", "--config", cfg, "--output-dir", out, "--workers", workers,
                   "--n", "9000")[0] == 0
        outs.append((out / "report.txt").read_bytes())
    assert outs[0] == outs[1]


def test_convergence_short_ladder_fails(tmp_path, capsys):
    code, _, err = run(capsys, "convergence", "--config", CONFIGS / "synthetic_convergence.json",
                       "--output-dir", tmp_path, "--ladder", "1000,10000,100000")
    assert code != 0
    assert "at least 4" in err


def test_convergence_csv_layout(tmp_path, capsys):
    code, out, _ = run(capsys, "convergence", "--config", CONFIGS / "synthetic_convergence.json",
                       "--output-dir", tmp_path, "--ladder", "1000,3000,10000,30000,100000",
                       "--repetitions", "1")
    assert code == 0
    assert "slope mc_cp=" in out and "slope is_0p9=" in out
    header, rows = io.read_csv(tmp_path / "convergence.csv")
    assert header == ["M", "true_prob", "mc_cp", "bound_is_0p9", "excess_mc_cp", "excess_is_0p9",
                      "slope_05", "slope_10"]
    assert len(rows) == 5
    m = [float(r[0]) for r in rows]
    ref05 = [float(r[header.index("slope_05")]) for r in rows]
    ref10 = [float(r[header.index("slope_10")]) for r in rows]
    for i in range(1, 5):
        assert ref05[i] / ref05[0] == pytest.approx((m[i] / m[0]) ** -0.5)
        assert ref10[i] / ref10[0] == pytest.approx((m[i] / m[0]) ** -1.0)


@pytest.mark.slow
def test_convergence_acc_is_steeper(tmp_path, capsys):
    code, out, _ = run(capsys, "convergence", "--config", CONFIGS / "acc.json", "--output-dir", tmp_path,
                       "--ladder", "1000,3162,10000,31623,100000,316228,1000000",
                       "--reference-n", "10000000")
    assert code == 0
    slopes = dict(re.findall(r"slope (\S+)=(\S+)", out))
    mc = float(slopes.pop("mc_cp"))
    assert slopes and all(float(s) < mc for s in slopes.values())


@pytest.mark.parametrize("system, theta, columns", [
    ("acc", "5,6", ["time", "gap", "v_leader", "v_follower"]),
    ("quadrotor", ",".join(["0"] * 12), ["time", "x", "y", "h", "vx", "vy", "vh", "roll", "pitch",
                                        "yaw", "p", "q", "r"]),
])
def test_simulate_dumps_trajectory(tmp_path, capsys, system, theta, columns):
    code, out, _ = run(capsys, "simulate", "--system", system, "--output-dir", tmp_path, "--theta", theta)
    assert code == 0
    assert out.startswith("loss=")
    header, rows = io.read_csv(tmp_path / "trajectory.csv")
    assert header == columns
    assert float(rows[0][0]) == 0.0


def test_simulate_synthetic_rejected(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--system", "synthetic", "--output-dir", tmp_path, "--theta", "0.1,0.2")
    assert code == 1


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"system": "synthetic", "certification": {"alpah": 0.2}}))
    code, _, err = run(capsys, "certify", "--config", path)
    assert code == 2
    assert "alpah" in err


def test_out_of_range_override(tmp_path, capsys):
    code, _, err = run(capsys, "certify", "--system", "synthetic", "--alpha", "1.5", "--output-dir", tmp_path)
    assert code == 2


def test_requires_config_or_system(capsys):
    code, _, err = run(capsys, "certify")
    assert code == 1
    assert "--config" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "viscert", "simulate", "--system", "acc",
                           "--output-dir", str(tmp_path), "--theta", "10,10", "--no-noise"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "loss=0"
