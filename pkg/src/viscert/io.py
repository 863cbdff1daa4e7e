"""Artifact files: CSV tables, the failure-set descriptor and report text.

Floats are written with ``repr`` (shortest round-trip form) so that reruns
with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import FailureSet, Polytope2D

FAILURE_SET_FILE = "failure_set.json"
REPORT_FILE = "report.txt"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_polygon_csv(path, polytope: Polytope2D) -> Path:
    return write_csv(path, ["h", "v"], polytope.ring().tolist())


def write_failure_set(outdir, failure: FailureSet) -> Path:
    path = Path(outdir) / FAILURE_SET_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(failure.to_dict(), indent=2) + "\n")
    write_polygon_csv(Path(outdir) / "gp_polytope.csv", failure.polytope)
    return path


def read_failure_set(path) -> FailureSet:
    return FailureSet.from_dict(json.loads(Path(path).read_text()))


def write_exploration(outdir, problem, exploration) -> None:
    outdir = Path(outdir)
    dims = list(problem.projection_dims)
    s = exploration.samples
    proj = s.theta[:, dims]
    write_csv(outdir / "gp_samples.csv", ["h", "v", "label"],
              ([a, b, int(y)] for (a, b), y in zip(proj.tolist(), s.labels)))
    write_csv(outdir / "gp_grid.csv", ["h", "v", "mean"],
              ([a, b, m] for (a, b), m in zip(exploration.grid.tolist(), exploration.grid_mean.tolist())))
    region = problem.window_region
    if region is not None and problem.candidate is not problem.box:
        write_polygon_csv(outdir / "candidate_polytope.csv", region)


def write_reports(outdir, reports) -> Path:
    lines = []
    for rep in reports:
        lines.extend(rep.to_lines(prefix=f"{rep.estimator}."))
    path = Path(outdir) / REPORT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def write_convergence(path, table) -> Path:
    return write_csv(path, table.columns, ([row[c] for c in table.columns] for row in table.rows))


def write_trajectory(path, traj) -> Path:
    header = ["time", *traj.state_names]
    return write_csv(path, header, ([t, *x] for t, x in zip(traj.times.tolist(), traj.states.tolist())))
