"""Command-line front end.

    viscert explore     --config cfg.json [--budget N]
    viscert certify     --config cfg.json [--estimator is|mc|both]
    viscert convergence --config cfg.json [--ladder 1000,10000,...]
    viscert simulate    --config cfg.json --theta a,b,...

Every command is a deterministic function of the config and seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import io, systems
from .config import RunConfig, load_config
from .pipeline import (PipelineError, _stage, block_rng, build_problem, build_surrogate, certify_is,
                       certify_mc, compute_failure_set, convergence_study, failure_set_from_vertices)

log = logging.getLogger("viscert")


class CliError(Exception):
    pass


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not overwrite values given before the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration", **kw)
    p.add_argument("--system", choices=["synthetic", "acc", "quadrotor"],
                   help="use built-in defaults for a system instead of a config file", **kw)
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)", **kw)
    p.add_argument("--output-dir", type=Path, help="directory for artifacts", **kw)
    p.add_argument("--workers", type=int, help="parallel processes for oracle evaluation", **kw)
    p.add_argument("-v", "--verbose", action="store_true", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    parser = argparse.ArgumentParser(prog="viscert", parents=[_common(suppress=False)],
                                     description="Certify failure probabilities of candidate viable initial sets.")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explore", parents=[common], help="learn the failure-prone set with a GP")
    ex.add_argument("--budget", type=int, help="number of oracle queries for the GP")

    ce = sub.add_parser("certify", parents=[common], help="bound the failure probability")
    ce.add_argument("--estimator", choices=["is", "mc", "both"], default="both")
    ce.add_argument("--n", type=int, help="number of samples")
    ce.add_argument("--alpha", type=float, help="defensive mixture weight")
    ce.add_argument("--beta", type=float, help="confidence parameter")
    ce.add_argument("--failure-set", type=Path, help="failure-set descriptor (default: OUTPUT_DIR/failure_set.json)")

    co = sub.add_parser("convergence", parents=[common], help="bound convergence over a sample-size ladder")
    co.add_argument("--ladder", help="comma-separated increasing sample sizes (at least 4)")
    co.add_argument("--repetitions", type=int)
    co.add_argument("--reference-n", type=int, help="nominal draws for the reference probability")

    si = sub.add_parser("simulate", parents=[common], help="dump one trajectory as CSV")
    si.add_argument("--theta", required=True, help="comma-separated initial condition")
    si.add_argument("--no-noise", action="store_true")
    return parser


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"cannot parse ladder {text!r}") from exc


def resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.system is not None:
        cfg = RunConfig(system=args.system)
    else:
        raise CliError("either --config or --system is required")
    cfg = cfg.with_overrides(
        output_dir=str(args.output_dir) if args.output_dir is not None else None,
        workers=args.workers,
        certification={"seed": args.seed,
                       "n": getattr(args, "n", None),
                       "alpha": getattr(args, "alpha", None),
                       "beta": getattr(args, "beta", None)},
        gp={"budget": getattr(args, "budget", None)},
        convergence={"repetitions": getattr(args, "repetitions", None),
                     "reference_n": getattr(args, "reference_n", None)},
    )
    return cfg


def cmd_explore(cfg: RunConfig) -> int:
    problem = build_problem(cfg)
    exploration = _stage("compute_failure_set", compute_failure_set, problem, cfg)
    out = Path(cfg.output_dir)
    io.write_exploration(out, problem, exploration)
    io.write_failure_set(out, exploration.failure_set)
    fs = exploration.failure_set
    print(f"failure set: {len(fs.polytope.vertices)} vertices, area={fs.polytope.area!r}, "
          f"labels={len(exploration.samples.labels)}, failures={int(exploration.samples.labels.sum())}")
    return 0


def _load_failure_set(cfg: RunConfig, problem, path: Path | None):
    if cfg.failure_set.vertices is not None:
        return failure_set_from_vertices(problem, cfg.failure_set.vertices, cfg.failure_set.margin)
    path = Path(cfg.output_dir) / io.FAILURE_SET_FILE if path is None else path
    if not path.exists():
        raise CliError(f"failure-set descriptor {path} not found; run `explore` first")
    return io.read_failure_set(path)


def cmd_certify(cfg: RunConfig, estimator: str = "both", failure_path: Path | None = None) -> int:
    problem = build_problem(cfg)
    c = cfg.certification
    reports = []
    if estimator in ("is", "both"):
        failure = _load_failure_set(cfg, problem, failure_path)
        surrogate = _stage("probability_distribution", build_surrogate, failure, problem.box)
        reports.append(_stage("IS_weighted_PAC", certify_is, problem.oracle, problem.nominal, surrogate,
                              c.alpha, c.beta, c.n, c.seed, cfg.workers))
    if estimator in ("mc", "both"):
        reports.append(_stage("binomial_MC", certify_mc, problem.oracle, problem.nominal, c.beta, c.n,
                              c.seed, cfg.workers))
    io.write_reports(cfg.output_dir, reports)
    for rep in reports:
        log.info("%s wall time %.3f s", rep.estimator, rep.wall_time)
        print(rep.summary())
    return 0


def cmd_convergence(cfg: RunConfig, ladder: list[int] | None = None) -> int:
    problem = build_problem(cfg)
    failure = None
    descriptor = Path(cfg.output_dir) / io.FAILURE_SET_FILE
    if cfg.failure_set.vertices is None and descriptor.exists():
        failure = io.read_failure_set(descriptor)
    table = convergence_study(cfg, ladder, problem=problem, failure=failure)
    io.write_convergence(Path(cfg.output_dir) / "convergence.csv", table)
    for name, slope in table.slopes.items():
        print(f"slope {name}={slope!r}")
    return 0


def cmd_simulate(cfg: RunConfig, theta_text: str, noise: bool = True) -> int:
    theta = np.array([float(x) for x in theta_text.split(",")])
    problem = build_problem(cfg)
    rng = block_rng(cfg.certification.seed, (99,), 0)
    if cfg.system == "acc":
        traj = systems.simulate_acc(theta, rng, problem.oracle.params, noise=noise)
        loss = int(np.any(traj.column("gap") <= 0))
    elif cfg.system == "quadrotor":
        traj = systems.simulate_quadrotor(theta, rng, problem.oracle.params, noise=noise)
        loss = systems.stl_monitor_quadrotor(traj)
    else:
        raise CliError("the synthetic system has no dynamics to simulate")
    io.write_trajectory(Path(cfg.output_dir) / "trajectory.csv", traj)
    print(f"loss={loss}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "explore":
            return cmd_explore(cfg)
        if args.command == "certify":
            return cmd_certify(cfg, args.estimator, args.failure_set)
        if args.command == "convergence":
            ladder = _parse_ints(args.ladder) if args.ladder else None
            return cmd_convergence(cfg, ladder)
        return cmd_simulate(cfg, args.theta, noise=not args.no_noise)
    except ValidationError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (CliError, PipelineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
