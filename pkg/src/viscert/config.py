"""Run configuration: a JSON document validated against a fixed schema."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .systems import AccParams, QuadrotorParams

U64_MAX = 2**64 - 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoxSection(_Section):
    lower: list[float]
    upper: list[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.lower) != len(self.upper) or any(a >= b for a, b in zip(self.lower, self.upper)):
            raise ValueError("candidate box needs lower < upper componentwise")
        return self


class NominalSection(_Section):
    kind: Literal["uniform", "truncated_gaussian"] = "uniform"
    sigma: float | list[float] = 1.0
    center: Optional[list[float]] = None


class GPSection(_Section):
    lengthscale: Optional[list[float]] = None
    lengthscale_scale: float = Field(0.2, gt=0)
    signal_variance: float = Field(1.0, gt=0)
    noise_variance: float = Field(0.05, gt=0)
    prior_mean: float = 0.0
    gamma: float = Field(0.1, ge=0, le=1)
    kappa: float = Field(1.96, ge=0)
    # 0 is accepted here so that the precondition error surfaces at the failure-set stage
    budget: int = Field(200, ge=0)
    pool_size: int = Field(512, ge=1)
    grid_resolution: int = Field(50, ge=2)
    n_seed: int = Field(10, ge=1)
    optimize_hyperparameters: bool = False


class FailureSetSection(_Section):
    projection_dims: Optional[tuple[int, int]] = None
    margin: float = Field(0.0, ge=0)
    vertices: Optional[list[tuple[float, float]]] = None


class CertificationSection(_Section):
    alpha: float = Field(0.1, gt=0, lt=1)
    beta: float = Field(0.05, gt=0, le=1)
    n: int = Field(1000, ge=2)
    seed: int = Field(0, ge=0, le=U64_MAX)


class ConvergenceSection(_Section):
    ladder: list[int] = [1000, 3162, 10000, 31623, 100000, 316228, 1000000]
    alphas: list[float] = [0.15, 0.35]
    repetitions: int = Field(1, ge=1)
    reference_n: Optional[int] = Field(None, ge=1)

    @field_validator("alphas")
    @classmethod
    def _alphas(cls, v):
        if not v or any(not 0 < a < 1 for a in v):
            raise ValueError("alphas must be a nonempty list of values in (0, 1)")
        return v


class RunConfig(_Section):
    system: Literal["synthetic", "acc", "quadrotor"]
    system_params: dict = {}
    candidate_set: Optional[BoxSection] = None
    nominal: Optional[NominalSection] = None
    gp: GPSection = GPSection()
    failure_set: FailureSetSection = FailureSetSection()
    certification: CertificationSection = CertificationSection()
    convergence: ConvergenceSection = ConvergenceSection()
    output_dir: str = "out"
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_system(self):
        allowed = {"acc": AccParams, "quadrotor": QuadrotorParams}.get(self.system)
        names = {f.name for f in dataclasses.fields(allowed)} if allowed else set()
        if self.system == "quadrotor":
            names |= {"angle_halfwidth", "other_halfwidth"}
        unknown = set(self.system_params) - names
        if unknown:
            raise ValueError(f"unknown system_params for {self.system}: {sorted(unknown)}")
        if self.system == "acc" and self.candidate_set is not None:
            raise ValueError("the ACC candidate set is derived from the model; candidate_set is not allowed")
        return self

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with keys replaced; nested dicts update the named section."""
        data = self.model_dump()
        for key, val in sections.items():
            if val is None:
                continue
            if isinstance(val, dict):
                data[key] = {**data[key], **{k: v for k, v in val.items() if v is not None}}
            else:
                data[key] = val
        return RunConfig.model_validate(data)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.model_validate(json.load(fh))
