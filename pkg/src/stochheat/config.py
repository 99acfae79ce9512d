"""Experiment configuration: a YAML tree validated by pydantic.

Unknown keys are rejected at every level.  ``effective_yaml`` writes the
fully resolved tree, which parses back to an identical configuration.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import drift as drift_mod
from .solver import NoiseModel, SolverConfig
from .spectral import SineBasis, SpectralField


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainSettings(_Strict):
    d: int = Field(1, ge=1, le=3)
    K: int = Field(32, ge=1, le=512)
    length: float = Field(float(np.pi), gt=0)


class TimeSettings(_Strict):
    T: float = Field(1.0, gt=0)
    M: int = Field(64, ge=1)


class NoiseSettings(_Strict):
    kind: Literal["identity", "smoothed", "custom"] = "identity"
    m_Q: Optional[float] = Field(None, ge=0)
    q: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "smoothed" and self.m_Q is None:
            raise ValueError("smoothed noise needs m_Q")
        if self.kind == "custom" and self.q is None:
            raise ValueError("custom noise needs the list q")
        if self.kind != "custom" and self.q is not None:
            raise ValueError("q is only allowed for custom noise")
        if self.q is not None and any(v < 0 for v in self.q):
            raise ValueError("covariance eigenvalues must be >= 0")
        return self


class DriftSettings(_Strict):
    name: Literal["cubic", "cubic_plus_linear", "linear", "zero", "cubic_sine", "polynomial"] = "cubic"
    a: float = Field(1.0, ge=0, description="slope of the linear drift")
    coefficients: Optional[list[float]] = None
    variant: Literal["exact", "yosida", "mollified"] = "exact"
    lam: Optional[float] = Field(None, gt=0)
    beta: Optional[float] = Field(None, gt=0, le=1)
    eta: float = Field(0.0, ge=0)
    newton_tol: float = Field(1e-14, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.name == "polynomial" and not self.coefficients:
            raise ValueError("polynomial drift needs coefficients")
        if self.name != "polynomial" and self.coefficients is not None:
            raise ValueError("coefficients are only allowed for the polynomial drift")
        if self.beta is not None and self.lam is None:
            raise ValueError("beta requires lam")
        if self.variant in ("yosida", "mollified") and self.lam is None:
            raise ValueError(f"{self.variant} variant requires lam")
        if self.variant == "mollified" and self.beta is None:
            raise ValueError("mollified variant requires beta")
        if self.variant == "yosida" and self.beta is not None:
            raise ValueError("beta is only used by the mollified variant")
        if self.variant == "exact" and self.lam is not None:
            raise ValueError("lam given but variant is exact")
        return self


class InitialSettings(_Strict):
    kind: Literal["zero", "sine", "coefficients"] = "zero"
    amplitude: float = 1.0
    coefficients: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check(self):
        if (self.kind == "coefficients") != (self.coefficients is not None):
            raise ValueError("coefficients must be given exactly when kind is 'coefficients'")
        return self


class ProbeSettings(_Strict):
    t: float = Field(gt=0)
    x: list[float]


class EnsembleSettings(_Strict):
    n_paths: int = Field(1000, ge=1)
    batch_size: int = Field(512, ge=1)
    malliavin: bool = True


class TGrid(_Strict):
    start: float = Field(1e-4, gt=0)
    stop: float = Field(1.0, gt=0, le=1)
    num: int = Field(50, ge=2)
    spacing: Literal["log", "linear"] = "log"

    def values(self) -> np.ndarray:
        f = np.geomspace if self.spacing == "log" else np.linspace
        return f(self.start, self.stop, self.num)


class GxtSettings(_Strict):
    x: list[list[float]] = Field(default_factory=list)
    t_grid: TGrid = Field(default_factory=TGrid)


class DensitySettings(_Strict):
    eps_grid: list[float] = Field(default_factory=lambda: [0.1, 0.03, 0.01, 0.003, 0.001])
    moment_q: float = Field(2.0, ge=0)
    deltas: list[float] = Field(default_factory=lambda: [0.1, 0.03, 0.01, 0.003])


class MalliavinSettings(_Strict):
    n_paths: int = Field(16, ge=1)
    second_order: bool = False


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    domain: DomainSettings = Field(default_factory=DomainSettings)
    time: TimeSettings = Field(default_factory=TimeSettings)
    noise: NoiseSettings = Field(default_factory=NoiseSettings)
    drift: DriftSettings = Field(default_factory=DriftSettings)
    initial: InitialSettings = Field(default_factory=InitialSettings)
    dealias: bool = False
    probes: list[ProbeSettings] = Field(default_factory=list)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)
    gamma: Optional[float] = None
    gxt: GxtSettings = Field(default_factory=GxtSettings)
    density: DensitySettings = Field(default_factory=DensitySettings)
    malliavin: MalliavinSettings = Field(default_factory=MalliavinSettings)
    output: str = "out"

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if v is not None and not 0 < v < 2:
            raise ValueError(f"gamma must lie in (0, 2), got {v}")
        return v

    @model_validator(mode="after")
    def _check(self):
        d, K = self.domain.d, self.domain.K
        n = K**d
        if self.noise.kind == "identity" and d != 1:
            raise ValueError("identity noise is only supported for d = 1")
        if self.noise.q is not None and len(self.noise.q) != n:
            raise ValueError(f"custom q needs {n} entries (K^d)")
        if self.initial.coefficients is not None and len(self.initial.coefficients) != n:
            raise ValueError(f"initial coefficients need {n} entries (K^d)")
        L = self.domain.length
        for p in self.probes:
            if len(p.x) != d:
                raise ValueError(f"probe {p.x} has dimension {len(p.x)}, expected {d}")
            if any(not 0 < v < L for v in p.x):
                raise ValueError(f"probe {p.x} is outside the open cube")
            if p.t > self.time.T * (1 + 1e-12):
                raise ValueError(f"probe time {p.t} exceeds T")
            steps = p.t / self.time.T * self.time.M
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"probe time {p.t} is not on the time grid")
        for x in self.gxt.x:
            if len(x) != d or any(not 0 < v < L for v in x):
                raise ValueError(f"gxt point {x} is invalid for d={d}")
        if any(e <= 0 for e in self.density.eps_grid):
            raise ValueError("eps grid must be positive")
        if any(not 0 < v < 1 for v in self.density.deltas):
            raise ValueError("deltas must lie in (0, 1)")
        return self

    # builders

    def basis(self) -> SineBasis:
        return SineBasis(self.domain.d, self.domain.K, self.domain.length)

    def noise_model(self, basis: SineBasis | None = None) -> NoiseModel:
        b = basis or self.basis()
        if self.noise.kind == "identity":
            return NoiseModel.identity(b)
        if self.noise.kind == "smoothed":
            return NoiseModel.smoothed(b, self.noise.m_Q)
        return NoiseModel.custom(b, self.noise.q)

    def drift_function(self) -> tuple[drift_mod.DriftFunction, float]:
        """Monotone drift and the ``eta`` folded in by its normalization."""
        s = self.drift
        if s.name == "cubic_sine":
            return drift_mod.cubic_sine()
        if s.name == "linear":
            return drift_mod.linear(s.a), 0.0
        if s.name == "polynomial":
            return drift_mod.DriftFunction.polynomial(s.coefficients, name="polynomial"), 0.0
        return drift_mod.CATALOG[s.name](), 0.0

    def solver_config(self, seed: int | None = None) -> SolverConfig:
        b = self.basis()
        f, eta_shift = self.drift_function()
        if self.initial.kind == "zero":
            u0 = None
        elif self.initial.kind == "sine":
            amp, L = self.initial.amplitude, self.domain.length
            u0 = b.project(lambda *xs: amp * np.prod([np.sin(np.pi * x / L) for x in xs], axis=0))
        else:
            u0 = SpectralField(np.asarray(self.initial.coefficients), b)
        return SolverConfig(
            basis=b, noise=self.noise_model(b), drift=f, T=self.time.T, M=self.time.M,
            eta=self.drift.eta + eta_shift, u0=u0, seed=self.seed if seed is None else seed,
            lam=self.drift.lam, beta=self.drift.beta, dealias=self.dealias,
            newton_tol=self.drift.newton_tol,
        )

    def probe_list(self) -> list[tuple[float, tuple[float, ...]]]:
        return [(p.t, tuple(p.x)) for p in self.probes]


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text())
    return parse_config(data or {})


def parse_config(data: dict) -> ExperimentConfig:
    return ExperimentConfig.model_validate(data)


def effective_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
