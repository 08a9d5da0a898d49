"""JSON experiment configuration.

A config is one JSON object with the sections below; every key is optional
and unknown keys are rejected. Defaults are the values of the dataclasses.

``experiment``
    ``"resonances" | "simulate" | "effective" | "compare" | "stationary"``.
``model``
    ``L`` (or ``L_sq``, a number or an exact expression such as
    ``"2 + sqrt(6)"``), ``K``, ``beta``, ``rho``, ``kappa``, ``cutoff``,
    ``resonance_tol`` (``null`` for exact resonance tests).
``noise``
    ``c``, ``q``: ``d_k = c (1 + |k_L|)^(-q)``.
``integrator``
    ``scheme``, ``dt``, ``t_final``, ``record_times`` or ``record_every``,
    ``seed``, ``blowup_guard``, ``workers``.
``initial``
    ``kind`` (``"zero"`` or ``"random"``), ``scale``, ``decay``, ``seed``.
``ensemble``
    ``n_paths``, ``system`` (``"full"`` or ``"interaction"`` for ``simulate``).
``study``
    ``betas``, ``kappas``, ``uniformity_beta``, ``times``, ``coupling``,
    ``null_seed``, ``n_boot``.
``stationary``
    ``burn_in``, ``stride``, ``second_initial_scale``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import sympy

from .integrator import IntegratorConfig
from .lattice import ModelParams, NoiseSpec, SpectralState
from .resonance import AlgebraicParams, FloatParams, RationalParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "EXPERIMENTS"]

EXPERIMENTS = ("resonances", "simulate", "effective", "compare", "stationary")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    L: float | None = None
    L_sq: Any = None
    K: float | str = 0.0
    beta: float = 100.0
    rho: float = 1.0
    kappa: float = 1.0
    cutoff: float = 4.0
    resonance_tol: float | None = None


@dataclass(frozen=True)
class NoiseSection:
    c: float = 1.0
    q: float = 4.0


@dataclass(frozen=True)
class IntegratorSection:
    scheme: str = "integrating_factor"
    dt: float = 1e-3
    t_final: float = 10.0
    record_times: list | None = None
    record_every: float | None = None
    seed: int = 0
    blowup_guard: float = 1e6
    workers: int = 1


@dataclass(frozen=True)
class InitialSection:
    kind: str = "zero"
    scale: float = 1.0
    decay: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class EnsembleSection:
    n_paths: int = 1
    system: str = "full"


@dataclass(frozen=True)
class StudySection:
    betas: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    kappas: list | None = None
    uniformity_beta: float | None = None
    times: list | None = None
    coupling: str = "shared"
    null_seed: int | None = None
    n_boot: int = 1000


@dataclass(frozen=True)
class StationarySection:
    burn_in: float = 10.0
    stride: int = 10
    second_initial_scale: float | None = None


_SECTIONS = {
    "model": ModelSection,
    "noise": NoiseSection,
    "integrator": IntegratorSection,
    "initial": InitialSection,
    "ensemble": EnsembleSection,
    "study": StudySection,
    "stationary": StationarySection,
}


def _section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    return cls(**data)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "simulate"
    model: ModelSection = field(default_factory=ModelSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    initial: InitialSection = field(default_factory=InitialSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    study: StudySection = field(default_factory=StudySection)
    stationary: StationarySection = field(default_factory=StationarySection)
    raw: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        extra = set(data) - set(_SECTIONS) - {"experiment"}
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        exp = data.get("experiment", "simulate")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {exp!r}")
        try:
            sections = {k: _section(c, data.get(k, {}), k) for k, c in _SECTIONS.items()}
            out = cls(experiment=exp, raw=json.loads(json.dumps(data)), **sections)
            # build once so that invalid values surface as config errors
            out.model_params()
            out.integrator_config()
            out.resonance_params()
        except ConfigError:
            raise
        except (TypeError, ValueError, sympy.SympifyError) as exc:
            raise ConfigError(str(exc)) from exc
        if out.initial.kind not in ("zero", "random"):
            raise ConfigError(f"unknown initial kind {out.initial.kind!r}")
        if out.ensemble.system not in ("full", "interaction"):
            raise ConfigError("simulate system must be 'full' or 'interaction'")
        if out.ensemble.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        return out

    # derived objects ---------------------------------------------------------------------
    def _L_sq_expr(self):
        m = self.model
        if m.L_sq is not None and m.L is not None:
            raise ConfigError("give either L or L_sq, not both")
        if m.L_sq is None:
            return None
        expr = sympy.sympify(m.L_sq, rational=True)
        if not expr.is_positive:
            raise ConfigError("L_sq must be positive")
        return expr

    def L_value(self) -> float:
        expr = self._L_sq_expr()
        if expr is not None:
            return math.sqrt(float(expr))
        return 1.0 if self.model.L is None else float(self.model.L)

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(
            L=self.L_value(), K=float(Fraction(m.K)), beta=float(m.beta), rho=float(m.rho),
            kappa=float(m.kappa), cutoff=float(m.cutoff),
            noise=NoiseSpec(c=float(self.noise.c), q=float(self.noise.q)),
            resonance_tol=m.resonance_tol,
        )

    def resonance_params(self):
        """Exact parameters for the resonance scan.

        ``L_sq`` given as a rational number stays exact; an irrational
        expression goes through the symbolic path; a plain ``L`` uses the
        binary value actually stored, unless ``resonance_tol`` is set.
        """
        m = self.model
        if m.resonance_tol is not None:
            return FloatParams(self.L_value() ** 2, float(Fraction(m.K)), m.resonance_tol)
        expr = self._L_sq_expr()
        K = Fraction(m.K)
        if expr is None:
            return RationalParams(Fraction(self.L_value()) ** 2, K)
        if expr.is_Rational:
            return RationalParams(Fraction(int(expr.p), int(expr.q)), K)
        return AlgebraicParams(expr, K)

    def integrator_config(self) -> IntegratorConfig:
        s = self.integrator
        if s.record_times is not None and s.record_every is not None:
            raise ConfigError("give either record_times or record_every")
        kw = dict(scheme=s.scheme, dt=float(s.dt), seed=int(s.seed),
                  blowup_guard=float(s.blowup_guard), workers=int(s.workers))
        if s.record_every is not None:
            return IntegratorConfig.uniform(float(s.t_final), float(s.record_every), **kw)
        times = s.record_times if s.record_times is not None else [0.0, float(s.t_final)]
        return IntegratorConfig(t_final=float(s.t_final), record_times=tuple(times), **kw)

    def initial_state(self, scale: float | None = None) -> SpectralState | None:
        ini = self.initial
        lattice = self.model_params().lattice
        if ini.kind == "zero":
            return None
        rng = np.random.default_rng(ini.seed)
        return SpectralState.random(lattice, rng, decay=ini.decay,
                                    scale=ini.scale if scale is None else scale)

    def config_hash(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
