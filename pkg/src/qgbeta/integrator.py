"""Time stepping for the full, interaction and effective systems.

Conventions
-----------
* Rotation: ``dv_k = (-i beta lambda_k v_k + P_k(v) - gamma_k v_k) dt + b_k dbeta_k``;
  the interaction variables ``a_k = exp(i beta lambda_k t) v_k`` remove it.
* Increments: ``dbeta_k = dW+ + i dW-`` with independent real parts of
  variance ``dt`` each, so ``E|dbeta_k|^2 = 2 dt``.
* ``integrating_factor`` integrates rotation and damping exactly. In
  interaction variables the quadratic term of a nonresonant triad is
  ``c a_j a_n exp(-i beta delta s)``; with the amplitudes frozen over a step
  its phase is integrated exactly, which keeps the scheme consistent for any
  ``beta dt``. The stochastic convolution is sampled with its exact damped
  variance.
* ``euler_maruyama`` is the plain explicit step, used as a reference for
  small ``beta dt``.

Random streams
--------------
Path ``p`` of an ensemble with master seed ``s`` draws its increments from
``PCG64(SeedSequence(s, spawn_key=(p, 0)))`` in (step, mode, real/imag)
order, and initial data from ``spawn_key=(p, 1)``. Streams therefore do not
depend on how paths are grouped or scheduled.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .effective import effective_operator
from .lattice import Lattice, ModelParams, SpectralState, actions_of
from .nonlinearity import triad_table

__all__ = [
    "SCHEMES",
    "SYSTEMS",
    "WienerIncrementStream",
    "IntegratorConfig",
    "Trajectory",
    "Ensemble",
    "NumericalBlowUp",
    "StiffnessError",
    "step_full_v",
    "step_interaction",
    "step_effective",
    "run_ensemble",
    "run_single",
    "oscillatory_integral",
    "oscillatory_integral_sup",
]

SCHEMES = ("integrating_factor", "euler_maruyama")
SYSTEMS = ("full", "interaction", "effective")

# explicit rotation is refused beyond this value of beta * dt
EM_STIFFNESS_LIMIT = 0.1


class NumericalBlowUp(RuntimeError):
    def __init__(self, time: float, path: int, norm: float):
        super().__init__(f"norm {norm:.3g} exceeded the guard at t={time:g} on path {path}")
        self.time = time
        self.path = path
        self.norm = norm


class StiffnessError(ValueError):
    pass


def path_seed_sequence(seed: int, path: int, purpose: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(path), int(purpose)))


def path_rng(seed: int, path: int, purpose: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(path_seed_sequence(seed, path, purpose)))


@dataclass
class WienerIncrementStream:
    """Complex Wiener increments for one path on the stored half-lattice.

    The negative half is implied by conjugation, so the reality constraint
    holds for every draw.
    """

    seed: int
    dt: float
    n_modes: int
    path: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self._rng = path_rng(self.seed, self.path, 0)

    def draw(self, n_steps: int = 1) -> np.ndarray:
        """Next ``n_steps`` increments, shape ``(n_steps, n_modes)``."""
        z = self._rng.standard_normal((n_steps, self.n_modes, 2))
        z *= math.sqrt(self.dt)
        return z[..., 0] + 1j * z[..., 1]


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-5
    out[big] = np.expm1(z[big]) / z[big]
    small = ~big
    out[small] = 1.0 + z[small] / 2.0 + z[small] ** 2 / 6.0
    return out


@dataclass(frozen=True, eq=False)
class _Stepper:
    """Precomputed coefficients for one (params, dt, scheme, system)."""

    params: ModelParams
    dt: float
    scheme: str
    system: str

    def __post_init__(self):
        p = self.params
        dt = self.dt
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        _check_dt(dt)
        if self.system != "effective" and p.kappa == 0:
            raise ValueError("the full equation needs kappa > 0")
        if (self.scheme == "euler_maruyama" and self.system == "full"
                and p.beta * dt > EM_STIFFNESS_LIMIT):
            raise StiffnessError(
                f"beta*dt = {p.beta * dt:g} > {EM_STIFFNESS_LIMIT}; use integrating_factor")
        lam, gam, b = p.lam, p.gamma, p.b
        s = dict(lam=lam, gamma=gam, b=b, decay=np.exp(-gam * dt))
        # exact variance of int_0^dt e^{-gamma (dt - s)} dbeta, relative to dt
        s["noise_scale"] = b * np.sqrt(-np.expm1(-2 * gam * dt) / (2 * gam * dt))
        if self.system != "effective":
            tab = triad_table(p)
            s["table"] = tab
            s.update(_merged_oscillation(tab, p.beta, dt))
        if self.system != "full" or self.scheme == "integrating_factor":
            s["R"] = effective_operator(p)
        for k, v in s.items():
            object.__setattr__(self, k, v)

    # drift pieces in interaction variables -------------------------------------------
    def _osc(self, a, t, averaged: bool):
        # mode-major layout: gathers copy whole rows of paths
        aT = a.T
        both = np.concatenate([aT, aT.conj()], axis=0)
        ph = np.exp(-1j * self.params.beta * t * self.pair_defect)
        if averaged:
            ph *= self.pair_phi
        prod = both[self.pair_j] * both[self.pair_n]
        prod *= ph.reshape(ph.shape + (1,) * (prod.ndim - 1))
        return self.params.rho * (self.pair_matrix @ prod).T

    def _interaction_drift(self, a, t, averaged):
        return self.R(a) + self._osc(a, t, averaged)

    # steps -----------------------------------------------------------------------------
    def step(self, y: np.ndarray, t: float, dB: np.ndarray) -> np.ndarray:
        dt = self.dt
        if self.system == "effective":
            if self.scheme == "integrating_factor":
                return self.decay * (y + dt * self.R(y)) + self.noise_scale * dB
            return y + dt * (self.R(y) - self.gamma * y) + self.b * dB
        if self.system == "interaction":
            if self.scheme == "integrating_factor":
                return (self.decay * (y + dt * self._interaction_drift(y, t, True))
                        + self.noise_scale * dB)
            return y + dt * (self._interaction_drift(y, t, False) - self.gamma * y) + self.b * dB
        # full v-equation
        beta = self.params.beta
        if self.scheme == "integrating_factor":
            rot = np.exp(1j * beta * self.lam * t)
            a = rot * y
            a_new = self.decay * (a + dt * self._interaction_drift(a, t, True))
            return np.conj(rot) * np.exp(-1j * beta * self.lam * dt) * a_new + self.noise_scale * dB
        P = self.params.rho * self.table.full(y)
        return y + dt * (-1j * beta * self.lam * y + P - self.gamma * y) + self.b * dB


def _merged_oscillation(tab, beta: float, dt: float) -> dict:
    """Nonresonant triads with ``(j, n)`` and ``(n, j)`` merged (same product and phase)."""
    m = tab.lattice.size
    rows = tab._rows_nr
    jj = (tab.j_idx + m * tab.j_conj)[rows]
    nn = (tab.n_idx + m * tab.n_conj)[rows]
    lo, hi = np.minimum(jj, nn), np.maximum(jj, nn)
    keys = np.stack([tab.k_idx[rows], lo, hi], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    coeff = np.zeros(len(uniq))
    np.add.at(coeff, inv, tab.coeff[rows])
    defect = np.zeros(len(uniq))
    defect[inv] = tab.defect[rows]
    mat = sp.csr_matrix((coeff, (uniq[:, 0], np.arange(len(uniq)))), shape=(m, len(uniq)))
    return dict(
        pair_j=uniq[:, 1], pair_n=uniq[:, 2], pair_defect=defect,
        pair_phi=_phi1(-1j * beta * defect * dt), pair_matrix=mat,
    )


def _stepper(params, dt, scheme, system) -> _Stepper:
    return _Stepper(params, float(dt), scheme, system)


def _as_increments(noise, lattice: Lattice) -> np.ndarray:
    if noise is None:
        return np.zeros(lattice.size, dtype=complex)
    if isinstance(noise, SpectralState):
        return noise.restrict(lattice).amplitudes
    return np.asarray(noise, dtype=complex)


def step_full_v(v: SpectralState, t: float, dt: float, noise, params: ModelParams,
                scheme: str = "integrating_factor") -> SpectralState:
    """One step of the full equation in the original variables.

    ``noise`` holds the increments ``dbeta_k`` on the stored modes (array,
    :class:`SpectralState` or ``None`` for no forcing).
    """
    v = v.restrict(params.lattice)
    st = _stepper(params, dt, scheme, "full")
    return v.with_amplitudes(st.step(v.amplitudes, t, _as_increments(noise, v.lattice)))


def step_interaction(a: SpectralState, t: float, dt: float, noise, params: ModelParams,
                     scheme: str = "integrating_factor") -> SpectralState:
    """One step of ``da = (R(a) + Rosc(a, beta t) - gamma a) dt + b dbeta``."""
    a = a.restrict(params.lattice)
    st = _stepper(params, dt, scheme, "interaction")
    return a.with_amplitudes(st.step(a.amplitudes, t, _as_increments(noise, a.lattice)))


def step_effective(v: SpectralState, dt: float, noise, params: ModelParams,
                   scheme: str = "integrating_factor") -> SpectralState:
    """One step of ``dv = (R(v) - gamma v) dt + b dbeta``."""
    v = v.restrict(params.lattice)
    st = _stepper(params, dt, scheme, "effective")
    return v.with_amplitudes(st.step(v.amplitudes, 0.0, _as_increments(noise, v.lattice)))


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "integrating_factor"
    dt: float = 1e-3
    t_final: float = 10.0
    record_times: tuple[float, ...] = (10.0,)
    seed: int = 0
    blowup_guard: float = 1e6
    workers: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        _check_dt(self.dt)
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        times = tuple(float(t) for t in self.record_times)
        object.__setattr__(self, "record_times", times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("record_times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.t_final * (1 + 1e-12)):
            raise ValueError("record_times must lie in [0, t_final]")
        for t in times:
            n = t / self.dt
            if abs(n - round(n)) > 1e-12 * max(1.0, n) + 1e-9:
                raise ValueError(f"record time {t} is not on the dt grid")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def record_steps(self) -> np.ndarray:
        return np.array([int(round(t / self.dt)) for t in self.record_times], dtype=np.int64)

    @classmethod
    def uniform(cls, t_final: float, every: float, t_start: float = 0.0, **kw) -> "IntegratorConfig":
        n = int(round((t_final - t_start) / every))
        times = tuple(t_start + every * i for i in range(n + 1))
        return cls(t_final=t_final, record_times=times, **kw)

    def replace(self, **kw) -> "IntegratorConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of one path."""

    lattice: Lattice
    times: np.ndarray
    amplitudes: np.ndarray  # (n_times, n_modes)
    params: ModelParams
    config: IntegratorConfig
    path: int = 0
    system: str = "full"

    @property
    def states(self) -> list[tuple[float, SpectralState]]:
        return [(float(t), SpectralState(self.lattice, a)) for t, a in zip(self.times, self.amplitudes)]

    def actions(self) -> np.ndarray:
        return 0.5 * np.abs(self.amplitudes) ** 2

    def write_csv(self, path) -> None:
        """Columns: time, then Re/Im interleaved per stored mode in (kx, ky) order."""
        header = ["time"]
        for k in self.lattice.modes:
            header += [f"re_{k.kx}_{k.ky}", f"im_{k.kx}_{k.ky}"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.amplitudes):
                vals = np.empty(2 * len(row))
                vals[0::2] = row.real
                vals[1::2] = row.imag
                w.writerow([repr(float(t))] + [repr(float(x)) for x in vals])


@dataclass(frozen=True, eq=False)
class Ensemble:
    lattice: Lattice
    times: np.ndarray
    amplitudes: np.ndarray  # (n_paths, n_times, n_modes)
    params: ModelParams
    config: IntegratorConfig
    system: str

    @property
    def n_paths(self) -> int:
        return self.amplitudes.shape[0]

    def __len__(self):
        return self.n_paths

    def __getitem__(self, p: int) -> Trajectory:
        return Trajectory(self.lattice, self.times, self.amplitudes[p], self.params,
                          self.config, p, self.system)

    def __iter__(self):
        return (self[p] for p in range(self.n_paths))

    def actions(self) -> np.ndarray:
        """``I_k = |v_k|^2 / 2``, shape ``(n_paths, n_times, n_modes)``."""
        return 0.5 * np.abs(self.amplitudes) ** 2

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} was not recorded")
        return i


Initial = SpectralState | Callable[[np.random.Generator], SpectralState]


def _initial_array(initial, lattice: Lattice, seed: int, path: int) -> np.ndarray:
    if isinstance(initial, SpectralState):
        return initial.restrict(lattice).amplitudes
    if initial is None:
        return np.zeros(lattice.size, dtype=complex)
    return initial(path_rng(seed, path, 1)).restrict(lattice).amplitudes


# increments are drawn in blocks of this many steps per path
_BLOCK = 256


def _run_chunk(args) -> np.ndarray:
    initial, params, config, system, paths = args
    lattice = params.lattice
    st = _stepper(params, config.dt, config.scheme, system)
    m = lattice.size
    y = np.array([_initial_array(initial, lattice, config.seed, p) for p in paths])
    streams = [WienerIncrementStream(config.seed, config.dt, m, p) for p in paths]
    rec_steps = config.record_steps
    out = np.empty((len(paths), len(rec_steps), m), dtype=complex)
    ri = 0
    while ri < len(rec_steps) and rec_steps[ri] == 0:
        out[:, ri] = y
        ri += 1
    n_steps = config.n_steps
    step = 0
    dt = config.dt
    while step < n_steps:
        nb = min(_BLOCK, n_steps - step)
        block = np.stack([s.draw(nb) for s in streams], axis=1)  # (nb, paths, m)
        # overflow within a block is caught by the guard below
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(nb):
                y = st.step(y, step * dt, block[i])
                step += 1
                while ri < len(rec_steps) and rec_steps[ri] == step:
                    out[:, ri] = y
                    ri += 1
        norms = np.max(np.abs(y), axis=1)
        bad = ~np.isfinite(norms) | (norms > config.blowup_guard)
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise NumericalBlowUp(step * dt, int(paths[p]), float(norms[p]))
    return out


def run_ensemble(initial: Initial | None, params: ModelParams, config: IntegratorConfig,
                 n_paths: int, system: str = "full", chunk_size: int | None = None) -> Ensemble:
    """Integrate ``n_paths`` independent paths.

    Parameters
    ----------
    initial
        A fixed state, ``None`` for zero, or a sampler ``rng -> SpectralState``
        called with the path's own initial-data stream. With
        ``config.workers > 1`` a sampler must be picklable.
    system
        ``"full"`` (original variables), ``"interaction"`` or ``"effective"``.
        Interaction and effective runs with the same seed share increments.
    chunk_size
        Paths integrated together in one vectorised batch. Results do not
        depend on it, nor on ``config.workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _stepper(params, config.dt, config.scheme, system)  # validate early
    if chunk_size is None:
        chunk_size = max(1, math.ceil(n_paths / config.workers))
    chunks = [list(range(i, min(i + chunk_size, n_paths))) for i in range(0, n_paths, chunk_size)]
    jobs = [(initial, params, config, system, c) for c in chunks]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    amps = np.concatenate(parts, axis=0)
    return Ensemble(params.lattice, np.array(config.record_times), amps, params, config, system)


def run_single(initial, params, config, path: int = 0, system: str = "full") -> Trajectory:
    out = _run_chunk((initial, params, config, system, [path]))
    return Trajectory(params.lattice, np.array(config.record_times), out[0], params, config,
                      path, system)


def manifest(params: ModelParams, config: IntegratorConfig, **extra) -> dict:
    from . import __version__

    body = {
        "params": _params_json(params),
        "config": config.to_json(),
        "seed": config.seed,
        "version": __version__,
        **extra,
    }
    text = json.dumps(body, sort_keys=True)
    body["config_hash"] = hashlib.sha256(text.encode()).hexdigest()
    return body


def _params_json(params: ModelParams) -> dict:
    d = dataclasses.asdict(params)
    d["noise"] = {
        "c": params.noise.c,
        "q": params.noise.q,
        "overrides": [[list(k), v] for k, v in sorted(params.noise.overrides.items())],
    }
    return d


# oscillatory integral -------------------------------------------------------------------

def _grouped_oscillation(a: np.ndarray, params: ModelParams):
    """Coefficients ``C`` and frequencies ``w`` with ``Rosc_k(a, s) = sum C exp(-i w s)``.

    Triads sharing ``(k, delta)`` are merged; returns per-mode lists.
    """
    tab = triad_table(params)
    rows = tab._rows_nr
    prod = params.rho * tab.coeff[rows] * tab._products(a, rows)
    ks = tab.k_idx[rows]
    delta = tab.defect[rows]
    out = []
    for i in range(tab.lattice.size):
        sel = ks == i
        if not sel.any():
            out.append((np.zeros(0, complex), np.zeros(0)))
            continue
        d = np.round(delta[sel], 13)
        uniq, inv = np.unique(d, return_inverse=True)
        C = np.zeros(len(uniq), dtype=complex)
        np.add.at(C, inv, prod[sel])
        keep = C != 0
        out.append((C[keep], uniq[keep]))
    return out


def oscillatory_integral(a: SpectralState, t, params: ModelParams) -> np.ndarray:
    """``int_0^t Rosc(a, beta s) ds`` at frozen ``a``, integrated term by term.

    Returns shape ``(len(t), n_modes)``.
    """
    a = a.restrict(params.lattice)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    beta = params.beta
    out = np.zeros((len(t), a.lattice.size), dtype=complex)
    for i, (C, d) in enumerate(_grouped_oscillation(a.amplitudes, params)):
        if len(C):
            w = beta * d
            out[:, i] = ((1.0 - np.exp(-1j * np.outer(t, w))) / (1j * w)) @ C
    return out


def oscillatory_integral_sup(a: SpectralState, params: ModelParams, T: float = 1.0,
                             points_per_period: int = 8, chunk: int = 20000) -> float:
    """``max_k sup_{t <= T} |int_0^t Rosc_k(a, beta s) ds|`` on a grid resolving every phase."""
    a = a.restrict(params.lattice)
    groups = _grouped_oscillation(a.amplitudes, params)
    wmax = max((np.abs(d).max() for C, d in groups if len(d)), default=0.0) * params.beta
    if wmax == 0:
        return 0.0
    n = int(math.ceil(T * wmax * points_per_period / (2 * math.pi))) + 1
    best = 0.0
    for lo in range(0, n, chunk):
        t = np.linspace(0.0, T, n)[lo:lo + chunk]
        for C, d in groups:
            if len(C):
                w = params.beta * d
                vals = ((1.0 - np.exp(-1j * np.outer(t, w))) / (1j * w)) @ C
                best = max(best, float(np.abs(vals).max()))
    return best
