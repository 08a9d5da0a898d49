"""Closed-form effective dynamics for strongly nonresonant ``(L, K)``.

Off the strong-resonance set the resonant nonlinearity collapses to

    R_k(v) = A_k v_{kbar} v_{(0, 2 ky)},   kbar = (kx, -ky),

so the Hamiltonian part splits into frozen singletons and three-mode blocks
``{k, kbar, (0, 2 ky)}`` whose catalytic mode is constant, and the stochastic
effective equation drives each catalytic mode as an Ornstein-Uhlenbeck process.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .lattice import Lattice, ModelParams, SpectralState, WaveVector, damping

__all__ = [
    "effective_coefficient",
    "EffectiveOperator",
    "effective_operator",
    "effective_rhs",
    "TripleBlock",
    "SubsystemDecomposition",
    "decompose",
    "ModeTripleState",
    "exact_mode_flow",
    "ConservedQuantities",
    "conserved_quantities",
    "FlowTrajectory",
    "hamiltonian_effective_flow",
    "OUMoments",
    "ou_catalytic_moments",
    "LimitCoefficients",
    "limit_coefficients",
    "csgn",
]


def csgn(z: complex) -> complex:
    """``z / |z|`` with ``csgn(0) = 0``."""
    return 0j if z == 0 else z / abs(z)


def effective_coefficient(k, L: float, K: float, rho: float) -> float:
    """``A_k = 2 rho L kx ky (3 ky^2 - kx^2 / L^2) / (kx^2 + L^2 ky^2 + L^2 K)``."""
    kx, ky = k
    return (2.0 * rho * L * kx * ky / (kx**2 + L**2 * ky**2 + L**2 * K)
            * (3.0 * ky**2 - kx**2 / L**2))


@dataclass(frozen=True, eq=False)
class EffectiveOperator:
    """Vectorised ``R(v)`` on the stored half-lattice.

    Modes whose catalytic partner lies outside the cutoff get ``A = 0``.
    """

    lattice: Lattice
    A: np.ndarray
    kbar_idx: np.ndarray
    cat_idx: np.ndarray  # index into [v, conj(v)]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        both = np.concatenate([v, v.conj()], axis=-1)
        return self.A * both[..., self.kbar_idx] * both[..., self.cat_idx]


@lru_cache(maxsize=32)
def _effective_operator(L: float, K: float, rho: float, cutoff: float) -> EffectiveOperator:
    lattice = Lattice.of(L, cutoff)
    m = lattice.size
    A = np.zeros(m)
    kbar_idx = np.zeros(m, dtype=np.intp)
    cat_idx = np.zeros(m, dtype=np.intp)
    for i, k in enumerate(lattice.modes):
        kbar_idx[i] = i
        cat_idx[i] = i
        if k.kx == 0 or k.ky == 0:
            continue
        cat = (0, 2 * k.ky)
        if not lattice.contains(cat):
            continue
        ib, cb = lattice.locate(k.bar)
        ic, cc = lattice.locate(cat)
        kbar_idx[i] = ib + m * cb
        cat_idx[i] = ic + m * cc
        A[i] = effective_coefficient(k, L, K, rho)
    return EffectiveOperator(lattice, A, kbar_idx, cat_idx)


def effective_operator(params: ModelParams) -> EffectiveOperator:
    return _effective_operator(float(params.L), float(params.K), float(params.rho),
                               float(params.cutoff))


def effective_rhs(v: SpectralState, params: ModelParams) -> SpectralState:
    """Resonant nonlinearity ``R(v)`` from the explicit formula."""
    v = v.restrict(params.lattice)
    return v.with_amplitudes(effective_operator(params)(v.amplitudes))


@dataclass(frozen=True)
class TripleBlock:
    k: WaveVector
    kbar: WaveVector
    catalytic: WaveVector
    A: float


@dataclass
class SubsystemDecomposition:
    """Blocks of the Hamiltonian effective flow on the stored half-lattice.

    Every stored mode is a dynamical variable of exactly one block: either a
    singleton (constant under the Hamiltonian flow, including catalytic modes)
    or the pair ``(k, kbar)`` of a triple, which reads its catalytic mode.
    """

    singletons: list[WaveVector] = field(default_factory=list)
    triples: list[TripleBlock] = field(default_factory=list)

    def catalytic_modes(self) -> list[WaveVector]:
        return sorted({t.catalytic for t in self.triples})


def decompose(params: ModelParams) -> SubsystemDecomposition:
    lattice = params.lattice
    op = effective_operator(params)
    out = SubsystemDecomposition()
    for i, k in enumerate(lattice.modes):
        if op.A[i] == 0.0:
            out.singletons.append(k)
        elif k.ky > 0:
            out.triples.append(TripleBlock(k, k.bar, WaveVector(0, 2 * k.ky), float(op.A[i])))
    return out


@dataclass(frozen=True)
class ModeTripleState:
    v_k: complex
    v_kbar: complex
    v_cat: complex
    A: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_k, self.v_kbar, self.v_cat])


def exact_mode_flow(state: ModeTripleState, t: float) -> ModeTripleState:
    """Closed-form solution of the three-mode block.

    ``v_k(t) = v_k cos(w t) + v_kbar sgn(c) sin(w t)`` with ``c = A v_cat``,
    ``w = |c|``; ``v_kbar`` follows with ``k <-> kbar`` and ``A -> -A``,
    ``v_cat -> conj(v_cat)``. With ``c = 0`` the state is frozen.
    """
    c = state.A * state.v_cat
    w = abs(c)
    if w == 0:
        return state
    sg = csgn(c)
    cs, sn = math.cos(w * t), math.sin(w * t)
    v_k = state.v_k * cs + state.v_kbar * sg * sn
    v_kbar = state.v_kbar * cs - sg.conjugate() * state.v_k * sn
    return ModeTripleState(v_k, v_kbar, state.v_cat, state.A)


def mode_triple_rhs(state: ModeTripleState) -> tuple[complex, complex, complex]:
    return (state.A * state.v_cat * state.v_kbar,
            -state.A * state.v_cat.conjugate() * state.v_k,
            0j)


@dataclass(frozen=True)
class ConservedQuantities:
    """Integrals of a three-mode block.

    ``phase`` is the argument of ``sgn^2(z1 z2)`` (0 where it is undefined);
    ``sgn2`` is the complex value itself.
    """

    cat_re: float
    cat_im: float
    z1_sq: float
    z2_sq: float
    phase: float
    sgn2: complex

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cat_re, self.cat_im, self.z1_sq, self.z2_sq, self.phase)


def conserved_quantities(state: ModeTripleState) -> ConservedQuantities:
    sg = csgn(state.A * state.v_cat)
    z1 = state.v_k - 1j * sg * state.v_kbar
    z2 = state.v_k + 1j * sg * state.v_kbar
    s2 = csgn(z1 * z2) ** 2
    return ConservedQuantities(
        cat_re=state.v_cat.real,
        cat_im=state.v_cat.imag,
        z1_sq=abs(z1) ** 2,
        z2_sq=abs(z2) ** 2,
        phase=cmath.phase(s2) if s2 != 0 else 0.0,
        sgn2=s2,
    )


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    lattice: Lattice
    times: np.ndarray
    amplitudes: np.ndarray  # (n_times, n_modes)

    def state(self, i: int) -> SpectralState:
        return SpectralState(self.lattice, self.amplitudes[i])

    def __len__(self):
        return len(self.times)


def hamiltonian_effective_flow(v: SpectralState, t_span: tuple[float, float], step: float,
                               params: ModelParams, record_every: int = 1) -> FlowTrajectory:
    """Fixed-step classical RK4 for ``dv/dt = R(v)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    t0, t1 = t_span
    n_steps = int(round((t1 - t0) / step))
    op = effective_operator(params)
    y = v.restrict(params.lattice).amplitudes.copy()
    times, states = [t0], [y.copy()]
    h = step
    for i in range(1, n_steps + 1):
        k1 = op(y)
        k2 = op(y + 0.5 * h * k1)
        k3 = op(y + 0.5 * h * k2)
        k4 = op(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % record_every == 0 or i == n_steps:
            times.append(t0 + i * h)
            states.append(y.copy())
    return FlowTrajectory(params.lattice, np.array(times), np.array(states))


@dataclass(frozen=True)
class OUMoments:
    stationary_mean: complex
    stationary_E_abs_sq: float

    @property
    def stationary_mean_action(self) -> float:
        return 0.5 * self.stationary_E_abs_sq


def ou_catalytic_moments(k, params: ModelParams) -> OUMoments:
    """Stationary moments of ``dv = -gamma v dt + b dbeta`` (``E|dbeta|^2 = 2 dt``)."""
    k = WaveVector(*k)
    if k.kx != 0 or k.ky % 2 != 0:
        raise ValueError(f"{tuple(k)} is not a catalytic mode (0, 2 ky)")
    g = damping(k, params)
    b = params.noise.b(k, params.L, params.K)
    return OUMoments(0j, b * b / g)


@dataclass(frozen=True)
class LimitCoefficients:
    A: float
    gamma: float


def limit_coefficients(k, params: ModelParams, limit: str) -> LimitCoefficients:
    """Coefficients of the limiting systems.

    ``"kappa_zero"``: ``A_k`` unchanged, ``gamma_k`` at ``kappa = 0``.
    ``"L_rho_infinity"``: ``rho = L -> infinity`` gives
    ``A_k -> 6 kx ky^3 / (ky^2 + K)`` and ``|k_L|^2 -> ky^2`` in ``gamma_k``.
    """
    k = WaveVector(*k)
    K = params.K
    if limit == "kappa_zero":
        q = k.norm_sq(params.L)
        return LimitCoefficients(
            effective_coefficient(k, params.L, K, params.rho), q / (K + q)
        )
    if limit == "L_rho_infinity":
        A = 0.0 if k.ky == 0 else 6.0 * k.kx * k.ky**3 / (k.ky**2 + K)
        q = float(k.ky**2)
        gamma = (params.kappa * q * q + q) / (K + q) if q else 0.0
        return LimitCoefficients(A, gamma)
    raise ValueError(f"unknown limit {limit!r}")
