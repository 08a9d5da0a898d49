"""Wave-vector lattice, model parameters and spectral states.

A state is stored on the positive half-lattice ``{kx > 0} | {kx == 0, ky > 0}``;
amplitudes on the other half are the complex conjugates, so the reality
constraint ``v_{-k} = conj(v_k)`` cannot be broken.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterator, Mapping, NamedTuple

import numpy as np

__all__ = [
    "WaveVector",
    "Lattice",
    "NoiseSpec",
    "ModelParams",
    "SpectralState",
    "ActionSample",
    "dispersion",
    "damping",
    "sobolev_norm",
    "actions_of",
]

# slack for lattice points lying exactly on the cutoff circle
_CUTOFF_EPS = 1e-12


class _WaveVectorBase(NamedTuple):
    kx: int
    ky: int


class WaveVector(_WaveVectorBase):
    """Nonzero integer wave vector ``(kx, ky)``."""

    __slots__ = ()

    def __new__(cls, kx, ky):
        kx, ky = int(kx), int(ky)
        if kx == 0 and ky == 0:
            raise ValueError("the zero wave vector is not part of the lattice")
        return super().__new__(cls, kx, ky)

    def __neg__(self) -> "WaveVector":
        return WaveVector(-self.kx, -self.ky)

    def __add__(self, other):  # vector sum, not tuple concatenation
        return WaveVector(self.kx + other[0], self.ky + other[1])

    def __sub__(self, other):
        return WaveVector(self.kx - other[0], self.ky - other[1])

    @property
    def bar(self) -> "WaveVector":
        """Reflection ``(kx, -ky)``."""
        return WaveVector(self.kx, -self.ky)

    @property
    def in_upper_half(self) -> bool:
        return self.kx > 0 or (self.kx == 0 and self.ky > 0)

    def scaled(self, L: float) -> tuple[float, float]:
        return (self.kx / L, float(self.ky))

    def norm_sq(self, L: float) -> float:
        """``|k_L|^2``."""
        return (self.kx / L) ** 2 + self.ky**2

    def cross(self, other) -> int:
        return self.kx * other[1] - self.ky * other[0]


@dataclass(frozen=True)
class Lattice:
    """Truncated lattice ``{k : 0 < |k_L| <= cutoff}``.

    ``modes`` lists the stored half-lattice in lexicographic ``(kx, ky)``
    order; ``full_modes`` lists both halves.
    """

    L: float
    cutoff: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if not self.cutoff > 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")

    @classmethod
    @lru_cache(maxsize=64)
    def of(cls, L: float, cutoff: float) -> "Lattice":
        return cls(float(L), float(cutoff))

    def contains(self, k) -> bool:
        kx, ky = k
        if kx == 0 and ky == 0:
            return False
        return (kx / self.L) ** 2 + ky**2 <= self.cutoff**2 * (1 + _CUTOFF_EPS)

    @cached_property
    def modes(self) -> tuple[WaveVector, ...]:
        nx = int(math.floor(self.cutoff * self.L)) + 1
        ny = int(math.floor(self.cutoff)) + 1
        out = []
        for kx in range(0, nx + 1):
            for ky in range(-ny, ny + 1):
                if (kx > 0 or ky > 0) and self.contains((kx, ky)):
                    out.append(WaveVector(kx, ky))
        return tuple(out)

    @cached_property
    def full_modes(self) -> tuple[WaveVector, ...]:
        return tuple(sorted(self.modes + tuple(-k for k in self.modes)))

    @cached_property
    def index(self) -> dict[WaveVector, int]:
        return {k: i for i, k in enumerate(self.modes)}

    @property
    def size(self) -> int:
        return len(self.modes)

    def locate(self, k) -> tuple[int, bool]:
        """Return ``(i, conj)`` such that ``v_k = conj^? (stored[i])``."""
        k = WaveVector(*k)
        if k.in_upper_half:
            return self.index[k], False
        return self.index[-k], True

    @cached_property
    def kx(self) -> np.ndarray:
        return np.array([k.kx for k in self.modes], dtype=float)

    @cached_property
    def ky(self) -> np.ndarray:
        return np.array([k.ky for k in self.modes], dtype=float)

    @cached_property
    def kL2(self) -> np.ndarray:
        """``|k_L|^2`` for the stored modes."""
        return (self.kx / self.L) ** 2 + self.ky**2

    def __len__(self):
        return self.size

    def __iter__(self) -> Iterator[WaveVector]:
        return iter(self.modes)


@dataclass(frozen=True)
class NoiseSpec:
    """Force amplitudes ``d_k = c (1 + |k_L|)^(-q)``, with optional overrides.

    ``overrides`` maps wave vectors to ``d_k``; an override for ``k`` also
    applies to ``-k`` so that ``d`` stays even.
    """

    c: float = 1.0
    q: float = 4.0
    overrides: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def d(self, k, L: float) -> float:
        k = WaveVector(*k)
        for key in (k, -k):
            if key in self.overrides:
                return float(self.overrides[key])
        return self.c * (1.0 + math.sqrt(k.norm_sq(L))) ** (-self.q)

    def b(self, k, L: float, K: float) -> float:
        k = WaveVector(*k)
        return self.d(k, L) / (K + k.norm_sq(L))

    def b_array(self, lattice: Lattice, K: float) -> np.ndarray:
        return np.array([self.b(k, lattice.L, K) for k in lattice.modes])

    def B(self, r: float, lattice: Lattice, K: float) -> float:
        """``B_r = 2 sum |k_L|^(2r) b_k^2`` over the full truncated lattice."""
        b = self.b_array(lattice, K)
        # each stored mode stands for the pair {k, -k}
        return float(2.0 * 2.0 * np.sum(lattice.kL2**r * b**2))

    def check_nondegenerate(self, lattice: Lattice) -> None:
        bad = [k for k in lattice.modes if self.d(k, lattice.L) == 0.0]
        if bad:
            raise ValueError(f"force amplitudes vanish on modes {bad[:5]}")


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of the forced beta-plane equation.

    ``kappa = 0`` is accepted here because the effective equation allows it;
    the full-equation steppers reject it.
    """

    L: float = 1.0
    K: float = 0.0
    beta: float = 100.0
    rho: float = 1.0
    kappa: float = 1.0
    cutoff: float = 4.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    resonance_tol: float | None = None

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not self.K >= 0:
            raise ValueError("K must be nonnegative")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if not self.rho >= 0:
            raise ValueError("rho must be nonnegative")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")

    @property
    def lattice(self) -> Lattice:
        return Lattice.of(self.L, self.cutoff)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def rational(self):
        """Exact ``(L^2, K)`` of the binary floats actually stored."""
        from .resonance import RationalParams

        return RationalParams(Fraction(self.L) ** 2, Fraction(self.K))

    def resonance_params(self):
        """Parameters used to decide which triads are exactly resonant."""
        if self.resonance_tol is None:
            return self.rational()
        from .resonance import FloatParams

        return FloatParams(self.L**2, self.K, rel_tol=self.resonance_tol)

    @property
    def lam(self) -> np.ndarray:
        lat = self.lattice
        return -(lat.kx / self.L) / (self.K + lat.kL2)

    @property
    def gamma(self) -> np.ndarray:
        kL2 = self.lattice.kL2
        return (self.kappa * kL2**2 + kL2) / (self.K + kL2)

    @property
    def b(self) -> np.ndarray:
        return self.noise.b_array(self.lattice, self.K)


def dispersion(k, params: ModelParams) -> float:
    """Rossby frequency ``lambda_k = -(kx/L) / (K + |k_L|^2)``."""
    k = WaveVector(*k)
    return -(k.kx / params.L) / (params.K + k.norm_sq(params.L))


def damping(k, params: ModelParams) -> float:
    k = WaveVector(*k)
    q = k.norm_sq(params.L)
    return (params.kappa * q * q + q) / (params.K + q)


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Immutable reality-constrained state on a truncated lattice."""

    lattice: Lattice
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.shape != (self.lattice.size,):
            raise ValueError(
                f"expected {self.lattice.size} amplitudes, got shape {amp.shape}"
            )
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def zeros(cls, lattice: Lattice) -> "SpectralState":
        return cls(lattice, np.zeros(lattice.size, dtype=complex))

    @classmethod
    def from_mapping(cls, lattice: Lattice, values: Mapping) -> "SpectralState":
        """Build a state from ``{k: v_k}``; either half of the lattice may be used.

        Entries for both ``k`` and ``-k`` must be conjugate.
        """
        amp = np.zeros(lattice.size, dtype=complex)
        seen = {}
        for k, val in values.items():
            k = WaveVector(*k)
            val = complex(val)
            if not lattice.contains(k):
                if val != 0:
                    raise ValueError(f"mode {tuple(k)} lies outside the cutoff")
                continue
            i, conj = lattice.locate(k)
            val = val.conjugate() if conj else val
            if i in seen and seen[i] != val:
                raise ValueError(f"values for {tuple(k)} and its negative are not conjugate")
            seen[i] = val
            amp[i] = val
        return cls(lattice, amp)

    @classmethod
    def random(cls, lattice: Lattice, rng: np.random.Generator, decay: float = 2.0,
               scale: float = 1.0) -> "SpectralState":
        """Gaussian amplitudes with spectrum ``scale * (1 + |k_L|)^(-decay)``."""
        env = scale * (1.0 + np.sqrt(lattice.kL2)) ** (-decay)
        z = rng.standard_normal(lattice.size) + 1j * rng.standard_normal(lattice.size)
        return cls(lattice, env * z)

    def __getitem__(self, k) -> complex:
        k = WaveVector(*k)
        if not self.lattice.contains(k):
            return 0j
        i, conj = self.lattice.locate(k)
        v = self.amplitudes[i]
        return complex(np.conj(v)) if conj else complex(v)

    def items(self):
        """Iterate ``(k, v_k)`` over the full lattice (both halves)."""
        for k, v in zip(self.lattice.modes, self.amplitudes):
            yield k, complex(v)
            yield -k, complex(np.conj(v))

    def as_dict(self) -> dict[WaveVector, complex]:
        return dict(self.items())

    def restrict(self, lattice: Lattice) -> "SpectralState":
        """Move to another lattice; refuses to drop nonzero modes."""
        if lattice == self.lattice:
            return self
        return SpectralState.from_mapping(lattice, {
            k: v for k, v in zip(self.lattice.modes, self.amplitudes)
        })

    def with_amplitudes(self, amplitudes) -> "SpectralState":
        return SpectralState(self.lattice, amplitudes)

    def __add__(self, other: "SpectralState") -> "SpectralState":
        return self.with_amplitudes(self.amplitudes + other.restrict(self.lattice).amplitudes)

    def __sub__(self, other: "SpectralState") -> "SpectralState":
        return self.with_amplitudes(self.amplitudes - other.restrict(self.lattice).amplitudes)

    def __mul__(self, c) -> "SpectralState":
        return self.with_amplitudes(c * self.amplitudes)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ActionSample:
    """Actions ``I_k = |v_k|^2 / 2`` on the stored half-lattice at one time.

    ``I_{-k} = I_k``, so the half-lattice determines the whole vector.
    """

    lattice: Lattice
    actions: np.ndarray
    time: float = 0.0

    def __getitem__(self, k) -> float:
        k = WaveVector(*k)
        if not self.lattice.contains(k):
            return 0.0
        i, _ = self.lattice.locate(k)
        return float(self.actions[i])


def sobolev_norm(v: SpectralState, m: float) -> float:
    """``|v|_{h^m}``, summing over both halves of the lattice."""
    w = v.lattice.kL2**m * np.abs(v.amplitudes) ** 2
    return float(np.sqrt(2.0 * np.sum(w)))


def actions_of(v: SpectralState, time: float = 0.0) -> ActionSample:
    return ActionSample(v.lattice, 0.5 * np.abs(v.amplitudes) ** 2, time)
