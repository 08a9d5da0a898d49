"""Three-wave resonances of the Rossby dispersion relation.

For ``k = j + n`` write ``u = L^2`` and ``D_v(u) = u (K + vy^2) + vx^2``. Then
``lambda_v = -L vx / D_v`` and the frequency defect
``lambda_j + lambda_n - lambda_k`` equals ``-L Q(u) / (D_j D_n D_k)`` with

    Q(u) = jx D_n D_k + nx D_j D_k - kx D_j D_n,

a quadratic polynomial in ``u`` with coefficients fixed by ``(j, n, K)``.
All resonance decisions go through ``Q``: exactly for rational or algebraic
``L^2``, with a relative tolerance only for floating ``L^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np
import sympy

from .lattice import Lattice, WaveVector

__all__ = [
    "STRONG",
    "WEAK_I",
    "WEAK_II",
    "WEAK_III",
    "TRIVIAL",
    "NONRESONANT",
    "RationalParams",
    "AlgebraicParams",
    "FloatParams",
    "ResonanceTriple",
    "ResonanceCertificate",
    "resonance_polynomial",
    "defect",
    "classify_triple",
    "strongly_resonant_L_values",
    "is_strongly_resonant_pair",
    "enumerate_triples",
]

STRONG = "strong"
WEAK_I = "weak-i"
WEAK_II = "weak-ii"
WEAK_III = "weak-iii"
# all three frequencies vanish (jx = nx = kx = 0); j x n = 0 so the triad carries no
# interaction
TRIVIAL = "trivial"
NONRESONANT = "nonresonant"


def resonance_polynomial(j, n, K) -> tuple[Fraction, Fraction, Fraction]:
    """Coefficients ``(a2, a1, a0)`` of ``Q(u) = a2 u^2 + a1 u + a0``."""
    j, n = WaveVector(*j), WaveVector(*n)
    k = j + n
    K = Fraction(K)
    # D_v(u) = al_v u + be_v
    al = {v: K + v.ky**2 for v in (j, n, k)}
    be = {v: Fraction(v.kx**2) for v in (j, n, k)}

    def prod(p, q):
        return (al[p] * al[q], al[p] * be[q] + al[q] * be[p], be[p] * be[q])

    terms = [(j.kx, prod(n, k)), (n.kx, prod(j, k)), (-k.kx, prod(j, n))]
    return tuple(sum(c * t[i] for c, t in terms) for i in range(3))


@dataclass(frozen=True)
class RationalParams:
    """Exact rational ``(L^2, K)``."""

    L_sq: Fraction
    K: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "L_sq", Fraction(self.L_sq))
        object.__setattr__(self, "K", Fraction(self.K))
        if self.L_sq <= 0 or self.K < 0:
            raise ValueError("need L^2 > 0 and K >= 0")

    @property
    def L(self) -> float:
        return math.sqrt(self.L_sq)

    def is_root(self, coeffs) -> bool:
        a2, a1, a0 = coeffs
        u = self.L_sq
        return a2 * u * u + a1 * u + a0 == 0


@dataclass(frozen=True)
class AlgebraicParams:
    """``L^2`` given as an exact sympy expression (e.g. ``2 + sqrt(6)``)."""

    L_sq: sympy.Expr
    K: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "L_sq", sympy.sympify(self.L_sq))
        object.__setattr__(self, "K", Fraction(self.K))
        if not self.L_sq.is_positive:
            raise ValueError("L^2 must be positive")

    @property
    def L(self) -> float:
        return math.sqrt(float(self.L_sq))

    def is_root(self, coeffs) -> bool:
        a2, a1, a0 = (sympy.Rational(c.numerator, c.denominator) for c in coeffs)
        u = float(self.L_sq)
        scale = abs(float(a2)) * u * u + abs(float(a1)) * u + abs(float(a0))
        if abs(float(a2) * u * u + float(a1) * u + float(a0)) > 1e-6 * scale:
            return False
        expr = sympy.expand(a2 * self.L_sq**2 + a1 * self.L_sq + a0)
        if expr == 0:
            return True
        return sympy.simplify(expr) == 0


@dataclass(frozen=True)
class FloatParams:
    """Floating ``(L^2, K)``; defect tests use ``rel_tol`` relative to max |lambda|."""

    L_sq: float
    K: float = 0.0
    rel_tol: float = 1e-9

    @property
    def L(self) -> float:
        return math.sqrt(self.L_sq)


def _lam(v: WaveVector, L: float, K: float) -> float:
    return -(v.kx / L) / (K + (v.kx / L) ** 2 + v.ky**2)


def defect(j, n, L: float, K: float = 0.0) -> float:
    """Floating ``lambda_j + lambda_n - lambda_{j+n}``."""
    j, n = WaveVector(*j), WaveVector(*n)
    K = float(K)
    return _lam(j, L, K) + _lam(n, L, K) - _lam(j + n, L, K)


def _defect_is_zero(j, n, params) -> bool:
    if isinstance(params, FloatParams):
        lams = [_lam(v, params.L, params.K) for v in (j, n, j + n)]
        scale = max(abs(x) for x in lams)
        return abs(lams[0] + lams[1] - lams[2]) <= params.rel_tol * scale
    return params.is_root(resonance_polynomial(j, n, params.K))


@dataclass(frozen=True)
class ResonanceTriple:
    j: WaveVector
    n: WaveVector
    k: WaveVector
    defect: float
    cls: str

    def row(self) -> tuple:
        return (*self.j, *self.n, *self.k, self.cls, self.defect)


def classify_triple(j, n, params) -> ResonanceTriple:
    """Classify the triad ``j + n = k``.

    The zero-defect decision is exact for :class:`RationalParams` and
    :class:`AlgebraicParams`; :class:`FloatParams` uses its tolerance.
    """
    j, n = WaveVector(*j), WaveVector(*n)
    if j.kx + n.kx == 0 and j.ky + n.ky == 0:
        raise ValueError("j + n = 0 is not a triad")
    k = j + n
    d = defect(j, n, params.L, float(params.K))
    if not _defect_is_zero(j, n, params):
        cls = NONRESONANT
    elif j.kx and n.kx and k.kx:
        cls = STRONG
    elif j.kx == 0 and n.kx == 0:
        cls = TRIVIAL
    elif k.kx == 0:
        cls = WEAK_I
    elif j.kx == 0:
        cls = WEAK_II
    else:
        cls = WEAK_III
    if cls != NONRESONANT:
        d = 0.0
    return ResonanceTriple(j, n, k, d, cls)


def _solve_quadratic(a2: float, a1: float, a0: float) -> list[float]:
    if a2 == 0:
        return [] if a1 == 0 else [-a0 / a1]
    disc = a1 * a1 - 4 * a2 * a0
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (a1 + math.copysign(sq, a1))
    roots = [q / a2]
    if q != 0:
        roots.append(a0 / q)
    return roots


def strongly_resonant_L_values(j, n, K=0) -> list[float]:
    """Periods ``L > 0`` at which ``j + n = k`` is a strong resonance.

    Returns at most two values, sorted.
    """
    j, n = WaveVector(*j), WaveVector(*n)
    k = j + n
    if not (j.kx and n.kx and k.kx):
        raise ValueError("strong resonance needs jx, nx, kx all nonzero")
    a2, a1, a0 = resonance_polynomial(j, n, K)
    # nonzero constant term makes Q nontrivial
    assert a0 == j.kx * n.kx * k.kx * (k.kx**2 + n.kx**2 - k.kx * n.kx) != 0
    out = []
    for u in _solve_quadratic(float(a2), float(a1), float(a0)):
        if u <= 0:
            continue
        # one Newton step in u against the exact coefficients
        q = float(a2 * Fraction(u) ** 2 + a1 * Fraction(u) + a0)
        dq = 2 * float(a2) * u + float(a1)
        if dq != 0:
            u -= q / dq
        if u > 0:
            out.append(math.sqrt(u))
    return sorted(set(out))


def enumerate_triples(lattice: Lattice) -> Iterable[tuple[WaveVector, WaveVector]]:
    """All ordered ``(j, n)`` with ``j, n, j + n`` in the truncated lattice."""
    full = lattice.full_modes
    for j in full:
        for n in full:
            if (j.kx + n.kx, j.ky + n.ky) == (0, 0):
                continue
            if lattice.contains((j.kx + n.kx, j.ky + n.ky)):
                yield j, n


@dataclass
class ResonanceCertificate:
    strongly_resonant: bool
    witnesses: list[ResonanceTriple] = field(default_factory=list)
    degenerate_modes: list[WaveVector] = field(default_factory=list)
    cutoff: float = 0.0
    path: str = "exact"

    def to_json(self) -> dict:
        return {
            "strongly_resonant": self.strongly_resonant,
            "cutoff": self.cutoff,
            "path": self.path,
            "witnesses": [
                {"j": list(t.j), "n": list(t.n), "k": list(t.k)} for t in self.witnesses
            ],
            "degenerate_modes": [list(k) for k in self.degenerate_modes],
        }


def _is_degenerate_mode(k: WaveVector, params) -> bool:
    """``3 L^2 ky^2 == kx^2`` (the effective coefficient vanishes)."""
    if k.ky == 0 or k.kx == 0:
        return False
    if isinstance(params, FloatParams):
        return abs(3 * params.L_sq * k.ky**2 - k.kx**2) <= params.rel_tol * k.kx**2
    if isinstance(params, AlgebraicParams):
        return sympy.simplify(3 * params.L_sq * k.ky**2 - k.kx**2) == 0
    return 3 * params.L_sq * k.ky**2 == k.kx**2


def is_strongly_resonant_pair(params, cutoff: float) -> ResonanceCertificate:
    """Exhaustive scan for strong resonances with all of ``|j_L|, |n_L|, |k_L| <= cutoff``.

    A negative answer is a non-resonance certificate relative to the cutoff only.
    """
    lattice = Lattice(params.L, cutoff)
    witnesses = []
    for j, n in enumerate_triples(lattice):
        k = j + n
        if not (j.kx and n.kx and k.kx):
            continue
        # (j, n) and (n, j) share Q; report the pair once
        if (n.kx, n.ky) < (j.kx, j.ky):
            continue
        if _defect_is_zero(j, n, params):
            witnesses.append(ResonanceTriple(j, n, k, 0.0, STRONG))
    degenerate = [k for k in lattice.modes if _is_degenerate_mode(k, params)]
    path = {RationalParams: "exact", AlgebraicParams: "symbolic", FloatParams: "float"}
    return ResonanceCertificate(bool(witnesses), witnesses, degenerate, float(cutoff),
                                path[type(params)])


def triad_defects(lattice: Lattice, K: float, js, ns) -> np.ndarray:
    """Vectorised floating defects for index-free triad lists."""
    L = lattice.L
    js = np.asarray(js, dtype=float)
    ns = np.asarray(ns, dtype=float)
    ks = js + ns

    def lam(v):
        return -(v[:, 0] / L) / (K + (v[:, 0] / L) ** 2 + v[:, 1] ** 2)

    return lam(js) + lam(ns) - lam(ks)
