"""Resonant averaging of trigonometric polynomials on a torus.

``resonant_average`` keeps the harmonics ``s`` with ``s . W = 0``;
``eta_average`` computes the same object as an integral over the directions
orthogonal to the resonance module, using an integer basis obtained by
unimodular column reduction. The two routes are independent and are checked
against each other in the tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "TrigPolynomial",
    "ResonanceModuleBasis",
    "resonance_set",
    "module_basis",
    "resonant_average",
    "eta_average",
    "weyl_time_average",
    "integer_det",
]


@dataclass(frozen=True)
class TrigPolynomial:
    """``f(phi) = sum_s f_s exp(i s . phi)`` on the ``dim``-torus."""

    dim: int
    terms: Mapping[tuple[int, ...], complex] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for s, c in self.terms.items():
            s = tuple(int(x) for x in s)
            if len(s) != self.dim:
                raise ValueError(f"harmonic {s} has wrong dimension")
            if c != 0:
                clean[s] = clean.get(s, 0) + complex(c)
        object.__setattr__(self, "terms", clean)

    @property
    def degree(self) -> int:
        return max((sum(abs(x) for x in s) for s in self.terms), default=0)

    @classmethod
    def random(cls, dim: int, degree: int, rng: np.random.Generator,
               density: float = 0.5) -> "TrigPolynomial":
        terms = {}
        for s in _l1_ball(dim, degree):
            if rng.random() < density:
                terms[s] = complex(rng.standard_normal(), rng.standard_normal())
        return cls(dim, terms)

    def __call__(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if not self.terms:
            return np.zeros(phi.shape[:-1], dtype=complex)
        S = np.array(list(self.terms), dtype=float)
        c = np.array(list(self.terms.values()))
        return np.exp(1j * phi @ S.T) @ c

    def coef_sum(self) -> float:
        return float(sum(abs(c) for c in self.terms.values()))


def _l1_ball(n: int, m: int):
    for s in itertools.product(range(-m, m + 1), repeat=n):
        if sum(abs(x) for x in s) <= m:
            yield s


def _dot(W, s):
    return sum(w * x for w, x in zip(W, s))


def _is_resonant(W, s, tol) -> bool:
    d = _dot(W, s)
    return d == 0 if tol == 0 else abs(d) <= tol


def resonance_set(W: Sequence, m: int, tol: float = 0.0) -> list[tuple[int, ...]]:
    """``{s : |s|_1 <= m, |W . s| <= tol}``; exact when ``tol == 0`` and ``W`` is rational."""
    if m < 1 or len(W) < 1:
        raise ValueError("need m >= 1 and dim >= 1")
    if tol == 0:
        W = [Fraction(w) if isinstance(w, int) else w for w in W]
    return [s for s in _l1_ball(len(W), m) if _is_resonant(W, s, tol)]


def _egcd(a: int, b: int) -> tuple[int, int, int]:
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def integer_det(M: Sequence[Sequence[int]]) -> int:
    """Exact determinant by fraction-free (Bareiss) elimination."""
    A = [list(map(int, row)) for row in M]
    n = len(A)
    sign, prev = 1, 1
    for k in range(n - 1):
        if A[k][k] == 0:
            for i in range(k + 1, n):
                if A[i][k] != 0:
                    A[k], A[i] = A[i], A[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1] if n else 1


@dataclass(frozen=True)
class ResonanceModuleBasis:
    """Unimodular ``R`` whose first ``r`` columns span the resonance module over R.

    ``eta`` holds the columns ``(R^T)^{-1} e^j`` for ``j > r``; they are integer
    because ``R`` is unimodular.
    """

    n: int
    r: int
    R: np.ndarray
    R_inv: np.ndarray
    eta: np.ndarray  # shape (n - r, n)

    @property
    def det(self) -> int:
        return integer_det(self.R.tolist())


def module_basis(A, n: int) -> ResonanceModuleBasis:
    """Integer basis of ``span(A)`` completed to a unimodular matrix.

    Column operations reduce the matrix with rows ``A`` to ``[H | 0]``, i.e.
    ``A U = [H | 0]`` with ``U`` unimodular. Then ``R = (U^T)^{-1}`` and
    ``R^{-1} s = U^T s`` has zero tail for every ``s`` in ``A``.
    """
    M = [list(map(int, s)) for s in A]
    for s in M:
        if len(s) != n:
            raise ValueError("vector of wrong dimension")
    U = [[int(i == j) for j in range(n)] for i in range(n)]

    def colop(p, q, x, y, u, w):
        # col_p, col_q <- x col_p + y col_q, u col_p + w col_q
        for mat in (M, U):
            for row in mat:
                a, b = row[p], row[q]
                row[p], row[q] = x * a + y * b, u * a + w * b

    def swap(p, q):
        for mat in (M, U):
            for row in mat:
                row[p], row[q] = row[q], row[p]

    r = 0
    for row in M:
        if r == n:
            break
        for q in range(r + 1, n):
            a, b = row[r], row[q]
            if b == 0:
                continue
            g, x, y = _egcd(a, b)
            colop(r, q, x, y, -b // g, a // g)
        if row[r] == 0:
            q = next((q for q in range(r + 1, n) if row[q] != 0), None)
            if q is None:
                continue
            swap(r, q)
        if row[r] < 0:
            colop(r, r, -1, 0, -1, 0)
        r += 1

    U_arr = np.array(U, dtype=np.int64)
    R_inv = U_arr.T.copy()
    R = np.rint(np.linalg.inv(R_inv.astype(float))).astype(np.int64)
    if not np.array_equal(R @ R_inv, np.eye(n, dtype=np.int64)):
        raise ArithmeticError("unimodular inverse failed")
    eta = U_arr[:, r:].T.copy()
    return ResonanceModuleBasis(n=n, r=r, R=R, R_inv=R_inv, eta=eta)


def resonant_average(f: TrigPolynomial, W: Sequence, m: int | None = None,
                     tol: float = 1e-9) -> TrigPolynomial:
    """Keep the harmonics of ``f`` resonant with ``W`` (order ``m``)."""
    m = f.degree if m is None else m
    if f.degree > m:
        raise ValueError(f"degree {f.degree} exceeds the order {m}")
    exact = tol == 0
    terms = {s: c for s, c in f.terms.items()
             if _is_resonant(W if not exact else [Fraction(w) for w in W], s, tol)}
    return TrigPolynomial(f.dim, terms)


def eta_average(f: TrigPolynomial, W: Sequence, phi, m: int | None = None,
                tol: float = 1e-9) -> np.ndarray:
    """Average of ``f(phi + sum_j theta_j eta^j)`` over ``theta`` in the ``(n - r)``-torus.

    The integrand is a trigonometric polynomial in ``theta`` with integer
    frequencies, so a uniform grid one point wider than twice the largest
    frequency integrates it exactly.
    """
    m = f.degree if m is None else m
    if f.degree > m:
        raise ValueError(f"degree {f.degree} exceeds the order {m}")
    basis = module_basis(resonance_set(W, m, tol) if m >= 1 else [], f.dim)
    phi = np.asarray(phi, dtype=float)
    eta = basis.eta
    if eta.shape[0] == 0:
        return f(phi)
    S = np.array(list(f.terms) or [[0] * f.dim])
    top = int(np.abs(S @ eta.T).max())
    npts = 2 * top + 1
    grid = 2 * np.pi * np.arange(npts) / npts
    thetas = np.array(list(itertools.product(grid, repeat=eta.shape[0])))
    shifts = thetas @ eta  # (n_nodes, n)
    vals = f(phi[..., None, :] + shifts)
    return vals.mean(axis=-1)


def weyl_time_average(f: TrigPolynomial, W: Sequence, phi, T: float,
                      tol: float = 0.0) -> complex:
    """``(1/T) int_0^T f(phi + t W) dt``, integrated harmonic by harmonic."""
    phi = np.asarray(phi, dtype=float)
    W = np.asarray([float(w) for w in W])
    total = 0j
    for s, c in f.terms.items():
        s_arr = np.array(s, dtype=float)
        omega = float(s_arr @ W)
        base = c * np.exp(1j * float(s_arr @ phi))
        if abs(omega) <= tol or omega == 0.0:
            total += base
        else:
            total += base * (np.exp(1j * omega * T) - 1.0) / (1j * omega * T)
    return complex(total)
