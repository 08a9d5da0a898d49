"""Triad-sum nonlinearity of the truncated beta-plane equation.

Each ordered triad ``j + n = k`` with ``k`` stored and ``j, n, k`` inside the
cutoff contributes

    rho / (L (K + |k_L|^2)) * |n_L|^2 (j x n) v_j v_n

to ``P_k``. The table keeps every such triad with its exact resonance flag, so
the full, resonant and nonresonant parts are row masks of one sparse sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .lattice import Lattice, ModelParams, SpectralState, WaveVector
from .resonance import _defect_is_zero, triad_defects

__all__ = [
    "TriadTable",
    "triad_table",
    "full_nonlinearity",
    "resonant_part",
    "nonresonant_part",
    "oscillatory_part",
]


@dataclass(frozen=True, eq=False)
class TriadTable:
    lattice: Lattice
    K: float
    k_idx: np.ndarray
    j_idx: np.ndarray
    j_conj: np.ndarray
    n_idx: np.ndarray
    n_conj: np.ndarray
    coeff: np.ndarray  # without the factor rho
    defect: np.ndarray
    resonant: np.ndarray

    @property
    def size(self) -> int:
        return len(self.k_idx)

    def _matrix(self, mask) -> sp.csc_matrix:
        rows = np.flatnonzero(mask)
        return sp.csc_matrix(
            (self.coeff[rows], (np.arange(len(rows)), self.k_idx[rows])),
            shape=(len(rows), self.lattice.size),
        )

    def __post_init__(self):
        res = self.resonant
        object.__setattr__(self, "_rows_res", np.flatnonzero(res))
        object.__setattr__(self, "_rows_nr", np.flatnonzero(~res))
        object.__setattr__(self, "_S_all", self._matrix(np.ones_like(res)))
        object.__setattr__(self, "_S_res", self._matrix(res))
        object.__setattr__(self, "_S_nr", self._matrix(~res))

    def _products(self, v: np.ndarray, rows=None) -> np.ndarray:
        # index into [v, conj(v)] so that negative-half modes are plain gathers
        m = self.lattice.size
        jj = self.j_idx + m * self.j_conj
        nn = self.n_idx + m * self.n_conj
        if rows is not None:
            jj, nn = jj[rows], nn[rows]
        both = np.concatenate([v, v.conj()], axis=-1)
        return both[..., jj] * both[..., nn]

    @staticmethod
    def _apply(prod: np.ndarray, S: sp.csc_matrix) -> np.ndarray:
        flat = prod.reshape(-1, prod.shape[-1])
        out = np.asarray((S.T @ flat.T).T)
        return out.reshape(prod.shape[:-1] + (S.shape[1],))

    def full(self, v: np.ndarray) -> np.ndarray:
        """``P(v) / rho`` for amplitude arrays of shape ``(..., n_modes)``."""
        return self._apply(self._products(v), self._S_all)

    def resonant_sum(self, v: np.ndarray) -> np.ndarray:
        return self._apply(self._products(v, self._rows_res), self._S_res)

    def nonresonant_sum(self, v: np.ndarray) -> np.ndarray:
        return self._apply(self._products(v, self._rows_nr), self._S_nr)

    def oscillatory_sum(self, a: np.ndarray, phase_time: float) -> np.ndarray:
        """Nonresonant triads weighted by ``exp(-i phase_time * defect)``; ``phase_time = beta t``."""
        rows = self._rows_nr
        ph = np.exp(-1j * phase_time * self.defect[rows])
        return self._apply(self._products(a, rows) * ph, self._S_nr)


@lru_cache(maxsize=32)
def _cached_table(L: float, K: float, cutoff: float, res_params) -> TriadTable:
    lattice = Lattice.of(L, cutoff)
    full = lattice.full_modes
    rows = []
    for ki, k in enumerate(lattice.modes):
        for j in full:
            n = (k.kx - j.kx, k.ky - j.ky)
            if n == (0, 0) or not lattice.contains(n):
                continue
            rows.append((ki, j, n))
    k_idx = np.array([r[0] for r in rows], dtype=np.intp)
    loc_j = [lattice.locate(r[1]) for r in rows]
    loc_n = [lattice.locate(r[2]) for r in rows]
    js = np.array([r[1] for r in rows], dtype=float).reshape(-1, 2)
    ns = np.array([r[2] for r in rows], dtype=float).reshape(-1, 2)
    nL2 = (ns[:, 0] / L) ** 2 + ns[:, 1] ** 2
    cross = js[:, 0] * ns[:, 1] - js[:, 1] * ns[:, 0]
    coeff = nL2 * cross / (L * (K + lattice.kL2[k_idx]))
    defect = triad_defects(lattice, K, js, ns)
    # the defect depends on the unordered pair only
    cache: dict = {}
    resonant = np.empty(len(rows), dtype=bool)
    for t, (_, j, n) in enumerate(rows):
        key = (min(tuple(j), n), max(tuple(j), n))
        if key not in cache:
            cache[key] = _defect_is_zero(j, WaveVector(*n), res_params)
        resonant[t] = cache[key]
    return TriadTable(
        lattice=lattice,
        K=K,
        k_idx=k_idx,
        j_idx=np.array([l[0] for l in loc_j], dtype=np.intp),
        j_conj=np.array([l[1] for l in loc_j], dtype=bool),
        n_idx=np.array([l[0] for l in loc_n], dtype=np.intp),
        n_conj=np.array([l[1] for l in loc_n], dtype=bool),
        coeff=coeff,
        defect=np.where(resonant, 0.0, defect),
        resonant=resonant,
    )


def triad_table(params: ModelParams) -> TriadTable:
    return _cached_table(float(params.L), float(params.K), float(params.cutoff),
                         params.resonance_params())


def _checked(v: SpectralState, params: ModelParams) -> SpectralState:
    try:
        return v.restrict(params.lattice)
    except ValueError as exc:
        raise ValueError(f"state support exceeds the cutoff {params.cutoff}") from exc


def full_nonlinearity(v: SpectralState, params: ModelParams) -> SpectralState:
    """``P(v)`` with triadic Galerkin truncation."""
    v = _checked(v, params)
    return v.with_amplitudes(params.rho * triad_table(params).full(v.amplitudes))


def resonant_part(v: SpectralState, params: ModelParams) -> SpectralState:
    """``R(v)`` by direct summation over exactly resonant triads."""
    v = _checked(v, params)
    return v.with_amplitudes(params.rho * triad_table(params).resonant_sum(v.amplitudes))


def nonresonant_part(v: SpectralState, params: ModelParams) -> SpectralState:
    v = _checked(v, params)
    return v.with_amplitudes(params.rho * triad_table(params).nonresonant_sum(v.amplitudes))


def oscillatory_part(a: SpectralState, t: float, params: ModelParams) -> SpectralState:
    """Nonresonant triads in interaction variables at time ``t`` (phase ``beta t``)."""
    a = _checked(a, params)
    out = triad_table(params).oscillatory_sum(a.amplitudes, params.beta * t)
    return a.with_amplitudes(params.rho * out)
