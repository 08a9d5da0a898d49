"""Action-law statistics: marginal Wasserstein distances, bootstrap, large-beta studies.

The distance between two action laws is a weighted sum of one-dimensional
Wasserstein-1 distances between the per-mode action marginals, with weights
``w_k ~ (1 + |k_L|^2)^(2 - gamma')`` normalised to sum to one. It is a
computable stand-in for a Lipschitz-dual distance on the joint law and
vanishes whenever that distance does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .integrator import Ensemble, IntegratorConfig, run_ensemble
from .lattice import ModelParams, WaveVector
from .resonance import ResonanceCertificate, is_strongly_resonant_pair

__all__ = [
    "marginal_w1",
    "mode_weights",
    "EmpiricalActionLaw",
    "DistanceReport",
    "action_law_distance",
    "stationary_action_law",
    "StudyRow",
    "StudyResult",
    "CertificateError",
    "beta_convergence_study",
    "exp_moment_estimate",
]

DEFAULT_GAMMA_PRIME = 0.5
DEFAULT_TRACKED_RADIUS = 4.0


class CertificateError(RuntimeError):
    """Raised when a study needs a non-resonance certificate and none is available."""


def marginal_w1(samples_a, samples_b) -> float:
    """Wasserstein-1 distance between two empirical laws on the line.

    Equal sample sizes use the sorted coupling directly; otherwise the
    quantile functions are compared by ``scipy.stats.wasserstein_distance``.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


def _w1_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise W1 for ``(n, ...)`` arrays sharing trailing shape."""
    if a.shape[0] == b.shape[0]:
        return np.mean(np.abs(np.sort(a, axis=0) - np.sort(b, axis=0)), axis=0)
    flat_a = a.reshape(a.shape[0], -1)
    flat_b = b.reshape(b.shape[0], -1)
    out = [stats.wasserstein_distance(flat_a[:, i], flat_b[:, i]) for i in range(flat_a.shape[1])]
    return np.array(out).reshape(a.shape[1:])


def mode_weights(modes: Sequence[WaveVector], L: float,
                 gamma_prime: float = DEFAULT_GAMMA_PRIME) -> np.ndarray:
    w = np.array([(1.0 + WaveVector(*k).norm_sq(L)) ** (2.0 - gamma_prime) for k in modes])
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class EmpiricalActionLaw:
    """Sampled actions ``I_k = |v_k|^2 / 2`` of an ensemble.

    ``actions`` has shape ``(n_paths, n_obs, n_modes)``. With ``pooled`` the
    ``n_obs`` observations of a path are draws of one law (stationary case);
    otherwise they are the laws at ``times`` and distances are averaged over
    them. Bootstrap resampling always acts on whole paths.
    """

    actions: np.ndarray
    modes: tuple[WaveVector, ...]
    weights: np.ndarray
    times: np.ndarray | None = None
    pooled: bool = False

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=float)
        if a.ndim == 2:
            a = a[:, None, :]
        if a.ndim != 3 or a.shape[2] != len(self.modes):
            raise ValueError("actions must have shape (n_paths, n_obs, n_modes)")
        if np.any(a < 0):
            raise ValueError("actions must be nonnegative")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.modes),) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "modes", tuple(WaveVector(*k) for k in self.modes))

    @property
    def n_paths(self) -> int:
        return self.actions.shape[0]

    @classmethod
    def from_ensemble(cls, ens: Ensemble, times: Sequence[float] | None = None,
                      radius: float = DEFAULT_TRACKED_RADIUS,
                      gamma_prime: float = DEFAULT_GAMMA_PRIME) -> "EmpiricalActionLaw":
        """Laws at the given recording times (default: the last one)."""
        times = [ens.times[-1]] if times is None else list(times)
        idx = [ens.time_index(t) for t in times]
        lat = ens.lattice
        cols = [i for i, k in enumerate(lat.modes) if k.norm_sq(lat.L) <= radius**2 * (1 + 1e-12)]
        modes = tuple(lat.modes[i] for i in cols)
        acts = ens.actions()[:, idx][:, :, cols]
        return cls(acts, modes, mode_weights(modes, lat.L, gamma_prime),
                   np.array(times, dtype=float), pooled=False)

    def marginals(self, rows=None) -> np.ndarray:
        """Samples per law: ``(n_samples, n_obs, n_modes)`` or, pooled, ``(n_samples, 1, n_modes)``."""
        a = self.actions if rows is None else self.actions[rows]
        if self.pooled:
            return a.reshape(-1, 1, a.shape[2])
        return a

    def mean_action(self) -> np.ndarray:
        return self.actions.mean(axis=(0, 1))

    def mean_action_se(self) -> np.ndarray:
        """Standard error from per-path means (paths are independent)."""
        per_path = self.actions.mean(axis=1)
        return per_path.std(axis=0, ddof=1) / math.sqrt(self.n_paths)


@dataclass(frozen=True)
class DistanceReport:
    per_mode_w1: dict
    aggregate: float
    bootstrap_ci: tuple[float, float]
    weights: dict = field(default_factory=dict)
    n_boot: int = 0

    @property
    def ci_width(self) -> float:
        return self.bootstrap_ci[1] - self.bootstrap_ci[0]

    @property
    def ci_half_width(self) -> float:
        return 0.5 * self.ci_width

    def to_json(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "ci_low": self.bootstrap_ci[0],
            "ci_high": self.bootstrap_ci[1],
            "n_boot": self.n_boot,
            "per_mode": [
                {"kx": k[0], "ky": k[1], "w1": w, "weight": self.weights.get(k, 0.0)}
                for k, w in self.per_mode_w1.items()
            ],
        }


def _per_mode(A: EmpiricalActionLaw, B: EmpiricalActionLaw, ra=None, rb=None) -> np.ndarray:
    # mean over observation times of the per-(time, mode) W1
    return _w1_columns(A.marginals(ra), B.marginals(rb)).mean(axis=0)


def action_law_distance(A: EmpiricalActionLaw, B: EmpiricalActionLaw, n_boot: int = 1000,
                        seed: int = 0, paired: bool = False,
                        level: float = 0.95) -> DistanceReport:
    """Weighted per-mode W1 between two action laws, with a path bootstrap CI.

    ``paired`` resamples the same path indices in both ensembles; use it when
    path ``p`` of ``A`` and ``B`` share their random increments.
    """
    if A.modes != B.modes or not np.array_equal(A.weights, B.weights):
        raise ValueError("the two laws track different modes or weights")
    if A.pooled != B.pooled or (not A.pooled and A.actions.shape[1:] != B.actions.shape[1:]):
        raise ValueError("the two laws are observed at different times")
    if A.n_paths < 2 or B.n_paths < 2:
        raise ValueError("at least two paths per law are needed")
    if paired and A.n_paths != B.n_paths:
        raise ValueError("paired bootstrap needs equal path counts")
    per_mode = _per_mode(A, B)
    agg = float(per_mode @ A.weights)
    boots = np.empty(n_boot)
    rng = np.random.default_rng(seed)
    for i in range(n_boot):
        ra = rng.integers(0, A.n_paths, A.n_paths)
        rb = ra if paired else rng.integers(0, B.n_paths, B.n_paths)
        boots[i] = _per_mode(A, B, ra, rb) @ A.weights
    alpha = 0.5 * (1.0 - level)
    if n_boot:
        lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    else:
        lo = hi = agg
    return DistanceReport(
        per_mode_w1={k: float(w) for k, w in zip(A.modes, per_mode)},
        aggregate=agg,
        bootstrap_ci=(float(lo), float(hi)),
        weights={k: float(w) for k, w in zip(A.modes, A.weights)},
        n_boot=n_boot,
    )


def stationary_action_law(params: ModelParams, config: IntegratorConfig, burn_in: float,
                          n_paths: int, initial=None, system: str = "full", stride: int = 10,
                          radius: float = DEFAULT_TRACKED_RADIUS,
                          gamma_prime: float = DEFAULT_GAMMA_PRIME,
                          ensemble: Ensemble | None = None) -> EmpiricalActionLaw:
    """Pool post-burn-in actions over paths and recording times.

    Every ``stride``-th recording time after ``burn_in`` is kept.
    """
    if not burn_in < config.t_final:
        raise ValueError("burn_in must be smaller than t_final")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ens = ensemble if ensemble is not None else run_ensemble(initial, params, config, n_paths, system)
    times = [t for t in ens.times if t > burn_in][::stride]
    if len(times) * ens.n_paths < 2:
        raise ValueError("not enough post-burn-in samples")
    law = EmpiricalActionLaw.from_ensemble(ens, times, radius, gamma_prime)
    return EmpiricalActionLaw(law.actions, law.modes, law.weights, law.times, pooled=True)


@dataclass(frozen=True)
class StudyRow:
    beta: float
    kappa: float
    report: DistanceReport

    def as_dict(self) -> dict:
        lo, hi = self.report.bootstrap_ci
        return {"beta": self.beta, "kappa": self.kappa,
                "aggregate_distance": self.report.aggregate, "ci_low": lo, "ci_high": hi}


@dataclass
class StudyResult:
    rows: list[StudyRow]
    certificate: ResonanceCertificate | None
    exploratory: bool = False
    null: DistanceReport | None = None

    def by_kappa(self, kappa: float) -> list[StudyRow]:
        return sorted((r for r in self.rows if r.kappa == kappa), key=lambda r: r.beta)

    def monotone_decreasing(self, kappa: float) -> bool:
        """Each step in beta lowers the distance by more than both CI half-widths combined."""
        rows = self.by_kappa(kappa)
        return all(
            a.report.aggregate - b.report.aggregate > a.report.ci_half_width + b.report.ci_half_width
            for a, b in zip(rows, rows[1:])
        )

    def kappa_spread(self, beta: float) -> float:
        """Ratio of the largest to the smallest distance across kappa at ``beta``."""
        vals = [r.report.aggregate for r in self.rows if r.beta == beta]
        return max(vals) / min(vals) if vals and min(vals) > 0 else math.inf

    def null_ok(self) -> bool | None:
        if self.null is None:
            return None
        return self.null.aggregate < self.null.ci_width

    def verdicts(self) -> dict:
        kappas = sorted({r.kappa for r in self.rows})
        betas = sorted({r.beta for r in self.rows})
        out = {
            "exploratory": self.exploratory,
            "monotone_decreasing": {str(k): self.monotone_decreasing(k) for k in kappas},
        }
        if len(kappas) > 1:
            out["kappa_spread"] = {str(b): self.kappa_spread(b) for b in betas
                                   if sum(r.beta == b for r in self.rows) > 1}
        if self.null is not None:
            out["null_calibration"] = {"aggregate": self.null.aggregate,
                                       "ci_width": self.null.ci_width, "ok": self.null_ok()}
        return out


def _certify(params: ModelParams, certificate, override: bool):
    if certificate is None:
        certificate = is_strongly_resonant_pair(params.resonance_params(), params.cutoff)
    if certificate.strongly_resonant and not override:
        raise CertificateError("(L, K) is strongly resonant within the cutoff; pass override to run")
    return certificate


def beta_convergence_study(params_base: ModelParams, betas: Sequence[float],
                           config: IntegratorConfig, n_paths: int, initial=None,
                           kappas: Sequence[float] | None = None,
                           uniformity_beta: float | None = None,
                           times: Sequence[float] | None = None,
                           coupling: str = "shared", null_seed: int | None = None,
                           n_boot: int = 1000, certificate: ResonanceCertificate | None = None,
                           override_resonant: bool = False) -> StudyResult:
    """Distance between the full and the effective action laws as beta grows.

    The full equation is integrated in interaction variables; its actions
    coincide with those of the original variables. With ``coupling="shared"``
    the full and effective ensembles use the same increments, path by path,
    and the bootstrap is paired; ``"independent"`` offsets the effective seed.
    ``kappas`` other than ``params_base.kappa`` are run at ``uniformity_beta``
    (default: the largest beta). ``null_seed`` adds a second full ensemble at
    the largest beta for the null calibration.
    """
    if list(betas) != sorted(betas):
        raise ValueError("betas must be increasing")
    if coupling not in ("shared", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    cert = _certify(params_base, certificate, override_resonant)
    paired = coupling == "shared"
    eff_config = config if paired else config.replace(seed=config.seed + 1)
    times = list(config.record_times[1:] if times is None else times)
    base_kappa = params_base.kappa
    u_beta = max(betas) if uniformity_beta is None else uniformity_beta
    plan = [(b, base_kappa) for b in betas]
    plan += [(u_beta, k) for k in (kappas or []) if k != base_kappa]

    eff_cache: dict[float, EmpiricalActionLaw] = {}
    rows = []
    last_full = None
    for beta, kappa in plan:
        p = params_base.replace(beta=beta, kappa=kappa)
        if kappa not in eff_cache:
            eff = run_ensemble(initial, p, eff_config, n_paths, "effective")
            eff_cache[kappa] = EmpiricalActionLaw.from_ensemble(eff, times)
        full = EmpiricalActionLaw.from_ensemble(
            run_ensemble(initial, p, config, n_paths, "interaction"), times)
        if beta == max(betas) and kappa == base_kappa:
            last_full = (p, full)
        rows.append(StudyRow(beta, kappa, action_law_distance(full, eff_cache[kappa], n_boot,
                                                               paired=paired)))
    null = None
    if null_seed is not None and last_full is not None:
        p, full = last_full
        other = EmpiricalActionLaw.from_ensemble(
            run_ensemble(initial, p, config.replace(seed=null_seed), n_paths, "interaction"), times)
        null = action_law_distance(full, other, n_boot, paired=False)
    return StudyResult(rows, cert, exploratory=cert.strongly_resonant, null=null)


def exp_moment_estimate(ens: Ensemble, p: float, eps: float, t: float | None = None,
                        return_se: bool = False):
    """Sample mean of ``exp(eps |v(t)|_{h^p}^2)`` over paths, accumulated in log space.

    With ``return_se`` also returns the standard error of the mean.
    """
    if not eps >= 0:
        raise ValueError("eps must be nonnegative")
    i = len(ens.times) - 1 if t is None else ens.time_index(t)
    amp = ens.amplitudes[:, i, :]
    norm_sq = 2.0 * np.sum(ens.lattice.kL2**p * np.abs(amp) ** 2, axis=1)
    x = eps * norm_sq
    n = len(x)
    log_mean = logsumexp(x) - math.log(n)
    if math.isinf(log_mean) or log_mean > 700:
        raise OverflowError("exponential moment overflows; reduce eps")
    mean = math.exp(log_mean)
    if not return_se:
        return mean
    # E[X^2] in log space as well
    log_m2 = logsumexp(2 * x) - math.log(n)
    var = max(math.exp(log_m2) - mean**2, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)
