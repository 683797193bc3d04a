"""Cross-system checks: covariations, W_2 convergence, moments, exchangeability."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .finite_system import FiniteSimConfig, TrajectoryBundle, simulate_finite
from .limit_system import LimitSimConfig, simulate_limit
from .measure import EmpiricalMeasure1D, wasserstein
from .model import ModelSpec, sigma_xi_pair

__all__ = [
    "CovariationEstimate",
    "estimate_covariation",
    "aggregate_covariation",
    "covariation_study",
    "ConvergenceRow",
    "convergence_study",
    "convergence_replication",
    "summarize_convergence",
    "MomentAuditReport",
    "moment_audit",
    "moment_audit_samples",
    "sup_square",
    "exchangeability_ks",
]


@dataclass
class CovariationEstimate:
    """Realized vs predicted covariation of the jump terms of two particles.

    Paths live on the step grid. ``stderr`` is the across-replication
    standard error of ``realized`` (NaN for a single replication).
    """

    times: np.ndarray
    pair: tuple
    realized: np.ndarray
    theoretical: np.ndarray
    reps: int = 1
    stderr: np.ndarray | None = None

    @property
    def endpoint_ratio(self) -> float:
        return float(self.realized[-1] / self.theoretical[-1])


def estimate_covariation(bundle: TrajectoryBundle, pair, model: ModelSpec) -> CovariationEstimate:
    """Sum of products of the two particles' jump increments, against
    ``c * int_0^t int f dmu^N ds`` with ``c = xi^2`` (distinct) or ``varsigma^2`` (same)."""
    if bundle.jump_log is None:
        raise ValueError("bundle has no jump log; simulate with record_jump_log=True")
    i, j = pair
    n_steps = bundle.meta.get("n_steps", bundle.mean_rate.size)
    dt = bundle.dt
    per_step = np.zeros(n_steps)
    for ev in bundle.jump_log:
        s = min(int(ev.time // dt), n_steps - 1)
        per_step[s] += ev.increments[i] * ev.increments[j]
    realized = np.concatenate([[0.0], np.cumsum(per_step)])
    varsigma2, xi2 = sigma_xi_pair(model)
    coef = varsigma2 if i == j else xi2
    theoretical = coef * np.concatenate([[0.0], np.cumsum(bundle.mean_rate * dt)])
    times = np.arange(n_steps + 1) * dt
    return CovariationEstimate(times, (i, j), realized, theoretical)


def aggregate_covariation(estimates: Sequence[CovariationEstimate]) -> CovariationEstimate:
    real = np.array([e.realized for e in estimates])
    theo = np.array([e.theoretical for e in estimates])
    n = len(estimates)
    se = real.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(real.shape[1], np.nan)
    return CovariationEstimate(estimates[0].times, estimates[0].pair, real.mean(axis=0), theo.mean(axis=0), n, se)


def covariation_study(model: ModelSpec, N: int, T: float, dt: float | None, seed: int, reps: int,
                      pair=(0, 1)) -> CovariationEstimate:
    ests = []
    for r in range(reps):
        cfg = FiniteSimConfig(model, N, T, dt, seed, record_jump_log=True, output_grid=[T], replication=r)
        ests.append(estimate_covariation(simulate_finite(cfg), pair, model))
    return aggregate_covariation(ests)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    median_w2: float
    iqr: float
    reps: int
    seed: int


def convergence_replication(model: ModelSpec, N_list, M_limit: int, T: float, dt: float | None,
                            seed: int, limit_seed: int, replication: int) -> np.ndarray:
    """``W_2(mu^N_T, mu_hat_T)`` for each ``N`` in one replication."""
    lim = simulate_limit(LimitSimConfig(model, M_limit, T, dt, limit_seed, output_grid=[T],
                                        replication=replication))
    ref = EmpiricalMeasure1D(lim.states[-1])
    out = np.empty(len(N_list))
    for a, n in enumerate(N_list):
        fin = simulate_finite(FiniteSimConfig(model, int(n), T, dt, seed, output_grid=[T], replication=replication))
        out[a] = wasserstein(EmpiricalMeasure1D(fin.states[-1]), ref, 2)
    return out


def summarize_convergence(N_list, w2: np.ndarray, seed: int) -> list:
    """Rows of median and interquartile range; ``w2`` is ``(len(N_list), reps)``."""
    rows = []
    for a, n in enumerate(N_list):
        q1, med, q3 = np.percentile(w2[a], [25, 50, 75])
        rows.append(ConvergenceRow(int(n), float(med), float(q3 - q1), int(w2.shape[1]), int(seed)))
    return rows


def convergence_study(model: ModelSpec, N_list, M_limit: int, T: float, dt: float | None, reps: int,
                      seed: int = 0, limit_seed: int | None = None, return_samples: bool = False):
    """Median and IQR over replications of ``W_2(mu^N_T, mu_hat_T)``.

    Each replication runs one reference limit system with ``M_limit``
    copies and one finite system per ``N``; the two are not coupled
    through the noise. ``limit_seed`` defaults to ``seed + 1``.
    """
    N_list = [int(n) for n in N_list]
    if N_list != sorted(N_list):
        raise ValueError("N_list must be ascending")
    if M_limit < max(N_list):
        raise ValueError("M_limit must be >= max(N_list)")
    lseed = seed + 1 if limit_seed is None else limit_seed
    w2 = np.column_stack([convergence_replication(model, N_list, M_limit, T, dt, seed, lseed, r)
                          for r in range(reps)])
    rows = summarize_convergence(N_list, w2, seed)
    return (rows, w2) if return_samples else rows


def sup_square(bundle: TrajectoryBundle, particle: int = 0) -> float:
    """``sup_t |X_t|^2`` of one particle over the recorded grid."""
    return float(np.max(bundle.states[:, particle] ** 2))


@dataclass
class MomentAuditReport:
    N: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    spearman_rho: float
    p_value: float
    passed: bool


def moment_audit(bundles: Sequence[TrajectoryBundle], particle: int = 0, alpha: float = 0.05) -> MomentAuditReport:
    """Estimate ``E sup_t |X^{N,1}_t|^2`` per ``N`` and test for an increasing trend.

    Bundles are grouped by particle count. Fails when a one-sided Spearman
    test of estimate against ``N`` gives ``p < alpha``. A constant sequence
    counts as no trend.
    """
    return moment_audit_samples([(b.n_particles, sup_square(b, particle)) for b in bundles], alpha)


def moment_audit_samples(samples, alpha: float = 0.05) -> MomentAuditReport:
    """:func:`moment_audit` from precomputed ``(N, sup_t |X_t|^2)`` pairs."""
    groups: dict = {}
    for n, v in samples:
        groups.setdefault(int(n), []).append(float(v))
    Ns = np.array(sorted(groups))
    est = np.array([np.mean(groups[n]) for n in Ns])
    se = np.array([np.std(groups[n], ddof=1) / np.sqrt(len(groups[n])) if len(groups[n]) > 1 else np.nan for n in Ns])
    if Ns.size < 3 or np.ptp(est) == 0:
        rho, p = 0.0, 1.0
    else:
        res = stats.spearmanr(Ns, est, alternative="greater")
        rho, p = float(res.statistic), float(res.pvalue)
    return MomentAuditReport(Ns, est, se, rho, p, bool(p >= alpha))


def exchangeability_ks(samples_a, samples_b) -> float:
    """Two-sample KS p-value between the marginals of two particles."""
    return float(stats.ks_2samp(np.asarray(samples_a), np.asarray(samples_b)).pvalue)
