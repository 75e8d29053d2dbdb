"""Log-density estimates from integrated score estimates.

``ell(x0) = v_hat(x0) + d (T + log(2 pi e (1 - e^{-2T})) / 2)`` estimates
``-log P(x0)`` up to the nonnegative gap ``KL(Q_{T|0}(.|x0) || P_T)``. The
estimator ``P_hat = exp(-ell)`` is kept in log space throughout.
"""

from dataclasses import dataclass

import numpy as np

from .integrated import estimate_v_batch
from .oracles import shifted_oracle
from .ou import DomainError, identity_constant

__all__ = [
    "DensityReport",
    "PacReport",
    "log_density_estimate",
    "log_density_batch",
    "early_stopped_estimate",
    "early_stopped_batch",
    "pac_evaluate",
    "differential_entropy",
    "BAND_ROUNDING",
]

# absolute slack on log-ratio band comparisons
BAND_ROUNDING = 1e-12


@dataclass(frozen=True)
class DensityReport:
    x0: np.ndarray
    ell: float
    phat_log: float
    stderr: float


@dataclass(frozen=True)
class PacReport:
    epsilon_band: float
    coverage: float
    n_eval: int
    mean_abs_log_ratio: float


def log_density_batch(X0, oracle, sched, rng, parallelism=1, **mc):
    """``(ell, stderr)`` arrays for every row of ``X0``.

    Extra keyword arguments (``stratified``, ``antithetic``) go to
    :func:`~scoredensity.integrated.estimate_v_batch`.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != sched.d:
        raise DomainError(f"points have dimension {X0.shape[1]}, schedule has {sched.d}")
    v, se = estimate_v_batch(X0, oracle, sched.m, rng, tau=sched.tau, T=sched.T,
                             parallelism=parallelism, **mc)
    return v + identity_constant(sched.d, sched.T), se


def log_density_estimate(x0, oracle, sched, rng, **mc):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    ell, se = log_density_batch(x0[None, :], oracle, sched, rng, **mc)
    return DensityReport(x0, float(ell[0]), -float(ell[0]), float(se[0]))


def early_stopped_batch(X0, oracle, tau, sched, rng, parallelism=1, **mc):
    """Estimates of ``-log P_tau`` at every row of ``X0``.

    ``P_tau`` run for time ``t`` is ``P_{tau + t}``, so the same oracle is
    queried at ``t + tau``; ``sched`` refers to the shifted clock.
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    inner = shifted_oracle(oracle, tau)
    return log_density_batch(X0, inner, sched, rng, parallelism=parallelism, **mc)


def early_stopped_estimate(x0, oracle, tau, sched, rng, **mc):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    ell, se = early_stopped_batch(x0[None, :], oracle, tau, sched, rng, **mc)
    return DensityReport(x0, float(ell[0]), -float(ell[0]), float(se[0]))


def pac_evaluate(phat, truth, epsilon_band, n_eval, rng):
    """Fraction of fresh draws from ``truth`` with ``|log P_hat - log P| <= band``.

    ``phat`` maps an ``(n, d)`` array to log-density estimates. The band is
    inclusive at its boundary, up to ``BAND_ROUNDING`` to absorb the rounding
    of ``phat - log P``.
    """
    if not epsilon_band > 0:
        raise DomainError("epsilon_band must be positive")
    if int(n_eval) < 1:
        raise DomainError("n_eval must be at least 1")
    x = truth.sample(int(n_eval), rng)
    ratio = np.asarray(phat(x), dtype=float) - truth.logpdf(x)
    absr = np.abs(ratio)
    return PacReport(float(epsilon_band), float(np.mean(absr <= epsilon_band + BAND_ROUNDING)),
                     int(n_eval), float(absr.mean()))


def differential_entropy(oracle, truth_sampler, sched, n, rng, parallelism=1, **mc):
    """``(mean, median)`` of ``-log P_hat`` over ``n`` draws from ``truth_sampler``."""
    if int(n) < 10:
        raise DomainError("n must be at least 10")
    x = truth_sampler.sample(int(n), rng)
    ell, _ = log_density_batch(x, oracle, sched, rng, parallelism=parallelism, **mc)
    return float(ell.mean()), float(np.median(ell))
