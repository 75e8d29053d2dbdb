"""Closed-form Ornstein-Uhlenbeck semigroup.

The forward process is ``X_t = exp(-t) X_0 + sqrt(1 - exp(-2t)) Z``. Only
marginals and transition kernels are needed here, never sample paths.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "DomainError",
    "TimeWindow",
    "GaussianParams",
    "noise_var",
    "ou_push_point",
    "transition_score",
    "ou_push_gaussian",
    "identity_constant",
    "kl_error_bound",
    "gaussian_kl",
    "transition_kl",
    "heatflow_to_ou_score",
]

CHOL_TOL = 1e-10


class DomainError(ValueError):
    """Raised when an argument falls outside an operation's domain."""


def noise_var(t):
    """``1 - exp(-2t)`` without cancellation for small ``t``."""
    return -np.expm1(-2.0 * np.asarray(t, dtype=float))


def _as_point(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} has non-finite entries")
    return x


def _check_time(t, strict=False):
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(t_arr)):
        raise DomainError("time is NaN")
    if strict and np.any(t_arr <= 0):
        raise DomainError("time must be > 0 (the transition kernel is singular at t=0)")
    if np.any(t_arr < 0):
        raise DomainError("time must be >= 0")
    return t_arr


@dataclass(frozen=True)
class TimeWindow:
    """Early-stopping time ``tau`` and terminal time ``T``, ``0 <= tau < T``."""

    tau: float
    T: float

    def __post_init__(self):
        if not (np.isfinite(self.T) and 0 <= self.tau < self.T):
            raise DomainError(f"invalid time window tau={self.tau}, T={self.T}")

    def contains(self, t, slack=1e-12):
        t = np.asarray(t, dtype=float)
        scale = max(1.0, abs(self.T))
        return bool(np.all((t >= self.tau - slack * scale) & (t <= self.T + slack * scale)))


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """A Gaussian ``N(mean, cov)`` with cached Cholesky factor and log-determinant.

    An eigendecomposition of ``cov`` is cached too. Pushing through the OU
    semigroup keeps the eigenvectors fixed and maps each eigenvalue ``lam``
    to ``exp(-2t) lam + 1 - exp(-2t)``, which is what makes evaluation at many
    distinct times cheap.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False)
    evals: np.ndarray = field(init=False, repr=False)
    evecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = _as_point(self.mean, "mean")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DomainError(f"covariance shape {cov.shape} does not match dimension {d}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise DomainError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc
        diag = np.diag(chol)
        if np.any(diag <= CHOL_TOL):
            raise DomainError("Cholesky factor has a diagonal entry below 1e-10")
        evals, evecs = np.linalg.eigh(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "logdet", float(2.0 * np.sum(np.log(diag))))
        object.__setattr__(self, "evals", np.maximum(evals, 0.0))
        object.__setattr__(self, "evecs", evecs)

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpdf(self, x):
        """Log-density at ``x`` of shape ``(d,)`` or ``(n, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        diff = x - self.mean
        sol = solve_triangular(self.chol, diff.T, lower=True)
        quad = np.sum(sol * sol, axis=0)
        out = -0.5 * (quad + self.logdet + self.dim * np.log(2.0 * np.pi))
        return out[0] if single else out

    def score(self, x):
        """``-cov^{-1} (x - mean)`` for ``x`` of shape ``(d,)`` or ``(n, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        diff = np.atleast_2d(x) - self.mean
        y = solve_triangular(self.chol, diff.T, lower=True)
        out = -solve_triangular(self.chol.T, y, lower=False).T
        return out[0] if single else out


def ou_push_point(x0, z, t):
    """``exp(-t) x0 + sqrt(1 - exp(-2t)) z``; ``t = inf`` gives ``z``."""
    x0 = _as_point(x0, "x0")
    z = _as_point(z, "z")
    if x0.shape != z.shape:
        raise DomainError(f"dimension mismatch: {x0.shape} vs {z.shape}")
    t = float(_check_time(t))
    if np.isinf(t):
        return z.copy()
    return np.exp(-t) * x0 + np.sqrt(noise_var(t)) * z


def transition_score(x0, xt, t):
    """Score of the OU transition kernel, ``-(xt - e^{-t} x0) / (1 - e^{-2t})``."""
    x0 = _as_point(x0, "x0")
    xt = _as_point(xt, "xt")
    if x0.shape != xt.shape:
        raise DomainError(f"dimension mismatch: {x0.shape} vs {xt.shape}")
    t = float(_check_time(t, strict=True))
    if np.isinf(t):
        return -xt
    return -(xt - np.exp(-t) * x0) / noise_var(t)


def ou_push_gaussian(g, t):
    """Law at time ``t`` of the OU process started from ``g``."""
    t = float(_check_time(t))
    if np.isinf(t):
        return GaussianParams(np.zeros(g.dim), np.eye(g.dim))
    a = np.exp(-t)
    return GaussianParams(a * g.mean, a * a * g.cov + noise_var(t) * np.eye(g.dim))


def identity_constant(d, T):
    """``d (T + log(2 pi e (1 - e^{-2T})) / 2)``: Gaussian entropy term plus ``dT``."""
    if int(d) < 1:
        raise DomainError("dimension must be a positive integer")
    if not T > 0:
        raise DomainError("T must be positive")
    if np.isinf(T):
        return np.inf
    return d * (T + 0.5 * np.log(2.0 * np.pi * np.e * noise_var(T)))


def kl_error_bound(x0, M2, T):
    """Upper bound ``(|x0|^2 + M2) / (e^{2T} - 1)`` on ``KL(Q_{T|0}(.|x0) || P_T)``."""
    if not T > 0:
        raise DomainError("T must be positive")
    if M2 < 0:
        raise DomainError("M2 must be nonnegative")
    x0 = _as_point(x0, "x0")
    with np.errstate(over="ignore"):
        return float((x0 @ x0 + M2) / np.expm1(2.0 * T))


def gaussian_kl(mean0, cov0, mean1, cov1):
    """``KL(N(mean0, cov0) || N(mean1, cov1))`` in closed form."""
    mean0, mean1 = np.atleast_1d(mean0), np.atleast_1d(mean1)
    cov0, cov1 = np.atleast_2d(cov0), np.atleast_2d(cov1)
    d = mean0.shape[0]
    c1 = np.linalg.cholesky(cov1)
    c0 = np.linalg.cholesky(cov0)
    m = solve_triangular(c1, c0, lower=True)
    diff = solve_triangular(c1, mean1 - mean0, lower=True)
    logdet1 = 2.0 * np.sum(np.log(np.diag(c1)))
    logdet0 = 2.0 * np.sum(np.log(np.diag(c0)))
    return 0.5 * (np.sum(m * m) + diff @ diff - d + logdet1 - logdet0)


def transition_kl(x0, g, T):
    """``KL(Q_{T|0}(.|x0) || P_T)`` for a Gaussian starting law ``g``."""
    x0 = _as_point(x0, "x0")
    pushed = ou_push_gaussian(g, T)
    s2 = noise_var(T)
    return float(gaussian_kl(np.exp(-T) * x0, s2 * np.eye(g.dim), pushed.mean, pushed.cov))


def heatflow_to_ou_score(s_tilde, t, xt):
    """Convert a heat-flow score estimate into an OU score estimate at time ``t``.

    ``s_tilde(h, y)`` estimates the score of ``P * N(0, h Id)`` at ``y``.
    Since ``e^t X_t`` has the heat-flow law at ``h = e^{2t} - 1``, the OU score
    is ``e^t s_tilde(e^{2t} - 1, e^t x)``, and the L2 error scales by ``e^t``.
    """
    t = float(_check_time(t, strict=True))
    xt = _as_point(xt, "xt")
    h = np.expm1(2.0 * t)
    a = np.exp(t)
    return a * np.asarray(s_tilde(h, a * xt), dtype=float)
