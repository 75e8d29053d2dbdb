"""Score-estimation oracles along the OU process.

An oracle answers ``(t, x) -> s_hat_t(x)`` on a time window ``[tau, T]`` and
declares its L2(P_t) error profile ``eps(t)``.
"""

import numpy as np
from scipy import integrate

from .ou import DomainError, TimeWindow

__all__ = [
    "ScoreOracle",
    "exact_oracle",
    "biased_oracle",
    "random_field_oracle",
    "shifted_oracle",
    "integrated_error",
    "empirical_error",
]


def _zero_profile(t):
    return np.zeros_like(np.asarray(t, dtype=float))


class ScoreOracle:
    """A score estimator ``s_hat`` defined on ``window`` with declared error profile.

    ``eval`` accepts ``t`` as a scalar or one time per row and ``x`` of shape
    ``(d,)`` or ``(n, d)``. Evaluations are pure, so instances can be shared
    across threads.
    """

    def __init__(self, fn, window, error_profile=_zero_profile, dim=None, declared=True):
        self._fn = fn
        self.window = window
        self.error_profile = error_profile
        self.dim = dim
        self.declared = declared

    def __repr__(self):
        return f"ScoreOracle(window=({self.window.tau}, {self.window.T}), dim={self.dim})"

    def eval(self, t, x):
        if not self.window.contains(t):
            raise DomainError(
                f"oracle queried outside its window [{self.window.tau}, {self.window.T}]"
            )
        return self._fn(t, x)

    __call__ = eval


def exact_oracle(mix, window):
    """Oracle returning the exact score ``grad log P_t`` of ``mix``."""
    return ScoreOracle(mix.score_at_time, window, dim=mix.dim)


def _profile_values(eps, t):
    vals = np.asarray(eps(t), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise DomainError("error profile must be finite and nonnegative")
    return vals


def biased_oracle(base, direction, eps):
    """Add the constant field ``eps(t) * direction`` to ``base``.

    Because the shift does not depend on ``x``, the L2(P_t) error of the
    result relative to the exact score is exactly ``eps(t)`` when ``base`` is
    exact.
    """
    direction = np.asarray(direction, dtype=float).ravel()
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise DomainError("direction must be a unit vector")
    if not callable(eps):
        c = float(eps)
        eps = lambda t, c=c: np.full_like(np.asarray(t, dtype=float), c)  # noqa: E731

    def fn(t, x):
        s = base.eval(t, x)
        e = _profile_values(eps, t)
        if s.ndim == 1:
            return s + float(e) * direction
        return s + np.broadcast_to(e, (s.shape[0],))[:, None] * direction

    def profile(t):
        base_eps = np.asarray(base.error_profile(t), dtype=float)
        return _profile_values(eps, t) + base_eps

    return ScoreOracle(fn, base.window, profile, dim=base.dim)


def random_field_oracle(base, amplitude, rng, n_features=8, bandwidth=1.0):
    """Add a smooth random field ``amplitude(t) * sum_j c_j sin(<w_j, x> + b_j) v_j``.

    The frequencies, phases, unit directions ``v_j`` and weights ``c_j``
    (``sum |c_j| = 1``) are drawn once here and fixed afterwards. The declared
    profile ``amplitude(t)`` is only an upper bound on the L2 error; use
    :func:`empirical_error` for the actual value.
    """
    d = base.dim
    if d is None:
        raise DomainError("base oracle must know its dimension")
    if not callable(amplitude):
        a = float(amplitude)
        amplitude = lambda t, a=a: np.full_like(np.asarray(t, dtype=float), a)  # noqa: E731
    w = rng.standard_normal((n_features, d)) / bandwidth
    b = rng.uniform(0.0, 2.0 * np.pi, n_features)
    v = rng.standard_normal((n_features, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    c = rng.dirichlet(np.ones(n_features))

    def fn(t, x):
        s = base.eval(t, x)
        xx = np.atleast_2d(x)
        field_ = (c * np.sin(xx @ w.T + b)) @ v
        amp = np.broadcast_to(_profile_values(amplitude, t), (xx.shape[0],))
        out = np.atleast_2d(s) + amp[:, None] * field_
        return out[0] if s.ndim == 1 else out

    def profile(t):
        return _profile_values(amplitude, t) + np.asarray(base.error_profile(t), dtype=float)

    return ScoreOracle(fn, base.window, profile, dim=d, declared=False)


def shifted_oracle(base, shift):
    """Oracle for ``P_shift``: answers ``(t, x)`` with ``base(t + shift, x)``."""
    if not shift > 0:
        raise DomainError("shift must be positive")
    if shift >= base.window.T:
        raise DomainError("shift leaves no time window")
    window = TimeWindow(max(base.window.tau - shift, 0.0), base.window.T - shift)

    def fn(t, x):
        return base.eval(np.asarray(t, dtype=float) + shift, x)

    def profile(t):
        return np.asarray(base.error_profile(np.asarray(t, dtype=float) + shift), dtype=float)

    return ScoreOracle(fn, window, profile, dim=base.dim, declared=base.declared)


def integrated_error(oracle, tau=None, T=None):
    """``sqrt(int_tau^T eps_t^2 dt)`` by adaptive quadrature (atol 1e-10)."""
    tau = oracle.window.tau if tau is None else tau
    T = oracle.window.T if T is None else T

    def sq(t):
        v = float(np.asarray(oracle.error_profile(t), dtype=float))
        if not np.isfinite(v):
            raise DomainError("error profile is not finite")
        return v * v

    val, _ = integrate.quad(sq, tau, T, epsabs=1e-10, epsrel=1e-10, limit=200)
    return float(np.sqrt(max(val, 0.0)))


def empirical_error(oracle, mix, t, n, rng):
    """Monte-Carlo estimate of ``||s_hat_t - grad log P_t||_{L2(P_t)}``.

    Returns ``(estimate, stderr)``, the stderr obtained by the delta method.
    """
    x = mix.push(t).sample(n, rng)
    diff = oracle.eval(t, x) - mix.score_at_time(t, x)
    sq = np.sum(diff * diff, axis=1)
    mean = sq.mean()
    est = np.sqrt(mean)
    se_mean = sq.std(ddof=1) / np.sqrt(n)
    se = se_mean / (2.0 * est) if est > 0 else 0.0
    return float(est), float(se)
