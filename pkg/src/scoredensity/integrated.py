"""Monte-Carlo integrated score estimator and its parameter schedule.

For a start point ``x0`` the estimator averages, over ``t ~ U[tau, T]`` and
``x_t ~ Q_{t|0}(.|x0)``, the quantity
``|s_t(x_t)|^2 - 2 <s_t(x_t), grad log Q_{t|0}(x_t|x0)>`` and rescales by
``T - tau``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ou import DomainError, noise_var
from .rng import draw_key, stream

__all__ = [
    "ScheduleParams",
    "IntegratedEstimate",
    "default_schedule",
    "estimate_v",
    "estimate_v_batch",
    "standard_gaussian_v",
]

logger = logging.getLogger(__name__)

# samples per random sub-stream; fixed so results do not depend on parallelism
CHUNK = 1 << 14
# target number of oracle rows per vectorized call
BLOCK_ROWS = 1 << 16


@dataclass(frozen=True)
class ScheduleParams:
    epsilon: float
    L: float
    d: int
    M2: float
    tau: float
    T: float
    m: int
    eps_star: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class IntegratedEstimate:
    value: float
    stderr: float
    m: int


def default_schedule(epsilon, constants, d, tau=None, T=None, m=None):
    """Parameter schedule with all asymptotic constants set to one.

    ``tau = eps^2 / (L d^2)``, ``T = max(1, log(1 + 2 M2 / eps) / 2)``,
    ``m = ceil(d^2 (T^2 + L T log(d^2 / eps^2)) / eps^2)`` and
    ``eps_star = eps / sqrt(d (T + log(L d^2 / eps^2)))``. ``L`` is clamped
    to at least 1. Any of ``tau``, ``T``, ``m`` may be overridden.
    """
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    d = int(d)
    if d < 1:
        raise DomainError("d must be a positive integer")
    L = max(float(constants.L), 1.0)
    M2 = float(constants.M2)
    eps2 = epsilon * epsilon
    tau_ = eps2 / (L * d * d) if tau is None else float(tau)
    T_ = max(1.0, 0.5 * math.log1p(2.0 * M2 / epsilon)) if T is None else float(T)
    if m is None:
        m_ = math.ceil(d * d * (T_ * T_ + L * T_ * math.log(d * d / eps2)) / eps2)
    else:
        m_ = int(m)
    eps_star = epsilon / math.sqrt(d * (T_ + math.log(L * d * d / eps2)))
    if not 0 <= tau_ < T_:
        raise DomainError(f"schedule needs 0 <= tau < T, got tau={tau_}, T={T_}")
    sched = ScheduleParams(epsilon, L, d, M2, tau_, T_, max(m_, 2), eps_star)
    logger.info("schedule: tau=%.6g T=%.6g m=%d eps_star=%.6g", tau_, T_, sched.m, eps_star)
    return sched


def _draws(key, point, m, d, tau, T, stratified, antithetic):
    """Yield ``(t, z)`` chunks for one start point, each from its own sub-stream."""
    span = T - tau
    if antithetic:
        n_base = m // 2
        for j, start in enumerate(range(0, n_base, CHUNK // 2)):
            n = min(CHUNK // 2, n_base - start)
            g = stream(key, None, point, j)
            u = g.random(n)
            if stratified:
                u = (np.arange(start, start + n) + u) / n_base
            t = tau + span * u
            z = g.standard_normal((n, d))
            yield np.repeat(t, 2), np.stack([z, -z], axis=1).reshape(2 * n, d)
        return
    for j, start in enumerate(range(0, m, CHUNK)):
        n = min(CHUNK, m - start)
        g = stream(key, None, point, j)
        u = g.random(n)
        if stratified:
            u = (np.arange(start, start + n) + u) / m
        yield tau + span * u, g.standard_normal((n, d))


def _summands(x0, t, z, oracle):
    sd = np.sqrt(noise_var(t))[:, None]
    xt = np.exp(-t)[:, None] * x0 + sd * z
    s = np.atleast_2d(oracle.eval(t, xt))
    # grad log Q_{t|0}(x_t | x0) = -z / sd
    return np.sum(s * s, axis=1) + 2.0 * np.sum(s * z, axis=1) / sd[:, 0]


def _reduce(vals, span, antithetic):
    if antithetic:
        vals = vals.reshape(-1, 2).mean(axis=1)
    n = vals.shape[0]
    mean = vals.mean()
    se = vals.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return span * mean, span * se


def estimate_v_batch(X0, oracle, m, rng, tau=None, T=None, stratified=False,
                     antithetic=False, parallelism=1):
    """Integrated score estimates at every row of ``X0``.

    Point ``i`` draws from sub-streams ``(key, i, chunk)`` where ``key`` is a
    single draw from ``rng``; results are identical for any ``parallelism``.

    Returns
    -------
    value, stderr : ndarray of shape (n,)
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    n_pts, d = X0.shape
    m = int(m)
    if m < 2:
        raise DomainError("m must be at least 2")
    if antithetic and m % 2:
        m += 1
    tau = oracle.window.tau if tau is None else float(tau)
    T = oracle.window.T if T is None else float(T)
    if not oracle.window.contains(np.array([tau, T])):
        raise DomainError(f"[{tau}, {T}] is not inside the oracle window")
    if oracle.dim is not None and oracle.dim != d:
        raise DomainError(f"point dimension {d} != oracle dimension {oracle.dim}")
    key = draw_key(rng)
    span = T - tau

    per_block = max(1, BLOCK_ROWS // m)
    blocks = [range(s, min(s + per_block, n_pts)) for s in range(0, n_pts, per_block)]
    value = np.empty(n_pts)
    stderr = np.empty(n_pts)

    def run(block):
        if len(block) == 1:
            i = block[0]
            vals = np.concatenate([
                _summands(X0[i], t, z, oracle)
                for t, z in _draws(key, i, m, d, tau, T, stratified, antithetic)
            ])
            value[i], stderr[i] = _reduce(vals, span, antithetic)
            return
        ts, zs, xs = [], [], []
        for i in block:
            for t, z in _draws(key, i, m, d, tau, T, stratified, antithetic):
                ts.append(t)
                zs.append(z)
                xs.append(np.broadcast_to(X0[i], z.shape))
        vals = _summands(np.concatenate(xs), np.concatenate(ts), np.concatenate(zs), oracle)
        for j, i in enumerate(block):
            value[i], stderr[i] = _reduce(vals[j * m:(j + 1) * m], span, antithetic)

    if parallelism > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(parallelism) as ex:
            list(ex.map(run, blocks))
    else:
        for b in blocks:
            run(b)
    return value, stderr


def estimate_v(x0, oracle, m, rng, tau=None, T=None, stratified=False, antithetic=False):
    """Integrated score estimate ``v_hat(x0)`` with its Monte-Carlo standard error.

    Parameters
    ----------
    x0 : array_like of shape (d,)
    oracle : ScoreOracle
    m : int
        Number of ``(t, x_t)`` draws, at least 2.
    rng : numpy.random.Generator
    tau, T : float, optional
        Integration window; defaults to the oracle window.
    stratified : bool
        Use one uniform draw per equal-width time stratum instead of i.i.d. times.
    antithetic : bool
        Pair every noise draw ``z`` with ``-z`` at the same time.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v, se = estimate_v_batch(x0[None, :], oracle, m, rng, tau=tau, T=T,
                             stratified=stratified, antithetic=antithetic)
    return IntegratedEstimate(float(v[0]), float(se[0]), int(m + (m % 2 if antithetic else 0)))


def standard_gaussian_v(x0, T, tau=0.0):
    """Exact ``v`` for ``P = N(0, Id)`` integrated over ``[tau, T]``.

    The inner expectation is ``e^{-2t}|x0|^2 + (1 - e^{-2t}) d - 2d``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.shape[0]
    decay = 0.5 * (np.exp(-2.0 * tau) - np.exp(-2.0 * T))
    return float(x0 @ x0 * decay + d * ((T - tau) - decay) - 2.0 * d * (T - tau))
