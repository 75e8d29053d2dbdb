"""Gaussian-mixture target families with exact densities and scores at every OU time."""

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .ou import DomainError, GaussianParams, noise_var, ou_push_gaussian

__all__ = [
    "GaussianMixture",
    "RegularityConstants",
    "HclweParams",
    "LocalityReport",
    "gaussian",
    "symmetric_mixture",
    "null_gaussian",
    "mixture_logdensity",
    "mixture_score_at_time",
    "mixture_sample",
    "regularity_constants",
    "subgaussian_constant_at_time",
    "mgf_witness",
    "MgfWitness",
    "hclwe_mixture",
    "glm_locality_check",
    "save_mixture",
    "load_mixture",
]

_LOG2PI = np.log(2.0 * np.pi)


class GaussianMixture:
    """Finite mixture ``sum_i w_i N(mu_i, Sigma_i)`` over ``R^d``.

    Parameters
    ----------
    weights : array_like of shape (K,)
        Nonnegative, summing to one within 1e-12.
    components : sequence of GaussianParams
        All of the same dimension.
    """

    def __init__(self, weights, components):
        weights = np.asarray(weights, dtype=float).ravel()
        components = list(components)
        if len(components) == 0 or weights.shape[0] != len(components):
            raise DomainError("need one weight per component and at least one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative and sum to 1")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise DomainError(f"components have mixed dimensions {sorted(dims)}")
        self.weights = weights
        self.components = components
        self.dim = dims.pop()
        with np.errstate(divide="ignore"):
            self._logw = np.log(weights)

    def __repr__(self):
        return f"GaussianMixture(K={len(self.components)}, dim={self.dim})"

    @classmethod
    def from_arrays(cls, weights, means, covs):
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        return cls(weights, [GaussianParams(m, c) for m, c in zip(means, covs)])

    @property
    def n_components(self):
        return len(self.components)

    @property
    def means(self):
        return np.array([c.mean for c in self.components])

    @property
    def covariances(self):
        return np.array([c.cov for c in self.components])

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1
        x = x.reshape(1, -1) if single else x
        if x.shape[1] != self.dim:
            raise DomainError(f"point dimension {x.shape[1]} != mixture dimension {self.dim}")
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite point")
        return x, single

    def component_logpdf(self, x):
        """Array ``(K, n)`` of ``log w_i + log N(x; mu_i, Sigma_i)``."""
        x, _ = self._points(x)
        return np.stack([lw + c.logpdf(x) for lw, c in zip(self._logw, self.components)])

    def logpdf(self, x):
        x, single = self._points(x)
        out = logsumexp(self.component_logpdf(x), axis=0)
        return out[0] if single else out

    def push(self, t):
        """The OU marginal ``P_t`` as a new mixture (scalar ``t``)."""
        return GaussianMixture(self.weights, [ou_push_gaussian(c, t) for c in self.components])

    def score(self, x):
        """Score at time 0 by posterior-weighted component scores (Cholesky path)."""
        x, single = self._points(x)
        resp = softmax(self.component_logpdf(x), axis=0)
        out = np.einsum("kn,knd->nd", resp, np.stack([c.score(x) for c in self.components]))
        return out[0] if single else out

    def _time_terms(self, t, x):
        x, single = self._points(x)
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise DomainError("time must be >= 0")
        a = np.exp(-t)[:, None]
        s2 = noise_var(t)[:, None]
        K, d = self.n_components, self.dim
        logp = np.empty((K, x.shape[0]))
        proj = []
        for k, c in enumerate(self.components):
            y = (x - a * c.mean) @ c.evecs
            var = (a * a) * c.evals + s2
            logp[k] = self._logw[k] - 0.5 * (
                np.sum(y * y / var, axis=1) + np.sum(np.log(var), axis=1) + d * _LOG2PI
            )
            proj.append((y / var, c.evecs))
        return logp, proj, single

    def logpdf_at_time(self, t, x):
        """``log P_t(x)``; ``t`` may be a scalar or one time per row of ``x``."""
        logp, _, single = self._time_terms(t, x)
        out = logsumexp(logp, axis=0)
        return out[0] if single else out

    def score_at_time(self, t, x):
        """``grad log P_t(x)``; ``t`` may be a scalar or one time per row of ``x``.

        Works in each component's eigenbasis so that rows with different times
        need no refactorization.
        """
        logp, proj, single = self._time_terms(t, x)
        resp = softmax(logp, axis=0)
        out = np.zeros((logp.shape[1], self.dim))
        for k, (u, evecs) in enumerate(proj):
            out -= resp[k][:, None] * (u @ evecs.T)
        return out[0] if single else out

    def sample(self, n, rng):
        """``n`` draws, shape ``(n, d)``."""
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k, c in enumerate(self.components):
            sel = idx == k
            out[sel] = c.mean + z[sel] @ c.chol.T
        return out

    def second_moment(self):
        return float(sum(w * (c.mean @ c.mean + np.trace(c.cov))
                         for w, c in zip(self.weights, self.components)))

    def to_dict(self):
        return {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"dim", "weights", "means", "covariances"}
        if unknown:
            raise DomainError(f"unknown mixture fields: {sorted(unknown)}")
        mix = cls.from_arrays(data["weights"], data["means"], data["covariances"])
        if mix.dim != int(data["dim"]):
            raise DomainError("declared dim does not match the means")
        return mix


def save_mixture(mix, path):
    """Write ``mix`` as JSON with fields ``dim, weights, means, covariances``.

    Floats are written with the shortest repr that round-trips exactly.
    """
    Path(path).write_text(json.dumps(mix.to_dict(), indent=1))


def load_mixture(path):
    return GaussianMixture.from_dict(json.loads(Path(path).read_text()))


def gaussian(dim=1, sigma=1.0, mean=None):
    """``N(mean, sigma^2 Id)`` as a one-component mixture."""
    mean = np.zeros(dim) if mean is None else np.broadcast_to(np.asarray(mean, float), (dim,))
    return GaussianMixture([1.0], [GaussianParams(mean, sigma**2 * np.eye(dim))])


def symmetric_mixture(theta=1.0, dim=1, sigma=1.0):
    """``N(-theta e1, sigma^2 Id)/2 + N(theta e1, sigma^2 Id)/2``."""
    mu = np.zeros(dim)
    mu[0] = theta
    cov = sigma**2 * np.eye(dim)
    return GaussianMixture([0.5, 0.5], [GaussianParams(-mu, cov), GaussianParams(mu, cov)])


def null_gaussian(dim):
    """``N(0, Id / (2 pi))``, the isotropic Gaussian ``rho`` of width 1."""
    return gaussian(dim, sigma=np.sqrt(1.0 / (2.0 * np.pi)))


def mixture_logdensity(mix, x):
    return mix.logpdf(x)


def mixture_score_at_time(mix, t, x):
    """``grad log P_t(x)``: push every component to time ``t``, then average
    component scores under the posterior responsibilities."""
    if np.ndim(t) == 0:
        if t < 0:
            raise DomainError("time must be >= 0")
        return mix.push(t).score(x)
    return mix.score_at_time(t, x)


def mixture_sample(mix, rng, n=None):
    """One point of shape ``(d,)``, or ``(n, d)`` when ``n`` is given."""
    if n is None:
        return mix.sample(1, rng)[0]
    return mix.sample(n, rng)


@dataclass(frozen=True)
class RegularityConstants:
    """``L``: sub-Gaussian variance proxy of the score; ``M2``: second-moment bound."""

    L: float
    M2: float

    def __post_init__(self):
        if not (np.isfinite(self.L) and np.isfinite(self.M2) and self.L >= 0 and self.M2 >= 0):
            raise DomainError("L and M2 must be finite and nonnegative")


def regularity_constants(mix):
    """Lipschitz-based ``L = max_i lambda_max(Sigma_i^{-1})`` and exact ``M2``."""
    L = max(1.0 / c.evals.min() for c in mix.components)
    return RegularityConstants(L=float(L), M2=mix.second_moment())


def subgaussian_constant_at_time(L, t):
    """``min(L e^{2t}, 1 / (1 - e^{-2t}))``, the score's variance proxy under ``P_t``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.minimum(L * np.exp(2.0 * t), 1.0 / noise_var(t))


@dataclass(frozen=True)
class MgfWitness:
    t: float
    L_t: float
    passed: bool
    worst_excess: float
    n_checks: int


def mgf_witness(mix, t, rng, L=None, n=100_000, n_dirs=20, factors=(0.1, 0.5)):
    """Empirical check that ``<v, grad log P_t(X_t)>`` is sub-Gaussian with
    variance proxy ``L_t``.

    For ``n_dirs`` uniform unit vectors ``v`` and ``lam = +-f / sqrt(L_t)``,
    ``f`` in ``factors``, the sample MGF over ``n`` draws of ``P_t`` must not
    exceed ``exp(lam^2 L_t / 2)`` by more than 5 standard errors.
    ``worst_excess`` is the largest ``(mgf - bound) / stderr`` seen.
    """
    L = max(regularity_constants(mix).L, 1.0) if L is None else L
    L_t = float(subgaussian_constant_at_time(L, t))
    x = mix.push(t).sample(n, rng)
    s = mix.score_at_time(t, x)
    v = rng.standard_normal((n_dirs, mix.dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    proj = s @ v.T
    worst = -np.inf
    checks = 0
    for f in factors:
        for sign in (1.0, -1.0):
            lam = sign * f / np.sqrt(L_t)
            e = np.exp(lam * proj)
            mgf = e.mean(axis=0)
            se = e.std(axis=0, ddof=1) / np.sqrt(n)
            bound = np.exp(lam * lam * L_t / 2.0)
            worst = max(worst, float(np.max((mgf - bound) / np.maximum(se, 1e-300))))
            checks += n_dirs
    return MgfWitness(float(t), L_t, bool(worst <= 5.0), worst, checks)


@dataclass(frozen=True)
class HclweParams:
    beta: float
    gamma: float
    k: int
    secret: np.ndarray

    def __post_init__(self):
        secret = np.asarray(self.secret, dtype=float).ravel()
        if not 0 < self.beta < 1:
            raise DomainError("beta must lie in (0, 1)")
        if self.gamma < 0:
            raise DomainError("gamma must be nonnegative")
        if int(self.k) < 0:
            raise DomainError("k must be a nonnegative integer")
        if abs(np.linalg.norm(secret) - 1.0) > 1e-12:
            raise DomainError("secret must be a unit vector")
        object.__setattr__(self, "secret", secret)
        object.__setattr__(self, "k", int(self.k))

    @property
    def dim(self):
        return self.secret.shape[0]


def hclwe_mixture(p):
    """Truncated hCLWE "Gaussian pancakes" as a ``(2k+1)``-component mixture.

    Widths follow ``rho_r(x) = exp(-pi |x|^2 / r^2)``, i.e. variance ``r^2/(2 pi)``,
    the same convention as :func:`null_gaussian`.
    """
    b2g2 = p.beta**2 + p.gamma**2
    idx = np.arange(-p.k, p.k + 1)
    logw = -np.pi * idx**2 / b2g2
    w = np.exp(logw - logw.max())
    w /= w.sum()
    s = p.secret
    shrink = 1.0 - p.beta**2 / b2g2
    cov = (np.eye(p.dim) - shrink * np.outer(s, s)) / (2.0 * np.pi)
    comps = [GaussianParams((p.gamma * i / b2g2) * s, cov) for i in idx]
    return GaussianMixture(w, comps)


@dataclass
class LocalityReport:
    passed: bool
    mass_condition: bool
    covering_condition: bool
    support_condition: bool
    details: dict = field(default_factory=dict)


def _covering(points, k, R, max_combos=200_000):
    n = points.shape[0]
    if k >= n:
        return True, points
    cands = [points[i] for i in range(n)]
    cands += [(points[i] + points[j]) / 2 for i, j in itertools.combinations(range(n), 2)]
    cands = np.array(cands)
    dist = np.linalg.norm(points[None, :, :] - cands[:, None, :], axis=2) <= R + 1e-12
    n_combos = 1
    for i in range(k):
        n_combos = n_combos * (len(cands) - i) // (i + 1)
    if n_combos <= max_combos:
        for combo in itertools.combinations(range(len(cands)), k):
            if np.all(dist[list(combo)].any(axis=0)):
                return True, cands[list(combo)]
        return False, None
    # greedy set cover fallback
    covered = np.zeros(n, dtype=bool)
    chosen = []
    for _ in range(k):
        gain = (dist & ~covered).sum(axis=1)
        best = int(np.argmax(gain))
        chosen.append(best)
        covered |= dist[best]
    return bool(covered.all()), cands[chosen] if covered.all() else None


def glm_locality_check(mix, k, R, D, w_min):
    """Check ``(k, R, D, w_min)``-locality of the mixing measure given by the
    component means and weights.

    The covering condition is searched with centers at support points and at
    midpoints of support pairs (exhaustively when small, greedily otherwise),
    so a pass is always certified while a failure may be conservative.
    """
    means, w = mix.means, mix.weights
    support = means[w > 0]
    ws = w[w > 0]
    pair = np.linalg.norm(support[:, None, :] - support[None, :, :], axis=2)
    ball_mass = (ws[None, :] * (pair <= R + 1e-12)).sum(axis=1)
    mass_ok = bool(np.all(ball_mass >= w_min - 1e-12))
    cover_ok, centers = _covering(support, int(k), R)
    radii = np.linalg.norm(support, axis=1)
    support_ok = bool(np.all(radii <= D + 1e-12))
    return LocalityReport(
        passed=mass_ok and cover_ok and support_ok,
        mass_condition=mass_ok,
        covering_condition=cover_ok,
        support_condition=support_ok,
        details={
            "min_ball_mass": float(ball_mass.min()),
            "centers": None if centers is None else np.asarray(centers).tolist(),
            "max_radius": float(radii.max()),
        },
    )
