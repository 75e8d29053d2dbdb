"""DDPM parameter estimation for parametric Gaussian-mixture families.

The DDPM risk of ``theta`` on data ``x_1..x_n`` is

    mean_i int_0^T E[ |s_theta,t(X_t)|^2 + <s_theta,t(X_t), 2 Z / sqrt(1 - e^{-2t})> | X_0 = x_i ] dt

with ``X_t = e^{-t} x_i + sqrt(1 - e^{-2t}) Z``. It equals the negative
log-likelihood minus ``C_{d,T}`` and an average KL term decaying like
``e^{-2T}``, so its minimizer inherits the efficiency of the MLE.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .families import gaussian, regularity_constants, symmetric_mixture
from .ou import DomainError, GaussianParams, identity_constant, noise_var, transition_kl
from .rng import draw_key, stream

__all__ = [
    "ParametricFamily",
    "RiskPanel",
    "DdpmFit",
    "EfficiencyReport",
    "gaussian_location_family",
    "symmetric_mixture_family",
    "make_panel",
    "ddpm_risk",
    "gaussian_location_risk",
    "gaussian_location_kl",
    "mle_risk",
    "golden_section",
    "fit_ddpm",
    "fit_mle",
    "fisher_information",
    "fisher_information_mc",
    "efficiency_experiment",
    "ddpm_mle_gap",
    "default_T_rule",
]

DEFAULT_T0 = 1e-4
DEFAULT_RATE = 2.0
_DEFAULT_OPT = {
    "grid": 33,
    "xtol": 1e-7,
    "maxiter": 500,
    "n_t": 32,
    "t0": DEFAULT_T0,
    "rate": DEFAULT_RATE,
    "n_starts": 3,
    "closed_form": True,
}


@dataclass(frozen=True)
class ParametricFamily:
    """``{P_theta : theta in box}`` with each ``P_theta`` a Gaussian mixture.

    ``gaussian_sigma`` is set for Gaussian location families ``N(theta, sigma^2 Id)``,
    which enables the closed-form risk and Fisher information.
    """

    name: str
    param_dim: int
    mixture_of: object
    theta_bounds: np.ndarray
    dim: int = 1
    gaussian_sigma: float = None

    def check(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.param_dim,):
            raise DomainError(f"theta must have shape ({self.param_dim},)")
        lo, hi = self.theta_bounds[:, 0], self.theta_bounds[:, 1]
        if np.any(theta < lo - 1e-12) or np.any(theta > hi + 1e-12):
            raise DomainError(f"theta {theta} outside bounds {self.theta_bounds.tolist()}")
        return theta

    @property
    def closed_form(self):
        return self.gaussian_sigma is not None


def gaussian_location_family(dim=1, sigma=1.0, bound=10.0):
    """``N(theta, sigma^2 Id)`` with ``theta`` in ``[-bound, bound]^dim``."""
    return ParametricFamily(
        name="gaussian-location",
        param_dim=dim,
        mixture_of=lambda th: gaussian(dim, sigma, mean=th),
        theta_bounds=np.tile([-bound, bound], (dim, 1)).astype(float),
        dim=dim,
        gaussian_sigma=float(sigma),
    )


def symmetric_mixture_family(sigma=1.0, upper=5.0):
    """``N(theta, sigma^2)/2 + N(-theta, sigma^2)/2`` with ``theta`` in ``[0, upper]``.

    The sign of ``theta`` is not identifiable, hence the nonnegative box.
    """
    return ParametricFamily(
        name="symmetric-mixture",
        param_dim=1,
        mixture_of=lambda th: symmetric_mixture(float(np.asarray(th).ravel()[0]), 1, sigma),
        theta_bounds=np.array([[0.0, float(upper)]]),
        dim=1,
    )


def default_T_rule(n):
    """Terminal time ``log(n)/2 + 3``."""
    return 0.5 * math.log(n) + 3.0


def _as_data(data, d):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None] if d == 1 else data[None, :]
    if data.size == 0:
        raise DomainError("data must be nonempty")
    if data.shape[1] != d:
        raise DomainError(f"data dimension {data.shape[1]} != family dimension {d}")
    return data


# -- closed form ------------------------------------------------------------

def _gl_integrals(sigma2, T):
    """Integrals over [0, T] of e^{-2t}/s^2, 1/s and (1-e^{-2t})/s^2, s = sigma2 e^{-2t} + 1 - e^{-2t}."""
    if T == 0:
        return 0.0, 0.0, 0.0
    q = -math.expm1(-2.0 * T)
    sT = sigma2 * math.exp(-2.0 * T) + q
    A = q / (2.0 * sT * sigma2)
    B = T + 0.5 * math.log(sT / sigma2)
    C = B + 0.5 * q * (1.0 - sigma2) / (sigma2 * sT) - A
    return A, B, C


def gaussian_location_risk(theta, data, T, sigma=1.0, t0=0.0):
    """Exact DDPM risk of ``N(theta, sigma^2 Id)`` integrated over ``[t0, T]``.

    The inner expectation at time ``t`` is
    ``(e^{-2t}|x - theta|^2 + (1 - e^{-2t}) d) / s_t^2 - 2d / s_t``
    with ``s_t = sigma^2 e^{-2t} + 1 - e^{-2t}``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    data = _as_data(data, theta.shape[0])
    d = theta.shape[0]
    s2 = sigma * sigma
    A1, B1, C1 = _gl_integrals(s2, T)
    A0, B0, C0 = _gl_integrals(s2, t0)
    A, B, C = A1 - A0, B1 - B0, C1 - C0
    sq = np.sum((data - theta) ** 2, axis=1)
    return float(np.mean(sq) * A + d * C - 2.0 * d * B)


def mle_risk(family, theta, data):
    """Average negative log-likelihood."""
    theta = family.check(theta)
    data = _as_data(data, family.dim)
    return float(-np.mean(family.mixture_of(theta).logpdf(data)))


# -- Monte Carlo ------------------------------------------------------------

@dataclass(frozen=True)
class RiskPanel:
    """Common random numbers for one fit: per data point, ``n_t`` stratified
    times on ``[t0, T]`` each with an antithetic noise pair ``(z, -z)``.

    ``w`` holds the quadrature weight ``1 / q(t)`` of each row, where ``q`` is
    the time-sampling density.
    """

    data: np.ndarray
    T: float
    t0: float
    t: np.ndarray   # (n * 2 n_t,)
    z: np.ndarray   # (n * 2 n_t, d)
    xt: np.ndarray  # (n * 2 n_t, d)
    sd: np.ndarray  # (n * 2 n_t,)
    w: np.ndarray   # (n, n_t)
    n_t: int


def make_panel(data, T, n_t, rng, t0=DEFAULT_T0, rate=None):
    """Draw a risk panel.

    With ``rate=None`` times are stratified uniform on ``[t0, T]``. With a
    positive ``rate`` they are stratified draws from the exponential density
    ``q(t) ~ exp(-rate (t - t0))`` truncated to ``[t0, T]``, which puts the
    draws where the integrand depends on the parameter; rows are reweighted
    by ``1 / q(t)`` so the risk estimate stays unbiased.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if not T > t0:
        raise DomainError("T must exceed the panel start time")
    n, d = data.shape
    u = (np.arange(n_t) + rng.random((n, n_t))) / n_t
    if rate is None:
        t = t0 + (T - t0) * u
        w = np.full((n, n_t), T - t0)
    else:
        if not rate > 0:
            raise DomainError("rate must be positive")
        mass = -math.expm1(-rate * (T - t0))
        t = t0 - np.log1p(-u * mass) / rate
        w = mass * np.exp(rate * (t - t0)) / rate
    z = rng.standard_normal((n, n_t, d))
    t = np.repeat(t, 2, axis=1).ravel()
    z = np.stack([z, -z], axis=2).reshape(-1, d)
    sd = np.sqrt(noise_var(t))
    x0 = np.repeat(data, 2 * n_t, axis=0)
    xt = np.exp(-t)[:, None] * x0 + sd[:, None] * z
    return RiskPanel(data, float(T), float(t0), t, z, xt, sd, w, int(n_t))


def _panel_values(family, theta, panel):
    s = family.mixture_of(theta).score_at_time(panel.t, panel.xt)
    vals = np.sum(s * s, axis=1) + 2.0 * np.sum(s * panel.z, axis=1) / panel.sd
    # antithetic pairs averaged and weighted
    return vals.reshape(panel.data.shape[0], panel.n_t, 2).mean(axis=2) * panel.w


def ddpm_risk(family, theta, data, T, mc=None, return_stderr=False):
    """DDPM risk of ``theta``.

    Parameters
    ----------
    mc : RiskPanel or tuple ``(n_t, rng)``, optional
        Monte-Carlo panel. Without one the family must admit the closed form.
    return_stderr : bool
        Also return the panel standard error (0 for the closed form).
    """
    theta = family.check(theta)
    data = _as_data(data, family.dim)
    if not T > 0:
        raise DomainError("T must be positive")
    if mc is None:
        if not family.closed_form:
            raise DomainError(f"family {family.name!r} needs a Monte-Carlo panel")
        val = gaussian_location_risk(theta, data, T, family.gaussian_sigma)
        return (val, 0.0) if return_stderr else val
    panel = mc if isinstance(mc, RiskPanel) else make_panel(data, T, mc[0], mc[1])
    vals = _panel_values(family, theta, panel)
    val = float(vals.mean())
    if not return_stderr:
        return val
    return val, float(vals.std(ddof=1) / math.sqrt(vals.size))


# -- optimization -----------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, a, b, xtol=1e-7, maxiter=500):
    """Minimize ``f`` on ``[a, b]``; returns ``(x, fx, trace, converged)``."""
    trace = []
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    trace += [(c, fc), (d, fd)]
    for _ in range(maxiter):
        if abs(b - a) < xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
            trace.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
            trace.append((d, fd))
    converged = abs(b - a) < xtol
    x = 0.5 * (a + b)
    fx = f(x)
    trace.append((x, fx))
    best = min(trace, key=lambda p: p[1])
    return best[0], best[1], trace, converged


@dataclass
class DdpmFit:
    theta_hat: np.ndarray
    objective_value: float
    n: int
    T: float
    trace: list = field(repr=False)
    converged: bool = True
    t0: float = 0.0
    early_stop_bias_bound: float = 0.0


def _minimize(objective, bounds, cfg):
    p = bounds.shape[0]
    if p == 1:
        lo, hi = bounds[0]
        grid = np.linspace(lo, hi, int(cfg["grid"]))
        vals = [objective(np.array([g])) for g in grid]
        trace = [(np.array([g]), v) for g, v in zip(grid, vals)]
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        x, fx, gtrace, ok = golden_section(lambda s: objective(np.array([s])), a, b,
                                           cfg["xtol"], cfg["maxiter"])
        trace += [(np.array([s]), v) for s, v in gtrace]
        return np.array([x]), fx, trace, ok
    if p > 4:
        raise DomainError("derivative-free fitting supports at most 4 parameters")
    axes = [np.linspace(lo, hi, 5) for lo, hi in bounds]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(p, -1).T
    vals = np.array([objective(x) for x in pts])
    trace = list(zip(pts, vals))
    best = None
    for i in np.argsort(vals)[: int(cfg["n_starts"])]:
        res = optimize.minimize(
            objective, pts[i], method="Nelder-Mead", bounds=bounds,
            options={"xatol": cfg["xtol"], "fatol": 1e-12, "maxiter": cfg["maxiter"]},
        )
        trace.append((res.x, res.fun))
        if best is None or res.fun < best.fun:
            best = res
    return best.x, float(best.fun), trace, bool(best.success)


def fit_ddpm(family, data, T, optimizer_cfg=None, rng=None):
    """Minimize the DDPM risk over the family's box.

    ``optimizer_cfg`` keys: ``grid`` (bracketing grid size, p=1), ``xtol``,
    ``maxiter``, ``n_starts`` (simplex restarts, p>1), ``n_t``, ``t0`` and
    ``rate`` (Monte-Carlo panel, see :func:`make_panel`), ``closed_form``
    (use the exact risk when available).
    """
    cfg = {**_DEFAULT_OPT, **(optimizer_cfg or {})}
    data = _as_data(data, family.dim)
    use_closed = family.closed_form and cfg["closed_form"]
    if use_closed:
        objective = lambda th: gaussian_location_risk(th, data, T, family.gaussian_sigma)  # noqa: E731
        t0 = 0.0
    else:
        if rng is None:
            raise DomainError("a random generator is needed for the Monte-Carlo panel")
        panel = make_panel(data, T, int(cfg["n_t"]), rng, cfg["t0"], cfg["rate"])
        objective = lambda th: ddpm_risk(family, th, data, T, panel)  # noqa: E731
        t0 = panel.t0
    theta, fx, trace, ok = _minimize(objective, family.theta_bounds, cfg)
    if not ok:
        warnings.warn("DDPM optimizer did not converge; returning best iterate", RuntimeWarning)
    bias = 0.0
    if t0 > 0:
        L = max(regularity_constants(family.mixture_of(theta)).L, 1.0)
        d = family.dim
        bias = L * d * t0 + math.sqrt(L) * d * math.sqrt(t0)
    return DdpmFit(theta, float(fx), data.shape[0], float(T), trace, ok, t0, bias)


def fit_mle(family, data, optimizer_cfg=None):
    """Maximum-likelihood fit with the same derivative-free optimizer."""
    cfg = {**_DEFAULT_OPT, **(optimizer_cfg or {})}
    data = _as_data(data, family.dim)
    if family.closed_form:
        lo, hi = family.theta_bounds[:, 0], family.theta_bounds[:, 1]
        return np.clip(data.mean(axis=0), lo, hi)
    theta, _, _, _ = _minimize(lambda th: mle_risk(family, th, data), family.theta_bounds, cfg)
    return theta


# -- Fisher information -----------------------------------------------------

_FD_STEP = 1e-5


def _param_scores(family, theta, x):
    p = family.param_dim
    out = np.empty((x.shape[0], p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = _FD_STEP
        out[:, j] = (family.mixture_of(theta + e).logpdf(x)
                     - family.mixture_of(theta - e).logpdf(x)) / (2.0 * _FD_STEP)
    return out


def _flag_singular(info):
    if np.linalg.eigvalsh(np.atleast_2d(info)).min() <= 1e-12:
        warnings.warn("Fisher information is singular", RuntimeWarning)
    return info


def fisher_information_mc(family, theta, n=10**6, rng=None):
    """Monte-Carlo Fisher information with entrywise standard errors."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rng = stream(0, "fisher") if rng is None else rng
    x = family.mixture_of(theta).sample(int(n), rng)
    g = _param_scores(family, theta, x)
    outer = g[:, :, None] * g[:, None, :]
    info = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / math.sqrt(n)
    return _flag_singular(info), se


def fisher_information(family, theta, rng=None, n_mc=10**6):
    """Fisher information ``E[grad_theta log p grad_theta log p^T]``.

    Closed form for Gaussian location families, adaptive quadrature when
    ``d = p = 1``, Monte Carlo otherwise. Parameter gradients use central
    differences with step 1e-5.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if family.closed_form:
        return np.eye(family.param_dim) / family.gaussian_sigma**2
    if family.dim == 1 and family.param_dim == 1:
        mix = family.mixture_of(theta)

        def integrand(x):
            g = _param_scores(family, theta, np.array([[x]]))[0, 0]
            return g * g * math.exp(mix.logpdf(np.array([x])))

        spread = math.sqrt(mix.second_moment()) + 1.0
        pts = sorted({float(m) for m in mix.means.ravel()})
        lo, hi = min(pts) - 12 * spread, max(pts) + 12 * spread
        val, _ = integrate.quad(integrand, lo, hi, points=pts, epsabs=1e-12, epsrel=1e-10,
                                limit=400)
        return _flag_singular(np.array([[val]]))
    return fisher_information_mc(family, theta, n_mc, rng)[0]


# -- efficiency experiment --------------------------------------------------

@dataclass
class EfficiencyReport:
    trials: int
    n: int
    T: float
    theta_star: np.ndarray
    theta_hats: np.ndarray
    scaled_errors: np.ndarray
    mle_scaled_errors: np.ndarray
    empirical_cov: np.ndarray
    fisher_inv: np.ndarray
    excluded_trials: int = 0

    @property
    def variance_ratio(self):
        """``trace(empirical_cov) / trace(fisher_inv)``."""
        return float(np.trace(self.empirical_cov) / np.trace(self.fisher_inv))

    @property
    def spectral_ratio(self):
        """``|empirical_cov - fisher_inv|_2 / |fisher_inv|_2``."""
        return float(np.linalg.norm(self.empirical_cov - self.fisher_inv, 2)
                     / np.linalg.norm(self.fisher_inv, 2))


def efficiency_experiment(family, theta_star, n, trials, T_rule=default_T_rule, rng=None,
                          optimizer_cfg=None, parallelism=1, seed=None):
    """Repeat draw-and-fit ``trials`` times and compare ``cov(sqrt(n)(theta_hat - theta*))``
    with the inverse Fisher information.

    Trial ``i`` uses the stream ``(key, "trial", i)`` where ``key`` is ``seed``
    or one draw from ``rng``, so the report does not depend on ``parallelism``.
    """
    if int(trials) < 100:
        raise DomainError("trials must be at least 100")
    theta_star = family.check(theta_star)
    key = int(seed) if seed is not None else draw_key(rng)
    T = float(T_rule(n))
    truth = family.mixture_of(theta_star)

    def one(i):
        g = stream(key, "trial", i)
        x = truth.sample(int(n), g)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_ddpm(family, x, T, optimizer_cfg, g)
        if not np.all(np.isfinite(fit.theta_hat)):
            return None
        return fit.theta_hat, fit_mle(family, x, optimizer_cfg)

    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as ex:
            results = list(ex.map(one, range(int(trials))))
    else:
        results = [one(i) for i in range(int(trials))]
    kept = [r for r in results if r is not None]
    hats = np.array([r[0] for r in kept])
    mles = np.array([r[1] for r in kept])
    scaled = math.sqrt(n) * (hats - theta_star)
    emp = np.atleast_2d(np.cov(scaled, rowvar=False))
    finv = np.linalg.inv(np.atleast_2d(fisher_information(family, theta_star)))
    return EfficiencyReport(
        trials=int(trials), n=int(n), T=T, theta_star=theta_star, theta_hats=hats,
        scaled_errors=scaled, mle_scaled_errors=math.sqrt(n) * (mles - theta_star),
        empirical_cov=emp, fisher_inv=finv, excluded_trials=len(results) - len(kept),
    )


def ddpm_mle_gap(family, theta, data, T, mc=None):
    """``R_MLE(theta) - R_DDPM(theta) - C_{d,T}``; equals the average
    ``KL(Q_{T|0}(.|x_i) || P_theta,T)``, hence is nonnegative."""
    theta = family.check(theta)
    data = _as_data(data, family.dim)
    risk = ddpm_risk(family, theta, data, T, mc)
    return mle_risk(family, theta, data) - risk - identity_constant(family.dim, T)


def gaussian_location_kl(family, theta, data, T):
    """Exact average KL term for a Gaussian location family."""
    theta = family.check(theta)
    data = _as_data(data, family.dim)
    g = GaussianParams(theta, family.gaussian_sigma**2 * np.eye(family.dim))
    return float(np.mean([transition_kl(x, g, T) for x in data]))
