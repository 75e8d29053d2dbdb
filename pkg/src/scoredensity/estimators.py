"""scikit-learn style wrappers around the functional API."""

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ddpm import fit_ddpm
from .density import early_stopped_batch, log_density_batch
from .families import RegularityConstants
from .integrated import default_schedule
from .rng import as_generator

__all__ = ["ScoreDensityEstimator", "DDPMEstimator"]


class ScoreDensityEstimator(DensityMixin, BaseEstimator):
    """Log-density estimates from a score oracle.

    ``fit`` only validates the inputs and derives the schedule; the training
    data is optional and, when given, supplies the dimension and an empirical
    second moment if ``M2`` is not set.

    Parameters
    ----------
    oracle : ScoreOracle
    epsilon : float
        Target accuracy for :func:`~scoredensity.integrated.default_schedule`.
    L, M2 : float, optional
        Regularity constants; ``L`` defaults to 1.
    tau, T, m : optional
        Schedule overrides.
    early_stopping : float, optional
        If set, estimate ``log P_tau`` at this ``tau`` instead of ``log P``.
    antithetic, stratified : bool
        Monte-Carlo variance reduction.
    random_state : None, int or Generator
    n_jobs : int
        Worker threads.
    """

    def __init__(self, oracle=None, epsilon=0.1, L=None, M2=None, tau=None, T=None, m=None,
                 early_stopping=None, antithetic=False, stratified=False, random_state=None,
                 n_jobs=1):
        self.oracle = oracle
        self.epsilon = epsilon
        self.L = L
        self.M2 = M2
        self.tau = tau
        self.T = T
        self.m = m
        self.early_stopping = early_stopping
        self.antithetic = antithetic
        self.stratified = stratified
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.oracle is None:
            raise ValueError("an oracle is required")
        d = self.oracle.dim
        M2 = self.M2
        if X is not None:
            X = check_array(X)
            d = X.shape[1] if d is None else d
            if M2 is None:
                M2 = float(np.mean(np.sum(X * X, axis=1)))
        if d is None:
            raise ValueError("dimension unknown: pass X or an oracle with dim set")
        if M2 is None:
            raise ValueError("M2 unknown: pass M2 or training data")
        consts = RegularityConstants(1.0 if self.L is None else self.L, M2)
        self.schedule_ = default_schedule(self.epsilon, consts, d, self.tau, self.T, self.m)
        self.n_features_in_ = d
        self._rng = as_generator(self.random_state)
        return self

    def _ell(self, X):
        check_is_fitted(self, "schedule_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        mc = {"antithetic": self.antithetic, "stratified": self.stratified}
        if self.early_stopping:
            return early_stopped_batch(X, self.oracle, self.early_stopping, self.schedule_,
                                       self._rng, self.n_jobs, **mc)
        return log_density_batch(X, self.oracle, self.schedule_, self._rng, self.n_jobs, **mc)

    def score_samples(self, X):
        """Estimated log-density of each row."""
        return -self._ell(X)[0]

    def score_samples_stderr(self, X):
        """Estimated log-density and its Monte-Carlo standard error."""
        ell, se = self._ell(X)
        return -ell, se

    def score(self, X, y=None):
        """Mean estimated log-density."""
        return float(np.mean(self.score_samples(X)))

    def entropy(self, X):
        """Differential-entropy estimate ``-mean log P_hat`` over samples ``X``."""
        return -self.score(X)


class DDPMEstimator(BaseEstimator):
    """Parameter estimate minimizing the DDPM risk over a parametric family.

    Parameters
    ----------
    family : ParametricFamily
    T : float, optional
        Terminal time; defaults to ``log(n)/2 + 3``.
    n_t : int
        Panel time draws per sample for the Monte-Carlo risk.
    optimizer_cfg : dict, optional
        Passed to :func:`~scoredensity.ddpm.fit_ddpm`.
    random_state : None, int or Generator
    """

    def __init__(self, family=None, T=None, n_t=32, optimizer_cfg=None, random_state=None):
        self.family = family
        self.T = T
        self.n_t = n_t
        self.optimizer_cfg = optimizer_cfg
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.family is None:
            raise ValueError("a parametric family is required")
        X = check_array(X)
        n = X.shape[0]
        T = 0.5 * np.log(n) + 3.0 if self.T is None else float(self.T)
        cfg = {"n_t": self.n_t, **(self.optimizer_cfg or {})}
        self.fit_ = fit_ddpm(self.family, X, T, cfg, as_generator(self.random_state))
        self.theta_ = self.fit_.theta_hat
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Log-density of the fitted model."""
        check_is_fitted(self, "theta_")
        return self.family.mixture_of(self.theta_).logpdf(check_array(X))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))
