"""Simple-versus-composite testing from a density estimate, and the
hCLWE-versus-Gaussian distinguishing experiment."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .density import BAND_ROUNDING, log_density_batch
from .families import HclweParams, hclwe_mixture, null_gaussian, regularity_constants
from .integrated import default_schedule
from .oracles import biased_oracle, exact_oracle
from .ou import DomainError, TimeWindow
from .rng import draw_key, stream

__all__ = [
    "TesterConfig",
    "TesterVerdict",
    "HclwePipeline",
    "HclweReport",
    "run_tester",
    "uniform_unit_vector",
    "hclwe_experiment",
]


@dataclass(frozen=True)
class TesterConfig:
    """Tester settings: ``m`` samples and a log-ratio band ``epsilon``."""

    __test__ = False  # keep pytest from collecting this class

    m: int = 66
    epsilon: float = 0.003
    null_logdensity: object = None

    def __post_init__(self):
        if int(self.m) < 1:
            raise DomainError("m must be at least 1")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")


@dataclass(frozen=True)
class TesterVerdict:
    __test__ = False
    verdict: str
    violating_index: int = None
    ratios: np.ndarray = field(default=None, repr=False)


def run_tester(cfg, phat, samples):
    """Output ``H1`` iff some sample has ``|phat(x) - null(x)| > epsilon``.

    ``phat`` and ``cfg.null_logdensity`` map an ``(m, d)`` array to log
    densities. A ratio on the band boundary (up to 1e-12 rounding) counts as
    ``H0``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] != cfg.m:
        raise DomainError(f"expected {cfg.m} samples, got {samples.shape[0]}")
    if cfg.null_logdensity is None:
        raise DomainError("null_logdensity is required")
    ratios = np.asarray(phat(samples), dtype=float) - np.asarray(cfg.null_logdensity(samples), dtype=float)
    if not np.all(np.isfinite(ratios)):
        raise DomainError("non-finite log-density evaluation")
    hits = np.flatnonzero(np.abs(ratios) > cfg.epsilon + BAND_ROUNDING)
    if hits.size:
        return TesterVerdict("H1", int(hits[0]), ratios)
    return TesterVerdict("H0", None, ratios)


def uniform_unit_vector(d, rng):
    """Uniform draw from the unit sphere in ``R^d``."""
    d = int(d)
    if d < 1:
        raise DomainError("d must be a positive integer")
    while True:
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
        if n > 0:
            return v / n


@dataclass(frozen=True)
class HclwePipeline:
    """Density-estimation settings for :func:`hclwe_experiment`.

    ``epsilon`` feeds the default schedule; ``tau``, ``T`` and ``m`` override
    it. ``band`` is the tester band on log-ratios and ``tester_m`` the number
    of fresh samples. ``oracle_bias`` adds a constant error of that size to
    the exact oracle along a random direction.
    """

    epsilon: float = 0.1
    tau: float = None
    T: float = None
    m: int = None
    band: float = 0.003
    tester_m: int = 66
    stratified: bool = True
    antithetic: bool = True
    oracle_bias: float = 0.0


@dataclass
class HclweReport:
    trials: int
    h0_trials: int
    h1_trials: int
    h0_accuracy: float
    h1_accuracy: float
    mean_ratios: dict
    records: list = field(repr=False)

    @property
    def combined_accuracy(self):
        correct = self.h0_accuracy * self.h0_trials + self.h1_accuracy * self.h1_trials
        return correct / self.trials


def _pipeline_phat(truth, pipe, g):
    d = truth.dim
    sched = default_schedule(pipe.epsilon, regularity_constants(truth), d,
                             tau=pipe.tau, T=pipe.T, m=pipe.m)
    oracle = exact_oracle(truth, TimeWindow(sched.tau, sched.T))
    if pipe.oracle_bias > 0:
        oracle = biased_oracle(oracle, uniform_unit_vector(d, g), pipe.oracle_bias)
    key = draw_key(g)

    def phat(x):
        ell, _ = log_density_batch(x, oracle, sched, stream(key), stratified=pipe.stratified,
                                   antithetic=pipe.antithetic)
        return -ell

    return phat


def hclwe_experiment(params, pipeline, trials, rng=None, phat_factory=None, parallelism=1,
                     seed=None):
    """Distinguish hCLWE from ``N(0, Id/(2 pi))`` with a density estimate.

    Each trial flips a fair coin. Under ``H0`` the truth is the null
    Gaussian; under ``H1`` it is ``hclwe_mixture`` with the parameters of
    ``params`` and a fresh uniform secret (``params.secret`` only fixes the
    dimension). A density estimate of the truth is built, either through the
    score pipeline or by ``phat_factory(truth)``, and the tester is run on
    fresh samples. Trial ``i`` uses stream ``(key, "trial", i)``.
    """
    if int(trials) < 10:
        raise DomainError("trials must be at least 10")
    if not isinstance(params, HclweParams):
        raise DomainError("params must be HclweParams")
    d = params.dim
    null = null_gaussian(d)
    cfg = TesterConfig(pipeline.tester_m, pipeline.band, null.logpdf)
    key = int(seed) if seed is not None else draw_key(rng)

    def one(i):
        g = stream(key, "trial", i)
        h1 = bool(g.random() < 0.5)
        if h1:
            p = HclweParams(params.beta, params.gamma, params.k, uniform_unit_vector(d, g))
            truth = hclwe_mixture(p)
        else:
            truth = null
        phat = phat_factory(truth) if phat_factory is not None else _pipeline_phat(truth, pipeline, g)
        samples = truth.sample(cfg.m, g)
        v = run_tester(cfg, phat, samples)
        return {
            "trial": i,
            "hypothesis": "H1" if h1 else "H0",
            "verdict": v.verdict,
            "mean_abs_ratio": float(np.mean(np.abs(v.ratios))),
            "max_abs_ratio": float(np.max(np.abs(v.ratios))),
        }

    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as ex:
            records = list(ex.map(one, range(int(trials))))
    else:
        records = [one(i) for i in range(int(trials))]

    acc, ratios, counts = {}, {}, {}
    for h in ("H0", "H1"):
        rs = [r for r in records if r["hypothesis"] == h]
        counts[h] = len(rs)
        acc[h] = float(np.mean([r["verdict"] == h for r in rs])) if rs else float("nan")
        ratios[h] = float(np.mean([r["mean_abs_ratio"] for r in rs])) if rs else float("nan")
    return HclweReport(int(trials), counts["H0"], counts["H1"], acc["H0"], acc["H1"],
                       ratios, records)
