"""Command-line experiment runner.

Usage::

    scoredensity <experiment> [--config FILE] [--seed N] [--out DIR]
                 [--assert] [--parallelism K] [--set section.key=value ...]

The config file is INI with one section per component. Flags override the
file. Every run writes ``manifest.json``, ``results.csv`` and
``summary.json`` into the output directory.
"""

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from importlib import metadata

import numpy as np

from . import __version__
from .ddpm import DEFAULT_RATE, DEFAULT_T0, efficiency_experiment, fisher_information, \
    gaussian_location_family, symmetric_mixture_family
from .density import early_stopped_batch, log_density_batch, pac_evaluate
from .families import HclweParams, RegularityConstants, gaussian, load_mixture, \
    regularity_constants, symmetric_mixture
from .integrated import default_schedule
from .oracles import biased_oracle, exact_oracle
from .ou import DomainError, TimeWindow
from .rng import stream
from .tester import HclwePipeline, hclwe_experiment

EXIT_OK = 0
EXIT_ASSERT = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_KEY = 3
EXIT_MISSING_SEED = 4
EXIT_BAD_NUMBER = 5
EXIT_DOMAIN = 6

EXPERIMENTS = ("identity-check", "pac-density", "early-stop", "ddpm-efficiency",
               "hclwe-test", "entropy", "schedule-print")

# allowed keys per section; None marks a required key without default
SCHEMA = {
    "run": {"seed": None, "parallelism": "1", "out": "results"},
    "family": {"kind": "gaussian", "dim": "1", "sigma": "1.0", "theta": "1.0", "path": ""},
    "schedule": {"epsilon": "0.1", "L": "", "M2": "", "d": "1", "tau": "", "T": "", "m": ""},
    "identity": {"points": "0,1,2", "antithetic": "false", "stratified": "false"},
    "pac": {"delta": "0.2", "n_eval": None, "bias": "eps_star", "min_coverage": "0.77"},
    "early_stop": {"tau_stop": "0.25", "n_eval": None, "max_mean_abs": "0.05"},
    "ddpm": {"family": "gaussian-location", "theta_star": "0.0", "n": None, "trials": None,
             "n_t": "32", "T_offset": "3.0", "ratio_low": "0.8", "ratio_high": "1.2"},
    "hclwe": {"beta": "0.1", "gamma": "2.0", "k": "8", "dim": "4", "trials": None,
              "band": "1.5", "tester_m": "66", "oracle_bias": "0.0", "min_accuracy": "0.6"},
    "entropy": {"n": None, "tolerance": "0.05", "reference_n": "1000000"},
}
INT_KEYS = {"seed", "parallelism", "dim", "d", "m", "n_eval", "n", "trials", "n_t", "k",
            "tester_m", "reference_n"}
BOOL_KEYS = {"antithetic", "stratified"}
TEXT_KEYS = {"out", "kind", "path", "points", "bias", "family", "parallelism", "theta_star"}


class ConfigError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class Config:
    """Validated configuration: ``cfg.get(section, key)`` returns typed values."""

    def __init__(self, experiment, raw):
        self.experiment = experiment
        self.raw = raw

    def text(self, section, key):
        return self.raw[section][key]

    def get(self, section, key):
        val = self.raw[section][key]
        if val == "":
            return None
        if key in TEXT_KEYS:
            return val
        if key in BOOL_KEYS:
            if val.lower() in ("1", "true", "yes", "on"):
                return True
            if val.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"malformed boolean for {section}.{key}: {val!r}", EXIT_BAD_NUMBER)
        try:
            if key in INT_KEYS:
                return int(val)
            x = float(val)
        except ValueError:
            raise ConfigError(f"malformed number for {section}.{key}: {val!r}",
                              EXIT_BAD_NUMBER) from None
        if not math.isfinite(x):
            raise ConfigError(f"non-finite number for {section}.{key}: {val!r}", EXIT_BAD_NUMBER)
        return x

    def require(self, section, key):
        val = self.get(section, key)
        if val is None:
            raise ConfigError(f"{section}.{key} is required for {self.experiment}", EXIT_USAGE)
        return val

    def echo(self):
        return {s: dict(v) for s, v in self.raw.items()}


def parse_config(experiment, path=None, overrides=()):
    """Merge defaults, the INI file and ``section.key=value`` overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}", EXIT_USAGE)
    raw = {s: {k: ("" if v is None else v) for k, v in keys.items()} for s, keys in SCHEMA.items()}
    items = []
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}", EXIT_USAGE)
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}", EXIT_USAGE) from None
        for s in cp.sections():
            items += [(s, k, v) for k, v in cp.items(s)]
    for o in overrides:
        if "=" not in o or "." not in o.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {o!r}", EXIT_USAGE)
        lhs, v = o.split("=", 1)
        s, k = lhs.split(".", 1)
        items.append((s, k, v))
    for s, k, v in items:
        if s not in SCHEMA:
            raise ConfigError(f"unknown section {s!r}", EXIT_UNKNOWN_KEY)
        if k not in SCHEMA[s]:
            raise ConfigError(f"unknown key {k!r} in section [{s}]", EXIT_UNKNOWN_KEY)
        raw[s][k] = v.strip()
    cfg = Config(experiment, raw)
    if raw["run"]["seed"] == "":
        raise ConfigError("seed required", EXIT_MISSING_SEED)
    seed = cfg.get("run", "seed")
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer", EXIT_BAD_NUMBER)
    for s, keys in raw.items():
        for k in keys:
            if k not in TEXT_KEYS:
                cfg.get(s, k)
    return cfg


def parallelism(cfg):
    val = cfg.text("run", "parallelism")
    if val == "auto":
        return os.cpu_count() or 1
    try:
        k = int(val)
    except ValueError:
        raise ConfigError(f"malformed number for run.parallelism: {val!r}", EXIT_BAD_NUMBER) from None
    if k < 1:
        raise ConfigError("run.parallelism must be at least 1", EXIT_BAD_NUMBER)
    return k


def build_family(cfg):
    kind = cfg.text("family", "kind")
    d = cfg.get("family", "dim")
    sigma = cfg.get("family", "sigma")
    if kind == "gaussian":
        return gaussian(d, sigma)
    if kind == "symmetric-mixture":
        return symmetric_mixture(cfg.get("family", "theta"), d, sigma)
    if kind == "file":
        return load_mixture(cfg.require("family", "path"))
    raise ConfigError(f"unknown family.kind {kind!r}", EXIT_USAGE)


def build_schedule(cfg, mix):
    consts = regularity_constants(mix)
    L, M2 = cfg.get("schedule", "L"), cfg.get("schedule", "M2")
    if L is not None or M2 is not None:
        consts = type(consts)(consts.L if L is None else L, consts.M2 if M2 is None else M2)
    return default_schedule(cfg.get("schedule", "epsilon"), consts, mix.dim,
                            cfg.get("schedule", "tau"), cfg.get("schedule", "T"),
                            cfg.get("schedule", "m"))


def _points(cfg, d):
    rows = [r for r in cfg.text("identity", "points").split(";") if r.strip()]
    try:
        vals = [[float(v) for v in r.split(",")] for r in rows]
    except ValueError:
        raise ConfigError("malformed number in identity.points", EXIT_BAD_NUMBER) from None
    if d == 1 and len(vals) == 1:
        return np.array(vals[0])[:, None]
    pts = np.array(vals)
    if pts.ndim != 2 or pts.shape[1] != d:
        raise ConfigError(f"identity.points must be ';'-separated vectors of length {d}",
                          EXIT_USAGE)
    return pts


# -- experiments: each returns (header, rows, summary, passed, derived) --------

def _point_table(x, ell, se, truth_logp, extra=None):
    """Per-point columns: coordinates, ell, stderr, truth_logdensity, abs_log_ratio."""
    header = [f"x{j}" for j in range(x.shape[1])] + ["ell", "stderr", "truth_logdensity",
                                                      "abs_log_ratio"]
    absr = np.abs(-ell - truth_logp)
    rows = [list(p) + [e, s, t, a] for p, e, s, t, a in zip(x, ell, se, truth_logp, absr)]
    if extra:
        for name, col in extra.items():
            header.append(name)
            for r, v in zip(rows, col):
                r.append(v)
    return header, rows, absr


def run_identity(cfg, seed, k):
    mix = build_family(cfg)
    sched = build_schedule(cfg, mix)
    pts = _points(cfg, mix.dim)
    oracle = exact_oracle(mix, TimeWindow(sched.tau, sched.T))
    ell, se = log_density_batch(pts, oracle, sched, stream(seed, cfg.experiment), k,
                                stratified=cfg.get("identity", "stratified"),
                                antithetic=cfg.get("identity", "antithetic"))
    truth = mix.logpdf(pts)
    ok = np.abs(ell + truth) <= 3 * se + 1e-3
    header, rows, resid = _point_table(pts, ell, se, truth, {"pass": ok})
    summary = {"points": len(pts), "max_residual": float(resid.max()),
               "max_residual_over_stderr": float(np.max(resid / np.maximum(se, 1e-300))),
               "passed": bool(ok.all())}
    return header, rows, summary, bool(ok.all()), sched.as_dict()


def run_pac(cfg, seed, k):
    mix = build_family(cfg)
    sched = build_schedule(cfg, mix)
    bias = cfg.text("pac", "bias")
    eps_t = sched.eps_star if bias == "eps_star" else cfg.get("pac", "bias")
    oracle = exact_oracle(mix, TimeWindow(sched.tau, sched.T))
    if eps_t:
        direction = np.zeros(mix.dim)
        direction[0] = 1.0
        oracle = biased_oracle(oracle, direction, eps_t)
    band = 2 * sched.epsilon / cfg.get("pac", "delta")
    g = stream(seed, cfg.experiment)
    seen = {}

    def phat(x):
        seen["x"] = x
        seen["ell"], seen["se"] = log_density_batch(x, oracle, sched, g, k)
        return -seen["ell"]

    rep = pac_evaluate(phat, mix, band, cfg.require("pac", "n_eval"), g)
    header, rows, _ = _point_table(seen["x"], seen["ell"], seen["se"], mix.logpdf(seen["x"]))
    passed = rep.coverage >= cfg.get("pac", "min_coverage")
    summary = {"band": band, "coverage": rep.coverage, "mean_abs_log_ratio": rep.mean_abs_log_ratio,
               "oracle_error": eps_t, "passed": passed}
    return header, rows, summary, passed, dict(sched.as_dict(), band=band, oracle_error=eps_t)


def run_early_stop(cfg, seed, k):
    mix = build_family(cfg)
    tau = cfg.get("early_stop", "tau_stop")
    pushed = mix.push(tau)
    sched = build_schedule(cfg, pushed)
    oracle = exact_oracle(mix, TimeWindow(tau + sched.tau, tau + sched.T))
    g = stream(seed, cfg.experiment)
    x = pushed.sample(cfg.require("early_stop", "n_eval"), g)
    ell, se = early_stopped_batch(x, oracle, tau, sched, g, k)
    header, rows, absr = _point_table(x, ell, se, pushed.logpdf(x))
    mean_abs = float(absr.mean())
    passed = mean_abs <= cfg.get("early_stop", "max_mean_abs")
    summary = {"tau_stop": tau, "mean_abs_log_ratio": mean_abs, "passed": passed}
    return header, rows, summary, passed, dict(sched.as_dict(), tau_stop=tau)


def run_ddpm(cfg, seed, k):
    name = cfg.text("ddpm", "family")
    sigma = cfg.get("family", "sigma")
    if name == "gaussian-location":
        fam = gaussian_location_family(1, sigma)
    elif name == "symmetric-mixture":
        fam = symmetric_mixture_family(sigma)
    else:
        raise ConfigError(f"unknown ddpm.family {name!r}", EXIT_USAGE)
    try:
        theta = np.array([float(v) for v in cfg.text("ddpm", "theta_star").split(",")])
    except ValueError:
        raise ConfigError("malformed number in ddpm.theta_star", EXIT_BAD_NUMBER) from None
    n = cfg.require("ddpm", "n")
    offset = cfg.get("ddpm", "T_offset")
    rep = efficiency_experiment(fam, theta, n, cfg.require("ddpm", "trials"),
                                T_rule=lambda n_: 0.5 * math.log(n_) + offset,
                                optimizer_cfg={"n_t": cfg.get("ddpm", "n_t")},
                                parallelism=k, seed=stream(seed, cfg.experiment).integers(2**63))
    p = fam.param_dim
    header = (["trial"] + [f"theta_hat{j}" for j in range(p)] + [f"scaled_error{j}" for j in range(p)]
              + [f"mle_scaled_error{j}" for j in range(p)])
    rows = [[i] + list(h) + list(s) + list(m) for i, (h, s, m) in
            enumerate(zip(rep.theta_hats, rep.scaled_errors, rep.mle_scaled_errors))]
    ratio = rep.variance_ratio
    passed = cfg.get("ddpm", "ratio_low") <= ratio <= cfg.get("ddpm", "ratio_high")
    summary = {"empirical_cov": rep.empirical_cov.tolist(), "fisher_inv": rep.fisher_inv.tolist(),
               "variance_ratio": ratio, "spectral_ratio": rep.spectral_ratio,
               "excluded_trials": rep.excluded_trials, "T": rep.T,
               "fisher_information": np.atleast_2d(fisher_information(fam, theta)).tolist(),
               "passed": passed}
    derived = {"T": rep.T, "n_t": cfg.get("ddpm", "n_t"), "t0": DEFAULT_T0,
               "time_sampling_rate": DEFAULT_RATE,
               "closed_form": fam.closed_form}
    return header, rows, summary, passed, derived


def run_hclwe(cfg, seed, k):
    d = cfg.get("hclwe", "dim")
    secret = np.zeros(d)
    secret[0] = 1.0
    params = HclweParams(cfg.get("hclwe", "beta"), cfg.get("hclwe", "gamma"),
                         cfg.get("hclwe", "k"), secret)
    pipe = HclwePipeline(epsilon=cfg.get("schedule", "epsilon"), tau=cfg.get("schedule", "tau"),
                         T=cfg.get("schedule", "T"), m=cfg.get("schedule", "m"),
                         band=cfg.get("hclwe", "band"), tester_m=cfg.get("hclwe", "tester_m"),
                         oracle_bias=cfg.get("hclwe", "oracle_bias"))
    rep = hclwe_experiment(params, pipe, cfg.require("hclwe", "trials"), parallelism=k,
                           seed=stream(seed, cfg.experiment).integers(2**63))
    header = ["trial", "hypothesis", "verdict", "mean_abs_ratio", "max_abs_ratio"]
    rows = [[r[h] for h in header] for r in rep.records]
    passed = rep.combined_accuracy > cfg.get("hclwe", "min_accuracy")
    summary = {"params": {"beta": params.beta, "gamma": params.gamma, "k": params.k, "dim": d,
                          "band": pipe.band, "tester_m": pipe.tester_m},
               "trials": rep.trials, "h0_trials": rep.h0_trials, "h1_trials": rep.h1_trials,
               "h0_accuracy": rep.h0_accuracy, "h1_accuracy": rep.h1_accuracy,
               "combined_accuracy": rep.combined_accuracy, "mean_ratios": rep.mean_ratios,
               "passed": passed}
    derived = {"epsilon": pipe.epsilon, "tau": pipe.tau, "T": pipe.T, "m": pipe.m,
               "stratified": pipe.stratified, "antithetic": pipe.antithetic}
    return header, rows, summary, passed, derived


def _reference_entropy(cfg, mix, seed):
    if mix.n_components == 1:
        c = mix.components[0]
        return 0.5 * (mix.dim * math.log(2 * math.pi * math.e) + c.logdet)
    x = mix.sample(cfg.get("entropy", "reference_n"), stream(seed, "entropy-reference"))
    return float(-np.mean(mix.logpdf(x)))


def run_entropy(cfg, seed, k):
    mix = build_family(cfg)
    sched = build_schedule(cfg, mix)
    oracle = exact_oracle(mix, TimeWindow(sched.tau, sched.T))
    n = cfg.require("entropy", "n")
    g = stream(seed, cfg.experiment)
    x = mix.sample(n, g)
    ell, se = log_density_batch(x, oracle, sched, g, k)
    ref = _reference_entropy(cfg, mix, seed)
    mean, median = float(ell.mean()), float(np.median(ell))
    header, rows, _ = _point_table(x, ell, se, mix.logpdf(x))
    passed = abs(mean - ref) <= cfg.get("entropy", "tolerance")
    summary = {"entropy_mean": mean, "entropy_median": median, "reference": ref,
               "abs_error": abs(mean - ref), "passed": passed}
    return header, rows, summary, passed, sched.as_dict()


def run_schedule(cfg, seed, k):
    eps = cfg.get("schedule", "epsilon")
    L = cfg.get("schedule", "L")
    M2 = cfg.get("schedule", "M2")
    consts = RegularityConstants(1.0 if L is None else L, 1.0 if M2 is None else M2)
    sched = default_schedule(eps, consts, cfg.get("schedule", "d"), cfg.get("schedule", "tau"),
                             cfg.get("schedule", "T"), cfg.get("schedule", "m"))
    header = list(sched.as_dict())
    rows = [list(sched.as_dict().values())]
    return header, rows, dict(sched.as_dict(), passed=True), True, sched.as_dict()


RUNNERS = {
    "identity-check": run_identity,
    "pac-density": run_pac,
    "early-stop": run_early_stop,
    "ddpm-efficiency": run_ddpm,
    "hclwe-test": run_hclwe,
    "entropy": run_entropy,
    "schedule-print": run_schedule,
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def _one_line(experiment, summary, passed):
    keys = [k for k in summary if k != "passed" and isinstance(summary[k], (int, float))]
    body = " ".join(f"{k}={summary[k]:.6g}" for k in keys[:8])
    return f"{experiment}: {body} [{'PASS' if passed else 'FAIL'}]"


def build_parser():
    ap = argparse.ArgumentParser(prog="scoredensity", description=__doc__.split("\n")[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", help="master seed (64-bit unsigned)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit nonzero when an acceptance threshold is violated")
    ap.add_argument("--parallelism", help="worker threads or 'auto'")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one config value (repeatable)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.parallelism is not None:
        overrides.append(f"run.parallelism={args.parallelism}")
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        cfg = parse_config(args.experiment, args.config, overrides)
        seed = cfg.get("run", "seed")
        k = parallelism(cfg)
        header, rows, summary, passed, derived = RUNNERS[args.experiment](cfg, seed, k)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN

    out = cfg.text("run", "out")
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "results.csv"), header, rows)
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=_json_default)
    manifest = {
        "experiment": args.experiment,
        "config": cfg.echo(),
        "version": __version__,
        "numpy": metadata.version("numpy"),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "derived": derived,
        "files": ["results.csv", "summary.json", "manifest.json"],
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, default=_json_default)
    print(_one_line(args.experiment, summary, passed))
    if args.check and not passed:
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
