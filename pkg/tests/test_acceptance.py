"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. The efficiency runs
for the mixture family take several minutes.
"""

import json
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate

from scoredensity.cli import main
from scoredensity.ddpm import (
    ddpm_mle_gap,
    fisher_information,
    fisher_information_mc,
    gaussian_location_family,
    gaussian_location_kl,
    symmetric_mixture_family,
)
from scoredensity.families import (
    HclweParams,
    gaussian,
    mgf_witness,
    regularity_constants,
    subgaussian_constant_at_time,
    symmetric_mixture,
)
from scoredensity.integrated import standard_gaussian_v
from scoredensity.ou import GaussianParams, identity_constant, kl_error_bound, transition_kl
from scoredensity.rng import stream
from scoredensity.tester import HclwePipeline, hclwe_experiment

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return emit


def run_cli(experiment, config, out, *extra):
    t0 = time.perf_counter()
    code = main([experiment, "--config", os.path.join(CONFIGS, config), "--out", str(out),
                 *extra])
    elapsed = time.perf_counter() - t0
    with open(os.path.join(out, "summary.json")) as f:
        return code, json.load(f), elapsed


def test_c01_identity_recovery(tmp_path, report):
    code, s, elapsed = run_cli("identity-check", "identity_check.ini", tmp_path, "--assert")
    ok = code == 0 and s["passed"] and elapsed < 30
    report(1, "likelihood-identity recovery", ok,
           f"max |resid| = {s['max_residual']:.2e} ({s['max_residual_over_stderr']:.2f} se), "
           f"{elapsed:.1f} s")


def test_c02_closed_form_pipeline(report):
    T = 5.0
    worst_quad, worst_excess = 0.0, -np.inf
    for x0 in (0.0, 1.0, 2.0, -1.5):
        v = standard_gaussian_v([x0], T)
        inner = lambda t: math.exp(-2 * t) * x0 * x0 + (1 - math.exp(-2 * t)) - 2  # noqa: E731
        q = integrate.quad(inner, 0, T, epsabs=1e-13, epsrel=1e-13)[0]
        worst_quad = max(worst_quad, abs(v - q))
        ell = v + identity_constant(1, T)
        resid = abs(ell - (0.5 * math.log(2 * math.pi) + 0.5 * x0 * x0))
        worst_excess = max(worst_excess, resid - kl_error_bound([x0], 1.0, T))
        if x0 == 0.0:
            ell0, resid0 = ell, resid
    ok = worst_quad <= 1e-10 and worst_excess <= 0 and resid0 <= 4.6e-5
    report(2, "closed-form pipeline", ok,
           f"ell(0) = {ell0:.6f}, residual {resid0:.2e}, quadrature gap {worst_quad:.1e}")


def test_c03_pac_lift(tmp_path, report):
    code, s, elapsed = run_cli("pac-density", "pac_density.ini", tmp_path)
    ok = s["coverage"] >= 0.8 - 0.03 and elapsed < 300
    report(3, "PAC lift", ok, f"coverage {s['coverage']:.4f} at band {s['band']:.3g}, "
           f"{elapsed:.1f} s")


def test_c04_early_stopping(tmp_path, report):
    code, s, elapsed = run_cli("early-stop", "early_stop.ini", tmp_path)
    ok = s["mean_abs_log_ratio"] <= 0.05
    report(4, "early stopping", ok, f"mean |log ratio| {s['mean_abs_log_ratio']:.4f}, "
           f"{elapsed:.1f} s")


def test_c05_ddpm_mle_identity(report):
    worst = 0.0
    for i in range(20):
        g = stream(2024, "c05", i)
        d = int(g.integers(1, 5))
        fam = gaussian_location_family(d, float(g.uniform(0.3, 2.5)))
        data = 2.0 * g.normal(size=(int(g.integers(1, 20)), d))
        theta = g.normal(size=d)
        T = float(g.uniform(0.1, 8.0))
        gap = ddpm_mle_gap(fam, theta, data, T)
        worst = max(worst, abs(gap - gaussian_location_kl(fam, theta, data, T)))
    report(5, "DDPM-MLE identity", worst <= 1e-8, f"max |gap - KL| = {worst:.2e} on 20 instances")


def test_c06a_efficiency_gaussian(tmp_path, report):
    code, s, elapsed = run_cli("ddpm-efficiency", "ddpm_gaussian.ini", tmp_path, "--assert")
    ratio = s["variance_ratio"]
    ok = code == 0 and 0.85 <= ratio <= 1.15 and elapsed < 600
    report(6, "efficiency, Gaussian location", ok,
           f"var(sqrt(n)(theta_hat - theta*)) = {s['empirical_cov'][0][0]:.4f}, {elapsed:.1f} s")


@pytest.mark.slow
def test_c06b_efficiency_mixture(tmp_path, report):
    fam = symmetric_mixture_family()
    quad = fisher_information(fam, [1.5])[0, 0]
    mc, se = fisher_information_mc(fam, [1.5], 10**6, stream(2024, "c06"))
    cross = abs(quad - mc[0, 0]) <= 3 * se[0, 0]
    code, s, elapsed = run_cli("ddpm-efficiency", "ddpm_mixture.ini", tmp_path, "--assert")
    ratio = s["variance_ratio"]
    mle = np.loadtxt(tmp_path / "results.csv", delimiter=",", skiprows=1)[:, 3]
    mle_ratio = np.var(mle, ddof=1) * quad
    ok = cross and code == 0 and abs(ratio - 1) <= 0.2 and elapsed < 600
    report(6, "efficiency, symmetric mixture", ok,
           f"variance ratio {ratio:.4f} (MLE on the same draws {mle_ratio:.4f}), "
           f"I = {quad:.5f} (MC {mc[0, 0]:.5f} +- {se[0, 0]:.5f}), {elapsed:.1f} s")


def test_c07_kl_bound(report):
    violations, worst = 0, -np.inf
    for i in range(50):
        g = stream(2024, "c07", i)
        d = int(g.integers(1, 4))
        mean = g.normal(size=d)
        a = g.normal(size=(d, d))
        cov = a @ a.T + 0.1 * np.eye(d)
        x0 = 2.0 * g.normal(size=d)
        T = float(g.uniform(0.05, 6.0))
        kl = transition_kl(x0, GaussianParams(mean, cov), T)
        bound = kl_error_bound(x0, float(mean @ mean + np.trace(cov)), T)
        violations += kl > bound
        worst = max(worst, kl / bound)
    report(7, "KL bound", violations == 0, f"{violations} violations, max KL/bound {worst:.3f}")


def test_c08_subgaussian(report):
    t = np.concatenate([np.geomspace(1e-4, 10, 60), [0.0]])
    bounded = all(np.all(subgaussian_constant_at_time(L, t) <= 2 * L) for L in (1.0, 2.5, 40.0))
    results = []
    for mix in (gaussian(2), symmetric_mixture(1.0, dim=2)):
        for k, tt in enumerate((0.01, 0.1, 1.0, 3.0)):
            w = mgf_witness(mix, tt, stream(2024, "c08", mix.n_components, k))
            results.append(w.passed and w.L_t <= 2 * max(regularity_constants(mix).L, 1.0))
    ok = bounded and all(results)
    report(8, "sub-Gaussian score constants", ok,
           f"L_t <= 2L: {bounded}, MGF witnesses passed {sum(results)}/{len(results)}")


@pytest.mark.slow
def test_c09_tester_hclwe(tmp_path, report):
    params = HclweParams(0.1, 2.0, 8, np.eye(4)[0])
    exact = hclwe_experiment(params, HclwePipeline(), 200, seed=2024,
                             phat_factory=lambda truth: truth.logpdf)
    code, s, elapsed = run_cli("hclwe-test", "hclwe_test.ini", tmp_path, "--assert")
    ok = (exact.h0_accuracy == 1.0 and exact.h1_accuracy >= 0.9 and code == 0
          and s["combined_accuracy"] > 0.6 and elapsed < 600)
    report(9, "tester and hCLWE", ok,
           f"exact evaluators H0 {exact.h0_accuracy:.3f} H1 {exact.h1_accuracy:.3f}; "
           f"pipeline combined {s['combined_accuracy']:.3f}, {elapsed:.1f} s")


def test_c10_entropy(tmp_path, report):
    code, s, elapsed = run_cli("entropy", "entropy.ini", tmp_path)
    err = abs(s["entropy_mean"] - 0.5 * math.log(2 * math.pi * math.e))
    report(10, "entropy", err <= 0.05,
           f"mean statistic {s['entropy_mean']:.4f} (error {err:.4f}), "
           f"median statistic {s['entropy_median']:.4f}")


# reduced sizes keep the determinism sweep short; the code paths are the full ones
SMALL = {
    "identity-check": ("identity_check.ini", ["schedule.m=20000"]),
    "pac-density": ("pac_density.ini", ["pac.n_eval=200"]),
    "early-stop": ("early_stop.ini", ["early_stop.n_eval=50"]),
    "ddpm-efficiency": ("ddpm_mixture.ini", ["ddpm.n=200", "ddpm.trials=100", "ddpm.n_t=8"]),
    "hclwe-test": ("hclwe_test.ini", ["hclwe.trials=12", "schedule.m=500"]),
    "entropy": ("entropy.ini", ["entropy.n=200"]),
    "schedule-print": ("schedule_print.ini", []),
}


def test_c11_determinism(tmp_path, report):
    mismatched = []
    for name, (config, sets) in SMALL.items():
        blobs = []
        for k in ("1", "8"):
            out = tmp_path / f"{name}-{k}"
            args = [a for kv in sets for a in ("--set", kv)]
            main([name, "--config", os.path.join(CONFIGS, config), "--seed", "99",
                  "--parallelism", k, "--out", str(out), *args])
            blobs.append((out / "results.csv").read_bytes())
        if blobs[0] != blobs[1] or not blobs[0]:
            mismatched.append(name)
    report(11, "determinism", not mismatched,
           f"{len(SMALL) - len(mismatched)}/{len(SMALL)} experiments byte-identical "
           f"at parallelism 1 and 8")
