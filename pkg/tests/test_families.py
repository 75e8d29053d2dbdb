import math

import numpy as np
import pytest
from scipy import integrate

from conftest import fd_gradient
from scoredensity.families import (
    GaussianMixture,
    HclweParams,
    RegularityConstants,
    gaussian,
    glm_locality_check,
    hclwe_mixture,
    load_mixture,
    mgf_witness,
    mixture_logdensity,
    mixture_sample,
    mixture_score_at_time,
    null_gaussian,
    regularity_constants,
    save_mixture,
    subgaussian_constant_at_time,
    symmetric_mixture,
)
from scoredensity.ou import DomainError, GaussianParams


def general_mixture():
    comps = [
        GaussianParams(np.array([1.0, -0.5]), np.array([[0.6, 0.2], [0.2, 0.3]])),
        GaussianParams(np.array([-1.5, 0.5]), np.array([[1.2, -0.4], [-0.4, 0.9]])),
        GaussianParams(np.array([0.0, 2.0]), 0.05 * np.eye(2)),
    ]
    return GaussianMixture([0.5, 0.3, 0.2], comps)


MIXTURES = {
    "std-normal-2d": lambda: gaussian(2),
    "symmetric-1d": lambda: symmetric_mixture(1.0),
    "general-2d": general_mixture,
}


class TestConstruction:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(DomainError):
            GaussianMixture([0.5, 0.6], [GaussianParams([0.0], [[1.0]])] * 2)

    def test_negative_weight(self):
        with pytest.raises(DomainError):
            GaussianMixture([1.5, -0.5], [GaussianParams([0.0], [[1.0]])] * 2)

    def test_mixed_dimensions(self):
        with pytest.raises(DomainError):
            GaussianMixture([0.5, 0.5], [GaussianParams([0.0], [[1.0]]),
                                         GaussianParams([0.0, 0.0], np.eye(2))])


class TestLogDensity:
    def test_standard_normal(self):
        assert mixture_logdensity(gaussian(1), np.array([0.0])) == \
            pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_symmetric_mixture_at_zero(self):
        val = mixture_logdensity(symmetric_mixture(1.0), np.array([0.0]))
        assert val == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-15)
        assert val == pytest.approx(-1.418939, abs=1e-6)

    def test_tail_decay(self):
        mix = general_mixture()
        r = np.linspace(5, 500, 50)
        vals = mix.logpdf(np.outer(r, [0.6, 0.8]))
        assert np.all(np.diff(vals) < 0) and vals[-1] < -1e4

    def test_normalized(self):
        mix = symmetric_mixture(1.3, sigma=0.7)
        total, _ = integrate.quad(lambda x: math.exp(mix.logpdf(np.array([x]))), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_non_finite_input(self):
        with pytest.raises(DomainError):
            gaussian(1).logpdf(np.array([np.nan]))


class TestScore:
    def test_standard_normal(self):
        for t in (0.0, 0.3, 4.0):
            assert mixture_score_at_time(gaussian(2), t, np.array([1.0, 1.0])) == \
                pytest.approx([-1.0, -1.0], abs=1e-14)

    def test_symmetric_mixture_closed_form(self):
        mix = symmetric_mixture(1.0)
        s = mixture_score_at_time(mix, 0.0, np.array([0.5]))
        assert s == pytest.approx([-0.5 + math.tanh(0.5)], abs=1e-14)
        assert s[0] == pytest.approx(-0.037883, abs=1e-6)
        assert s == pytest.approx(fd_gradient(mix.logpdf, np.array([0.5])), abs=1e-9)

    def test_symmetric_zero(self):
        mix = symmetric_mixture(2.0)
        for t in (0.0, 0.1, 1.0):
            assert mixture_score_at_time(mix, t, np.array([0.0])) == pytest.approx([0.0], abs=1e-15)

    @pytest.mark.parametrize("name", sorted(MIXTURES))
    @pytest.mark.parametrize("t", [0.01, 0.1, 1.0, 5.0])
    def test_finite_differences(self, rng, name, t):
        mix = MIXTURES[name]()
        pushed = mix.push(t)
        x = pushed.sample(100, rng)
        s = mixture_score_at_time(mix, t, x)
        for xi, si in zip(x, s):
            fd = fd_gradient(pushed.logpdf, xi)
            assert np.linalg.norm(si - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)

    @pytest.mark.parametrize("name", sorted(MIXTURES))
    def test_paths_agree(self, rng, name):
        mix = MIXTURES[name]()
        x = 2 * rng.standard_normal((50, mix.dim))
        for t in (0.0, 0.01, 0.7, 3.0):
            chol_path = mix.push(t).score(x)
            eig_path = mix.score_at_time(t, x)
            per_row = mix.score_at_time(np.full(50, t), x)
            assert np.allclose(chol_path, eig_path, rtol=1e-10, atol=1e-10)
            assert np.allclose(per_row, eig_path, rtol=0, atol=0)
            assert np.allclose(mix.push(t).logpdf(x), mix.logpdf_at_time(t, x), atol=1e-10)

    def test_per_row_times(self, rng):
        mix = general_mixture()
        x = rng.standard_normal((6, 2))
        t = np.array([0.0, 0.01, 0.1, 0.5, 1.0, 4.0])
        got = mix.score_at_time(t, x)
        for i in range(6):
            assert np.allclose(got[i], mix.push(t[i]).score(x[i]), atol=1e-10)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            mixture_score_at_time(gaussian(1), -0.1, np.array([0.0]))


class TestSampling:
    def test_near_point_mass(self, rng):
        mix = GaussianMixture([1.0], [GaussianParams([3.0], [[1e-10]])])
        assert mixture_sample(mix, rng) == pytest.approx([3.0], abs=1e-3)

    def test_mean_clt(self, rng):
        x = mixture_sample(gaussian(1), rng, 100_000)
        assert abs(x.mean()) <= 4 / math.sqrt(1e5)

    def test_component_frequencies(self, rng):
        n = 100_000
        x = mixture_sample(symmetric_mixture(1.0, sigma=1e-3), rng, n)
        frac = np.mean(x[:, 0] > 0)
        assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / n)

    @pytest.mark.parametrize("name", sorted(MIXTURES))
    def test_second_moment(self, rng, name):
        mix = MIXTURES[name]()
        x = mix.sample(100_000, rng)
        sq = np.sum(x * x, axis=1)
        assert abs(sq.mean() - mix.second_moment()) <= 5 * sq.std(ddof=1) / math.sqrt(len(sq))

    def test_deterministic(self):
        from scoredensity.rng import stream

        mix = general_mixture()
        assert np.array_equal(mix.sample(10, stream(1)), mix.sample(10, stream(1)))


class TestRegularity:
    @pytest.mark.parametrize("sigma,d", [(1.0, 1), (0.5, 3), (2.0, 2)])
    def test_gaussian(self, sigma, d):
        rc = regularity_constants(gaussian(d, sigma))
        assert rc.L == pytest.approx(1 / sigma**2) and rc.M2 == pytest.approx(sigma**2 * d)

    def test_symmetric_mixture(self):
        rc = regularity_constants(symmetric_mixture(1.0))
        assert rc.L == pytest.approx(1.0) and rc.M2 == pytest.approx(2.0)

    def test_hclwe(self):
        mix = hclwe_mixture(HclweParams(0.1, 2.0, 8, np.eye(3)[0]))
        assert regularity_constants(mix).L == pytest.approx(2 * math.pi * 401, rel=1e-10)

    def test_invalid_constants(self):
        with pytest.raises(DomainError):
            RegularityConstants(-1.0, 1.0)
        with pytest.raises(DomainError):
            RegularityConstants(1.0, np.inf)

    def test_subgaussian_constant(self):
        L = 3.0
        t = np.array([0.0, 0.01, 0.2, 1.0, 5.0])
        with np.errstate(divide="ignore"):
            ref = np.minimum(L * np.exp(2 * t), 1 / (1 - np.exp(-2 * t)))
        assert np.allclose(subgaussian_constant_at_time(L, t), ref)
        assert np.all(subgaussian_constant_at_time(L, t) <= 2 * L)

    @pytest.mark.parametrize("mix", [gaussian(2), symmetric_mixture(1.0, dim=2)])
    def test_mgf_witness(self, rng, mix):
        for t in (0.01, 0.1, 1.0, 3.0):
            w = mgf_witness(mix, t, rng)
            assert w.passed, w
            assert w.L_t <= 2 * max(regularity_constants(mix).L, 1.0)


class TestHclwe:
    @pytest.fixture
    def mix(self):
        s = np.array([0.6, 0.8, 0.0, 0.0])
        return hclwe_mixture(HclweParams(0.1, 2.0, 8, s)), s

    def test_component_count_and_symmetric_weights(self, mix):
        m, _ = mix
        assert m.n_components == 17
        assert np.allclose(m.weights, m.weights[::-1], rtol=0, atol=1e-16)

    def test_along_secret_variance(self, mix):
        m, s = mix
        var = s @ m.covariances[0] @ s
        assert var == pytest.approx((0.01 / 4.01) / (2 * math.pi), rel=1e-12)
        assert var == pytest.approx(3.97e-4, rel=1e-3)

    def test_orthogonal_variance(self, mix):
        m, s = mix
        u = np.array([0.8, -0.6, 0.0, 0.0])
        assert u @ m.covariances[0] @ u == pytest.approx(1 / (2 * math.pi), rel=1e-12)

    def test_spacing(self, mix):
        m, s = mix
        proj = m.means @ s
        assert np.allclose(np.diff(proj), 2.0 / 4.01, rtol=1e-12)
        assert np.diff(proj)[0] == pytest.approx(0.49875, abs=1e-5)

    def test_isotropic_limit(self):
        s = np.eye(2)[0]
        m = hclwe_mixture(HclweParams(0.999, 0.01, 3, s))
        # the along-secret factor beta^2/(beta^2+gamma^2) tends to 1, so the
        # component covariance tends to the null covariance Id/(2 pi)
        assert s @ m.covariances[0] @ s == pytest.approx(1 / (2 * math.pi), rel=1e-3)
        m0 = hclwe_mixture(HclweParams(0.999, 0.0, 3, s))
        assert np.allclose(m0.means, 0.0)

    def test_tail_weight_bound(self):
        k, gamma, beta = 4, 2.0, 0.1
        wide = hclwe_mixture(HclweParams(beta, gamma, 4 * k, np.eye(2)[0]))
        idx = np.arange(-4 * k, 4 * k + 1)
        outside = wide.weights[np.abs(idx) > k].sum()
        assert outside <= 2 * math.exp(-math.pi * k**2 / (2 * gamma**2))

    @pytest.mark.parametrize("beta,gamma,secret", [
        (0.0, 2.0, [1.0, 0.0]), (1.0, 2.0, [1.0, 0.0]), (0.1, -1.0, [1.0, 0.0]),
        (0.1, 2.0, [1.0, 1.0]),
    ])
    def test_invalid(self, beta, gamma, secret):
        with pytest.raises(DomainError):
            HclweParams(beta, gamma, 3, np.array(secret))

    def test_null(self):
        assert np.allclose(null_gaussian(3).covariances[0], np.eye(3) / (2 * math.pi))


class TestLocality:
    def test_single_component(self):
        rep = glm_locality_check(gaussian(1), 1, 1.0, 1.0, 1.0)
        assert rep.passed

    def test_support_outside_ball(self):
        rep = glm_locality_check(symmetric_mixture(5.0), 2, 1.0, 1.0, 0.5)
        assert not rep.support_condition and not rep.passed

    def test_covering_fails(self):
        rep = glm_locality_check(symmetric_mixture(1.5), 1, 1.0, 2.0, 0.5)
        assert not rep.covering_condition
        # brute force: no single ball of radius 1 covers two points 3 apart
        rep2 = glm_locality_check(symmetric_mixture(1.5), 2, 1.0, 2.0, 0.5)
        assert rep2.covering_condition and rep2.passed

    def test_mass_condition(self):
        comps = [GaussianParams([0.0], [[1.0]]), GaussianParams([5.0], [[1.0]])]
        mix = GaussianMixture([0.9, 0.1], comps)
        rep = glm_locality_check(mix, 2, 1.0, 6.0, 0.2)
        assert not rep.mass_condition and rep.covering_condition

    def test_midpoint_cover(self):
        rep = glm_locality_check(symmetric_mixture(0.9), 1, 1.0, 1.0, 0.5)
        assert rep.covering_condition


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        mix = general_mixture()
        path = tmp_path / "mix.json"
        save_mixture(mix, path)
        back = load_mixture(path)
        assert np.array_equal(back.weights, mix.weights)
        assert np.array_equal(back.means, mix.means)
        assert np.array_equal(back.covariances, mix.covariances)
        x = rng.standard_normal((5, 2))
        assert np.array_equal(back.logpdf(x), mix.logpdf(x))

    def test_seventeen_digit_decimals(self, tmp_path):
        w = float("0.12345678901234567")
        mix = GaussianMixture.from_arrays([w, 1 - w], [[0.1], [0.30000000000000004]],
                                          [[[1.0]], [[2.0]]])
        save_mixture(mix, tmp_path / "m.json")
        back = load_mixture(tmp_path / "m.json")
        assert back.weights[0] == w and back.means[1, 0] == 0.30000000000000004

    def test_unknown_field(self):
        d = gaussian(1).to_dict()
        d["extra"] = 1
        with pytest.raises(DomainError):
            GaussianMixture.from_dict(d)

    def test_dim_mismatch(self):
        d = gaussian(2).to_dict()
        d["dim"] = 3
        with pytest.raises(DomainError):
            GaussianMixture.from_dict(d)
