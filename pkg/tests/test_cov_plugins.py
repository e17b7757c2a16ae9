import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robglasso.cov_plugins import PAIRWISE_KINDS, QN_CONSTANT, MCDOptions, PluginKind, \
    correlation_functional, fast_mcd, finite_sample_estimate, fisher_transform, pairwise_cov, \
    plugin_cov, psd_repair, qn_scale, qn_scale_functional, sample_correlation
from robglasso.errors import DomainError
from robglasso.model import Bivariate, ContaminationPoint, Marginal, sample

from oracles import qn_if, qn_oracle, raw_oracle

KINDS = [k.value for k in PAIRWISE_KINDS]


# --------------------------------------------------------------------------- Qn

class TestQnFunctional:
    def test_consistent_at_normal(self):
        assert qn_scale_functional(Marginal(1.0)) == pytest.approx(1.0, abs=1e-12)
        assert qn_scale_functional(Marginal(2.5)) == pytest.approx(2.5, abs=1e-12)

    @pytest.mark.parametrize("a,eps", [(0.0, 0.1), (1.0, 0.05), (5.0, 0.2), (-3.0, 1e-3),
                                       (0.5, 0.15), (40.0, 0.1)])
    def test_root_matches_brentq(self, a, eps):
        assert qn_scale_functional(Marginal(1.0, eps, a)) == pytest.approx(
            qn_oracle(a, eps), abs=1e-12)

    def test_scale_equivariance(self):
        assert qn_scale_functional(Marginal(3.0, 0.1, 6.0)) == pytest.approx(
            3 * qn_scale_functional(Marginal(1.0, 0.1, 2.0)), rel=1e-13)

    @pytest.mark.parametrize("x", [0.0, 0.3, 1.2, 2.5, 6.0, -4.0])
    def test_influence_closed_form(self, x):
        h = 1e-6
        fd = (qn_scale_functional(Marginal(1.0, h, x)) - 1.0) / h
        assert fd == pytest.approx(qn_if(x), abs=1e-5)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-50, 50), st.floats(1e-6, 0.2))
    def test_bounded_and_positive(self, a, eps):
        s = qn_scale_functional(Marginal(1.0, eps, a))
        assert 0.5 < s < 1.6


# --------------------------------------------------------------------------- correlations

class TestCorrelationFunctionals:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("rho", [-0.8, 0.0, 0.5, 0.95])
    def test_fisher_consistent(self, kind, rho):
        v = correlation_functional(kind, Bivariate(rho))
        assert v.transformed == pytest.approx(rho, abs=1e-12)

    def test_known_clean_values(self):
        assert correlation_functional("kendall", Bivariate(0.5)).raw == pytest.approx(1 / 3)
        assert correlation_functional("spearman", Bivariate(0.5)).raw == pytest.approx(
            6 / np.pi * np.arcsin(0.25))
        assert correlation_functional("quadrant", Bivariate(0.0)).raw == pytest.approx(0.0)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("r,a,b,e", [(0.5, 1.0, 1.0, 0.1), (0.5, 3.0, -2.0, 0.1),
                                         (-0.3, 0.2, 2.5, 0.05), (0.25, 6.0, -6.0, 0.01)])
    def test_mixture_matches_quadrature(self, kind, r, a, b, e):
        v = correlation_functional(kind, Bivariate(r, (1.0, 1.0), e, (a, b))).raw
        assert v == pytest.approx(raw_oracle(kind, r, a, b, e), abs=1e-8)

    @pytest.mark.parametrize("kind", KINDS)
    def test_scale_invariance(self, kind):
        a = correlation_functional(kind, Bivariate(0.4, (1.0, 1.0), 0.1, (1.5, -0.5)))
        b = correlation_functional(kind, Bivariate(0.4, (2.0, 0.5), 0.1, (3.0, -0.25)))
        assert a.raw == pytest.approx(b.raw, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(KINDS), st.floats(-0.95, 0.95), st.floats(-25, 25),
           st.floats(-25, 25), st.floats(1e-4, 0.2))
    def test_bounded(self, kind, rho, a, b, eps):
        v = correlation_functional(kind, Bivariate(rho, (1.0, 1.0), eps, (a, b)))
        assert -1 - 1e-12 <= v.raw <= 1 + 1e-12
        assert -1 - 1e-12 <= v.transformed <= 1 + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(KINDS), st.floats(-0.95, 0.95), st.floats(-8, 8),
           st.floats(-8, 8), st.floats(1e-4, 0.2))
    def test_sign_equivariance(self, kind, rho, a, b, eps):
        v = correlation_functional(kind, Bivariate(rho, (1.0, 1.0), eps, (a, b)))
        w = correlation_functional(kind, Bivariate(-rho, (1.0, 1.0), eps, (a, -b)))
        assert w.raw == pytest.approx(-v.raw, abs=1e-10)

    def test_rejects_classical(self):
        with pytest.raises(DomainError):
            correlation_functional("classical", Bivariate(0.1))


class TestFisherTransform:
    def test_values(self):
        assert fisher_transform("kendall", 1 / 3) == pytest.approx(0.5)
        assert fisher_transform("quadrant", 1.0) == pytest.approx(1.0)
        assert fisher_transform("spearman", 1.0) == pytest.approx(1.0)
        assert fisher_transform("gaussrank", 0.3) == 0.3

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            fisher_transform("kendall", 1.5)

    @settings(max_examples=100, deadline=None)
    @given(st.sampled_from(KINDS), st.floats(-1, 1))
    def test_odd_and_monotone(self, kind, r):
        assert fisher_transform(kind, -r) == pytest.approx(-fisher_transform(kind, r), abs=1e-15)
        assert fisher_transform(kind, min(r + 1e-3, 1.0)) >= fisher_transform(kind, r)


class TestPairwiseCov:
    @pytest.mark.parametrize("kind", KINDS)
    def test_fisher_consistent(self, kind, toeplitz):
        np.testing.assert_allclose(pairwise_cov(kind, toeplitz), toeplitz.sigma, atol=1e-12)

    def test_diagonal_is_qn_squared(self, toeplitz):
        z = np.array([4.0, -1.0, 0.5])
        cov = pairwise_cov("kendall", toeplitz, ContaminationPoint(z, 0.05))
        for j in range(3):
            assert cov[j, j] == pytest.approx(qn_scale_functional(Marginal(1.0, 0.05, z[j])) ** 2,
                                              rel=1e-12)

    def test_classical_mixture(self, toeplitz):
        z = np.array([1.0, 2.0, -1.0])
        cov = plugin_cov("classical", toeplitz, ContaminationPoint(z, 0.1))
        np.testing.assert_allclose(cov, 0.9 * toeplitz.sigma + 0.1 * np.outer(z, z) * 0.9,
                                   atol=1e-14)

    def test_fastmcd_has_no_functional(self, toeplitz):
        with pytest.raises(DomainError):
            plugin_cov("fastmcd", toeplitz)

    def test_parse(self):
        assert PluginKind.parse("Gauss_Rank") is PluginKind.GAUSS_RANK
        with pytest.raises(DomainError):
            PluginKind.parse("huber")


# --------------------------------------------------------------------------- finite sample

def brute_kendall(x, y):
    n = len(x)
    tot = sum(np.sign((x[i] - x[j]) * (y[i] - y[j])) for i in range(n) for j in range(n) if i != j)
    return tot / (n * (n - 1))


class TestFiniteSample:
    @pytest.mark.parametrize("n", [5, 12, 31, 50])
    def test_kendall_brute_force(self, n):
        rng = np.random.default_rng(n)
        x = np.round(rng.normal(size=(n, 2)), 1)  # rounding creates ties
        r = sample_correlation("kendall", x)
        assert r[0, 1] == pytest.approx(brute_kendall(x[:, 0], x[:, 1]), abs=1e-14)

    @pytest.mark.parametrize("n", [2, 3, 8, 9, 10, 11, 40, 101, 150])
    def test_qn_brute_force(self, n):
        x = np.random.default_rng(n).normal(size=n)
        h = n // 2 + 1
        k = h * (h - 1) // 2
        d = sorted(abs(a - b) for a, b in itertools.combinations(x, 2))
        q = qn_scale(x)
        ratio = q / (QN_CONSTANT * d[k - 1])
        if n >= 100:
            assert ratio == pytest.approx(1.0, rel=1e-14)
        else:
            assert 0.3 < ratio <= 1.0

    def test_qn_large_sample_consistency(self):
        x = np.random.default_rng(0).normal(scale=2.0, size=20000)
        assert qn_scale(x) == pytest.approx(2.0, rel=0.02)

    def test_quadrant_monotone_invariance(self):
        x = np.random.default_rng(3).normal(size=(201, 3))
        np.testing.assert_array_equal(sample_correlation("quadrant", x),
                                      sample_correlation("quadrant", x ** 3))

    @pytest.mark.parametrize("kind", ["spearman", "kendall", "gaussrank"])
    def test_rank_invariance(self, kind):
        x = np.random.default_rng(4).normal(size=(150, 3))
        y = np.column_stack([np.exp(x[:, 0]), x[:, 1] ** 3, 2 * x[:, 2] + 1])
        np.testing.assert_allclose(sample_correlation(kind, x), sample_correlation(kind, y),
                                   atol=1e-14)

    @pytest.mark.parametrize("kind", KINDS + ["classical"])
    def test_estimates_converge(self, kind, toeplitz):
        x = sample(toeplitz, 20000, seed=11)
        np.testing.assert_allclose(finite_sample_estimate(kind, x), toeplitz.sigma, atol=0.06)

    def test_input_validation(self):
        with pytest.raises(DomainError):
            finite_sample_estimate("kendall", np.zeros((3, 2)))
        with pytest.raises(DomainError):
            finite_sample_estimate("kendall", np.full((10, 2), np.nan))


class TestPsdRepair:
    def test_example(self):
        m = np.array([[1.0, 2.0], [2.0, 1.0]])
        out = psd_repair(m, floor=0.0)
        np.testing.assert_allclose(out, np.full((2, 2), 1.5), atol=1e-14)

    def test_untouched_when_pd(self):
        m = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert np.array_equal(psd_repair(m), m)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_nearest_among_sampled_candidates(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 4))
        m = (a + a.T) / 2
        out = psd_repair(m)
        assert np.linalg.eigvalsh(out).min() >= 1e-8 - 1e-12
        best = np.linalg.norm(out - m)
        for _ in range(20):
            b = rng.normal(size=(4, 6))
            cand = b @ b.T / 6 + 1e-8 * np.eye(4)
            assert np.linalg.norm(cand - m) >= best - 1e-12


class TestFastMCD:
    def test_deterministic(self):
        x = np.random.default_rng(1).normal(size=(60, 3))
        opts = MCDOptions(n_starts=20, seed=4)
        a, b = fast_mcd(x, opts), fast_mcd(x, opts)
        np.testing.assert_array_equal(a.covariance, b.covariance)

    @pytest.mark.parametrize("reweight", [False, True])
    def test_resists_outliers(self, reweight):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(400, 3))
        x[:80] = rng.normal(loc=20.0, size=(80, 3))
        res = fast_mcd(x, MCDOptions(n_starts=50, seed=0, reweight=reweight))
        # the raw factor assumes a 25% trim, so with 20% outliers it overshoots
        np.testing.assert_allclose(res.covariance, np.eye(3), atol=0.35 if reweight else 0.7)
        assert not np.any(np.isin(res.subset, np.arange(80)))
        assert np.abs(res.location).max() < 0.3
        assert np.linalg.norm(np.cov(x, rowvar=False)) > 100

    def test_needs_enough_rows(self):
        with pytest.raises(DomainError):
            fast_mcd(np.zeros((4, 2)))
