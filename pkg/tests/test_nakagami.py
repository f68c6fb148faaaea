import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from nakagami_qus.errors import DomainError
from nakagami_qus.models import NakagamiParams, Regime
from nakagami_qus.nakagami import (
    analytic_score,
    gamma_variates,
    log_gamma,
    log_pdf,
    pdf,
    regime_labels,
    regime_of,
    sample,
)


class TestLogGamma:
    """Lanczos log-gamma against scipy"""

    def test_matches_scipy(self):
        x = np.concatenate([np.logspace(-3, 2, 400), [0.5, 1.0, 2.0, 3.5]])
        np.testing.assert_allclose(log_gamma(x), special.gammaln(x), rtol=1e-10, atol=1e-12)

    def test_scalar_in_scalar_out(self):
        assert isinstance(log_gamma(0.5), float)
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), abs=1e-13)

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(DomainError):
            log_gamma(bad)


class TestDensity:
    def test_log_pdf_rayleigh_point(self):
        assert log_pdf(1.0, NakagamiParams(1.0, 1.0)) == pytest.approx(math.log(2.0) - 1.0, abs=1e-13)

    def test_log_pdf_half_shape(self):
        expected = math.log(math.sqrt(2.0 / math.pi)) - math.e**2 / 2.0
        assert log_pdf(math.e, NakagamiParams(0.5, 1.0)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("m,omega", [(0.3, 1.0), (0.8, 1.3), (1.0, 1.0), (2.5, 0.7)])
    def test_pdf_matches_scipy(self, m, omega):
        r = np.linspace(0.05, 3.0, 200)
        expected = stats.nakagami(m, scale=math.sqrt(omega)).pdf(r)
        np.testing.assert_allclose(pdf(r, NakagamiParams(m, omega)), expected, rtol=1e-10)

    @pytest.mark.parametrize("m,omega", [(0.7, 1.3), (1.0, 1.0), (3.0, 2.0)])
    def test_pdf_integrates_to_one(self, m, omega):
        params = NakagamiParams(m, omega)
        total, _ = integrate.quad(lambda r: pdf(r, params), 0.0, np.inf)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_pdf_at_zero(self):
        assert pdf(0.0, NakagamiParams(1.0)) == 0.0
        assert pdf(0.0, NakagamiParams(0.5)) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-12)
        assert pdf(0.0, NakagamiParams(0.4)) == math.inf

    def test_log_pdf_requires_positive_r(self):
        with pytest.raises(DomainError):
            log_pdf(0.0, NakagamiParams(1.0))

    def test_invalid_params(self):
        with pytest.raises(DomainError):
            NakagamiParams(0.0)
        with pytest.raises(DomainError):
            NakagamiParams(1.0, -1.0)


class TestAnalyticScore:
    def test_rayleigh_value(self):
        assert analytic_score(0.5, NakagamiParams(1.0, 1.0)) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("m,omega", [(0.4, 0.8), (1.0, 1.0), (2.2, 1.5)])
    def test_matches_finite_difference_of_log_pdf(self, m, omega):
        params = NakagamiParams(m, omega)
        r = np.linspace(0.2, 2.5, 50)
        h = 1e-6
        numeric = (log_pdf(r + h, params) - log_pdf(r - h, params)) / (2 * h)
        np.testing.assert_allclose(analytic_score(r, params), numeric, rtol=1e-6, atol=1e-7)


class TestSampling:
    @pytest.mark.parametrize("m", [0.3, 0.6, 1.0, 2.5])
    def test_second_moment_is_omega(self, m):
        rng = np.random.default_rng(100)
        draws = sample(NakagamiParams(m, 1.4), 200_000, rng)
        assert np.mean(draws**2) == pytest.approx(1.4, rel=0.02)

    @pytest.mark.parametrize("m", [0.4, 1.0, 1.8])
    def test_distribution_matches_scipy(self, m):
        rng = np.random.default_rng(7)
        draws = sample(NakagamiParams(m, 1.0), 20_000, rng)
        result = stats.kstest(draws, stats.nakagami(m).cdf)
        assert result.pvalue > 1e-4

    def test_mean_amplitude_of_rayleigh(self):
        draws = sample(NakagamiParams(1.0, 1.0), 1_000_000, np.random.default_rng(12))
        assert draws.mean() == pytest.approx(math.sqrt(math.pi) / 2, abs=0.01)

    def test_boosted_small_shape(self):
        rng = np.random.default_rng(3)
        draws = gamma_variates(np.full(200_000, 0.2), rng)
        assert draws.min() >= 0.0
        assert draws.mean() == pytest.approx(0.2, rel=0.03)

    def test_same_seed_same_draws(self):
        a = sample(NakagamiParams(0.8), 1000, np.random.default_rng(42))
        b = sample(NakagamiParams(0.8), 1000, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_invalid_count(self, rng):
        with pytest.raises(DomainError):
            sample(NakagamiParams(1.0), 0, rng)


class TestRegime:
    def test_regime_of(self):
        assert regime_of(0.6) is Regime.PRE_RAYLEIGH
        assert regime_of(1.0) is Regime.RAYLEIGH
        assert regime_of(1.5) is Regime.POST_RAYLEIGH

    def test_regime_of_rejects_non_positive(self):
        with pytest.raises(DomainError):
            regime_of(0.0)

    def test_labels_agree_with_regime_of(self):
        values = np.array([0.2, 0.999, 1.0, 1.0 + 1e-12, 1.01, 3.0])
        expected = [list(Regime).index(regime_of(v)) for v in values]
        np.testing.assert_array_equal(regime_labels(values), expected)
