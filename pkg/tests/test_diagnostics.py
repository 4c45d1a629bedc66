import numpy as np
import pytest
from scipy import stats

from kabi.datasets import PriorSpec
from kabi.diagnostics import (
    CREDIBLE_LEVELS,
    MetricsReport,
    PosteriorSamples,
    apply_variance_inflation,
    calibration_error,
    compute_metrics,
    fit_variance_inflation,
    nrmse,
    pit,
    pit_ecdf_band,
    pit_matrix,
    posterior_contraction,
    recovery_table,
)
from kabi.errors import ConfigurationError


def exchangeable_cases(n_cases, n_draws, d, seed):
    """Truth and draws from the same conditional: PITs are uniform by design."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        mu = rng.normal(0, 1, d)
        sigma = rng.uniform(0.5, 1.5, d)
        truth = rng.normal(mu, sigma)
        draws = rng.normal(mu, sigma, (n_draws, d))
        cases.append(PosteriorSamples(draws=draws, true_params=truth))
    return cases


class TestPit:
    def test_truth_below_all_draws(self):
        s = PosteriorSamples(draws=np.linspace(1, 2, 99)[:, None],
                             true_params=[0.0])
        rng = np.random.default_rng(0)
        assert pit(s, rng)[0] < 0.01

    def test_truth_above_all_draws(self):
        s = PosteriorSamples(draws=np.linspace(1, 2, 99)[:, None],
                             true_params=[5.0])
        rng = np.random.default_rng(0)
        assert pit(s, rng)[0] > 0.99

    def test_truth_at_median_rank(self):
        draws = np.arange(99, dtype=float)[:, None]
        s = PosteriorSamples(draws=draws, true_params=[49.5])  # rank 50
        vals = [pit(s, np.random.default_rng(k))[0] for k in range(50)]
        assert all(0.5 <= v <= 0.51 for v in vals)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = PosteriorSamples(draws=rng.normal(0, 1, (37, 3)),
                                 true_params=rng.normal(0, 3, 3))
            v = pit(s, rng)
            assert np.all((v >= 0) & (v < 1))

    def test_uniform_under_exchangeability(self):
        # Kolmogorov-Smirnov oracle: when truth and draws share a
        # distribution, randomized-rank PIT values are uniform on [0, 1)
        cases = exchangeable_cases(400, 60, 1, seed=2)
        pits = pit_matrix(cases, np.random.default_rng(3))[:, 0]
        assert stats.kstest(pits, "uniform").pvalue > 0.01

    def test_matrix_shape(self):
        cases = exchangeable_cases(12, 20, 3, seed=4)
        assert pit_matrix(cases, np.random.default_rng(0)).shape == (12, 3)


class TestEcdfBand:
    def test_uniform_sample_inside(self):
        rng = np.random.default_rng(5)
        band = pit_ecdf_band(rng.random(500))
        assert band.inside()

    def test_shifted_sample_outside(self):
        rng = np.random.default_rng(6)
        band = pit_ecdf_band(np.clip(rng.random(500) ** 3, 0, 1))
        assert not band.inside()

    def test_band_brackets_grid_diagonal(self):
        band = pit_ecdf_band(np.random.default_rng(7).random(200))
        assert np.all(band.lower <= band.grid + 1e-12)
        assert np.all(band.upper >= band.grid - 1e-12)

    def test_false_positive_rate_bounded(self):
        # Monte Carlo oracle: with Sidak-corrected pointwise binomial bounds
        # the family-wise escape rate for truly uniform data is at most
        # alpha; positive dependence of ECDF ordinates makes it conservative
        alpha = 0.05
        escapes = 0
        for k in range(100):
            rng = np.random.default_rng(1000 + k)
            if not pit_ecdf_band(rng.random(300), alpha=alpha).inside():
                escapes += 1
        assert escapes <= 2 * alpha * 100

    def test_too_few_values_rejected(self):
        with pytest.raises(ConfigurationError):
            pit_ecdf_band(np.array([0.1, 0.5]))


class TestNrmse:
    def test_exact_recovery_is_zero(self):
        prior = PriorSpec([0.0], [5.0])
        truths = np.array([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(nrmse(truths, truths, prior), 0.0, atol=1e-15)

    def test_constant_offset(self):
        prior = PriorSpec([0.0], [5.0])
        truths = np.array([[1.0], [2.0], [3.0]])
        # RMSE = 0.5, prior range = 5 -> 0.1
        assert nrmse(truths, truths + 0.5, prior)[0] == pytest.approx(0.1)

    def test_per_parameter(self):
        prior = PriorSpec([0.0, 0.0], [1.0, 10.0])
        truths = np.zeros((4, 2))
        means = np.full((4, 2), 0.2)
        np.testing.assert_allclose(nrmse(truths, means, prior), [0.2, 0.02])

    def test_single_case_rejected(self):
        with pytest.raises(ConfigurationError):
            nrmse(np.array([[1.0]]), np.array([[1.0]]), PriorSpec([0.0], [5.0]))


class TestContraction:
    def test_point_mass_contracts_fully(self):
        prior = PriorSpec([0.0], [5.0])
        draws = np.full((100, 1), 2.5) + np.random.default_rng(0).normal(0, 1e-9, (100, 1))
        s = PosteriorSamples(draws=draws, true_params=[2.5])
        assert posterior_contraction([s], prior)[0] == pytest.approx(1.0, abs=1e-6)

    def test_prior_width_posterior_no_contraction(self):
        # Monte Carlo oracle: draws distributed exactly like the prior give
        # contraction 0 in expectation
        prior = PriorSpec([0.0], [5.0])
        rng = np.random.default_rng(8)
        cases = [PosteriorSamples(draws=rng.uniform(0, 5, (2000, 1)),
                                  true_params=[2.0]) for _ in range(200)]
        assert posterior_contraction(cases, prior)[0] == pytest.approx(0.0, abs=0.02)

    def test_known_variance_ratio(self):
        # posterior variance = prior variance / 4 -> contraction 0.75
        prior = PriorSpec([0.0], [np.sqrt(12.0)])  # prior variance exactly 1
        rng = np.random.default_rng(9)
        cases = [PosteriorSamples(draws=rng.normal(1.0, 0.5, (5000, 1)),
                                  true_params=[1.0]) for _ in range(100)]
        assert posterior_contraction(cases, prior)[0] == pytest.approx(0.75, abs=0.01)


class TestCalibrationError:
    def test_levels(self):
        assert len(CREDIBLE_LEVELS) == 19
        assert CREDIBLE_LEVELS[0] == 0.05
        assert CREDIBLE_LEVELS[-1] == 0.95

    def test_well_calibrated_small_error(self):
        # exchangeable truth/draws are perfectly calibrated up to MC noise
        cases = exchangeable_cases(300, 400, 2, seed=10)
        err = calibration_error(cases)
        assert np.all(err <= 0.05)

    def test_overconfident_posterior_flagged(self):
        rng = np.random.default_rng(11)
        cases = []
        for _ in range(200):
            mu = rng.normal(0, 1)
            truth = rng.normal(mu, 1.0)
            draws = rng.normal(mu, 0.2, (300, 1))  # too narrow
            cases.append(PosteriorSamples(draws=draws, true_params=[truth]))
        assert calibration_error(cases)[0] > 0.2

    def test_too_few_cases_rejected(self):
        with pytest.raises(ConfigurationError):
            calibration_error(exchangeable_cases(10, 50, 1, seed=0))


class TestVarianceInflation:
    def overconfident_cases(self, n_cases, seed, spread=0.4):
        # truth scattered with sd 1 around mu, draws only `spread` wide
        rng = np.random.default_rng(seed)
        cases = []
        for _ in range(n_cases):
            mu = rng.normal(0.0, 1.0)
            truth = rng.normal(mu, 1.0)
            draws = rng.normal(mu, spread, (400, 1))
            cases.append(PosteriorSamples(draws=draws, true_params=[truth]))
        return cases

    def test_overconfident_gets_factor_above_one(self):
        prior = PriorSpec([-10.0], [10.0])
        factors = fit_variance_inflation(self.overconfident_cases(200, 0), prior)
        assert factors[0] > 1.5

    def test_calibrated_cases_keep_factor_one(self):
        prior = PriorSpec([-10.0], [10.0])
        cases = exchangeable_cases(200, 400, 1, seed=1)
        factors = fit_variance_inflation(cases, prior)
        assert factors[0] <= 1.2

    def test_inflation_improves_held_out_calibration(self):
        prior = PriorSpec([-10.0], [10.0])
        factors = fit_variance_inflation(self.overconfident_cases(200, 2), prior)
        fresh = self.overconfident_cases(200, 3)
        before = calibration_error(fresh)[0]
        after = calibration_error(
            [apply_variance_inflation(c, factors, prior) for c in fresh])[0]
        assert after < before - 0.1

    def test_apply_preserves_mean_and_box(self):
        prior = PriorSpec([0.0], [1.0])
        rng = np.random.default_rng(4)
        s = PosteriorSamples(draws=rng.uniform(0.4, 0.6, (500, 1)),
                             true_params=[0.5])
        out = apply_variance_inflation(s, np.array([2.0]), prior)
        assert out.draws.mean() == pytest.approx(s.draws.mean(), abs=1e-2)
        assert out.draws.std() > 1.5 * s.draws.std()
        assert np.all((out.draws >= 0.0) & (out.draws <= 1.0))

    def test_too_few_cases_rejected(self):
        prior = PriorSpec([-10.0], [10.0])
        with pytest.raises(ConfigurationError):
            fit_variance_inflation(self.overconfident_cases(10, 5), prior)


class TestRecoveryTable:
    def test_rows_and_interval(self):
        rng = np.random.default_rng(12)
        cases = [PosteriorSamples(draws=rng.normal(1.0, 0.1, (1000, 2)),
                                  true_params=[1.0, 1.0]) for _ in range(3)]
        rows = recovery_table(cases)
        assert len(rows) == 6
        for row in rows:
            assert row["q05"] < row["posterior_mean"] < row["q95"]
        assert {r["case"] for r in rows} == {0, 1, 2}

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            recovery_table([])


class TestMetricsReport:
    def test_compute_and_serialize(self, tmp_path):
        prior = PriorSpec([-4.0], [4.0])
        cases = exchangeable_cases(40, 100, 1, seed=13)
        report = compute_metrics(cases, prior, pit_seed=0)
        assert report.n_test == 40
        assert report.pit_values.shape == (40, 1)
        text = report.to_json(tmp_path / "metrics.json")
        assert (tmp_path / "metrics.json").read_text() == text

    def test_deterministic_given_seed(self):
        prior = PriorSpec([-4.0], [4.0])
        cases = exchangeable_cases(25, 50, 2, seed=14)
        a = compute_metrics(cases, prior, pit_seed=7).to_json()
        b = compute_metrics(cases, prior, pit_seed=7).to_json()
        assert a == b

    def test_extra_fields_serialized(self):
        report = MetricsReport(
            nrmse=np.array([0.1]), posterior_contraction=np.array([0.9]),
            calibration_error=np.array([0.02]),
            pit_values=np.zeros((20, 1)), n_test=20,
            extra={"ess": 123.4})
        assert '"ess": 123.4' in report.to_json()


class TestPosteriorSamplesValidation:
    def test_width_mismatch(self):
        with pytest.raises(ConfigurationError):
            PosteriorSamples(draws=np.zeros((5, 2)), true_params=[1.0])

    def test_nonfinite_draws(self):
        with pytest.raises(ConfigurationError):
            PosteriorSamples(draws=np.array([[np.nan]]), true_params=[1.0])
