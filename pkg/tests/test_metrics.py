import numpy as np
import pytest

from factorport.errors import InsufficientDataError, ParameterError, UndefinedError
from factorport.metrics import (
    bootstrap_diff_test,
    breakeven_cost,
    cer,
    cer_from_moments,
    delta_cer,
    perf_summary,
    var_cvar,
)


def series_with_moments(mean, sd, t=480, seed=0):
    """Exact sample mean and ddof-1 standard deviation by standardization."""
    z = np.random.default_rng(seed).normal(size=t)
    z = (z - z.mean()) / np.std(z, ddof=1)
    return mean + sd * z


class TestPerfSummary:
    def test_equal_weight_row_from_tables(self):
        # monthly EW benchmark: mean excess 0.761%, SD 4.159% -> SR 0.183
        x = series_with_moments(0.00761, 0.04159)
        perf = perf_summary(x)
        assert perf.mean * 100 == pytest.approx(0.761)
        assert perf.sd * 100 == pytest.approx(4.159)
        assert perf.sr == pytest.approx(0.183, abs=5e-4)

    def test_mad_two_points(self):
        assert perf_summary(np.array([-1.0, 1.0])).mad == pytest.approx(1.0)

    def test_constant_series_undefined(self):
        with pytest.raises(UndefinedError):
            perf_summary(np.full(10, 0.5))  # exactly representable, sd is exactly 0

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            perf_summary(np.array([0.01]))


class TestVarCvar:
    def test_equal_weight_row_from_tables(self):
        var95, cvar95 = var_cvar(0.00761, 0.04159, 0.95)
        assert var95 * 100 == pytest.approx(6.079, abs=0.01)
        assert cvar95 * 100 == pytest.approx(7.817, abs=0.01)

    def test_standard_normal_constants(self):
        # frozen quantile/density values for the unit normal
        var95, cvar95 = var_cvar(0.0, 1.0, 0.95)
        assert var95 == pytest.approx(1.6449, abs=1e-3)
        assert cvar95 == pytest.approx(2.0627, abs=1e-3)

    def test_zero_sd(self):
        var95, cvar95 = var_cvar(0.02, 0.0)
        assert var95 == -0.02 and cvar95 == -0.02

    def test_cvar_exceeds_var_when_risky(self):
        for a in (0.9, 0.95, 0.99):
            v, c = var_cvar(0.01, 0.05, a)
            assert c > v

    def test_invalid_level(self):
        with pytest.raises(ParameterError):
            var_cvar(0.0, 1.0, 1.0)


class TestCer:
    def test_equal_weight_rows_from_tables(self):
        x = series_with_moments(0.00761, 0.04159)
        assert cer(x, 2.0) * 100 == pytest.approx(0.589, abs=0.002)
        assert cer(x, 5.0) * 100 == pytest.approx(0.330, abs=0.002)
        assert cer(x, 10.0) * 100 == pytest.approx(-0.103, abs=0.002)

    def test_zero_gamma_is_mean(self):
        x = series_with_moments(0.004, 0.03, seed=2)
        assert cer(x, 0.0) == pytest.approx(x.mean())

    def test_zero_sd_is_mean_for_every_gamma(self):
        x = np.full(12, 0.007)
        for g in (0.0, 2.0, 10.0):
            assert cer(x, g) == pytest.approx(0.007)

    def test_strictly_decreasing_in_gamma(self):
        x = series_with_moments(0.005, 0.04, seed=3)
        values = [cer(x, g) for g in (0.0, 1.0, 2.0, 5.0, 10.0)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_delta_cer(self):
        a = series_with_moments(0.006, 0.03, seed=4)
        b = series_with_moments(0.004, 0.05, seed=5)
        assert delta_cer(a, b, 5.0) == pytest.approx(cer(a, 5.0) - cer(b, 5.0))

    def test_moment_form_consistency(self):
        x = series_with_moments(0.006, 0.035, seed=6)
        assert cer(x, 4.0) == pytest.approx(cer_from_moments(0.006, 0.035, 4.0), abs=1e-12)


class TestBreakeven:
    def test_sample_row_from_tables(self):
        # SR 0.209 vs 0.183, TO 41.269% vs 1.081% -> 6.470 bps
        assert breakeven_cost(0.209, 0.183, 41.269, 1.081) == pytest.approx(6.47, abs=0.01)

    def test_equal_sharpe_is_zero(self):
        assert breakeven_cost(0.2, 0.2, 30.0, 1.0) == 0.0

    def test_equal_turnover_undefined(self):
        with pytest.raises(UndefinedError):
            breakeven_cost(0.2, 0.1, 5.0, 5.0)

    def test_sign_follows_delta_sr(self):
        assert breakeven_cost(0.25, 0.2, 10.0, 1.0) > 0
        assert breakeven_cost(0.15, 0.2, 10.0, 1.0) < 0


class TestBootstrapDiff:
    def test_identical_series_p_one(self):
        x = np.random.default_rng(0).normal(size=120)
        assert bootstrap_diff_test(x, x, "sd", block_length=12, n_resamples=200) == 1.0

    def test_detects_sd_difference(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0, 1, size=480)
        b = rng.normal(0, 2, size=480)
        p = bootstrap_diff_test(a, b, "sd", block_length=12, n_resamples=500, seed=7)
        assert p < 0.01

    def test_block_length_bound(self):
        x = np.random.default_rng(2).normal(size=480)
        with pytest.raises(ParameterError):
            bootstrap_diff_test(x, x, "sd", block_length=480)

    def test_sr_and_cer_statistics_run(self):
        rng = np.random.default_rng(3)
        a = rng.normal(0.01, 0.04, size=240)
        b = rng.normal(0.002, 0.04, size=240)
        for stat in ("sr", "cer"):
            p = bootstrap_diff_test(a, b, stat, block_length=12, n_resamples=200, seed=1)
            assert 0.0 < p <= 1.0

    def test_unknown_statistic(self):
        x = np.random.default_rng(4).normal(size=100)
        with pytest.raises(ParameterError):
            bootstrap_diff_test(x, x, "kurtosis", block_length=5, n_resamples=10)
