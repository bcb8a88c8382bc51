import math

import numpy as np
import pytest

from poisson_cs.algo.stats.sqjsd_stats import (
    ASYMPTOTIC_VARIANCE,
    EpsilonMode,
    SqjsdSampleSet,
    choose_epsilon,
    ks_critical_value,
    ks_gaussian_test,
    log_log_slope,
    monte_carlo_sqjsd,
    reconstruction_error_bound,
    theorem1_bounds,
)
from poisson_cs.exceptions import DegenerateSamples, InvalidParam, MissingSamples
from poisson_cs.utils.dataset_helpers import generate_dense_signal
from poisson_cs.utils.sensing_helpers import RipMatrix, build_phi, sample_sensing_matrix


def constant_phi(N, m):
    """Sensing matrix whose entries are all 1/N."""
    negative = np.zeros((N, m), dtype=bool)
    entries = np.full((N, m), 1 / math.sqrt(N))
    return build_phi(RipMatrix(entries=entries, negative=negative, p=0.5))


def sample_cell(N, m, intensity, trials, seed):
    rng = np.random.default_rng(seed)
    x = generate_dense_signal(m, intensity, rng)
    phi = sample_sensing_matrix(N, m, seed=seed + 1)
    return phi, x, monte_carlo_sqjsd(phi, x, trials, seed=seed + 2)


class TestMonteCarloSqjsd:

    def test_zero_signal_gives_zero_samples(self):
        phi = sample_sensing_matrix(10, 20, seed=1)
        sample_set = monte_carlo_sqjsd(phi, np.zeros(20), 50, seed=2)
        assert np.all(sample_set.samples == 0)
        assert sample_set.I == 0.0

    def test_reproducible(self):
        phi = sample_sensing_matrix(10, 20, seed=1)
        x = np.full(20, 50.0)
        first = monte_carlo_sqjsd(phi, x, 30, seed=3)
        second = monte_carlo_sqjsd(phi, x, 30, seed=3)
        assert np.array_equal(first.samples, second.samples)

    def test_needs_two_trials(self):
        phi = sample_sensing_matrix(4, 4, seed=1)
        with pytest.raises(InvalidParam, match="trials"):
            monte_carlo_sqjsd(phi, np.ones(4), 1)

    def test_mean_and_variance_bounds_at_n_500(self):
        _, _, sample_set = sample_cell(500, 1000, 1e4, 1000, seed=10)
        assert sample_set.mean <= math.sqrt(500 / 4)
        assert sample_set.var <= ASYMPTOTIC_VARIANCE * 1.2

    def test_tail_exceedances(self):
        phi, x, sample_set = sample_cell(50, 100, 1e6, 10 ** 4, seed=20)
        assert np.mean(sample_set.samples > theorem1_bounds(phi, x).tail_epsilon) == 0.0

    def test_sample_set_validation(self):
        with pytest.raises(InvalidParam):
            SqjsdSampleSet(samples=np.array([-1.0, 1.0]), N=1, I=1.0, trials=2)


class TestTheorem1Bounds:

    def test_constants(self):
        bounds = theorem1_bounds(sample_sensing_matrix(100, 20, seed=1), np.full(20, 10.0))
        assert bounds.mean_bound == 5.0
        assert bounds.tail_epsilon == pytest.approx(9.146, abs=1e-3)
        assert 0.914 < bounds.tail_epsilon / 10 < 0.915
        assert bounds.tail_prob == pytest.approx(1 - 2 * math.exp(-50))

    def test_variance_bound_approaches_asymptote(self):
        bounds = theorem1_bounds(constant_phi(4, 1), np.array([1e12]))
        assert bounds.var_bound == pytest.approx(ASYMPTOTIC_VARIANCE, rel=1e-9)
        assert bounds.var_bound_finite

    def test_degenerate_variance_bound(self):
        # s_i = 1 on both rows, so sum 1/s_i = 2
        bounds = theorem1_bounds(constant_phi(2, 1), np.array([1.0]))
        assert bounds.s_min == pytest.approx(1.0)
        assert bounds.var_bound == math.inf
        assert not bounds.var_bound_finite

    def test_zero_rate_gives_infinite_variance_bound(self):
        bounds = theorem1_bounds(constant_phi(2, 1), np.array([0.0]))
        assert bounds.var_bound == math.inf


class TestKsGaussianTest:

    def test_critical_value(self):
        assert ks_critical_value(0.01, 1) == pytest.approx(1.628, abs=1e-3)
        assert ks_critical_value(0.01, 100) == pytest.approx(0.1628, abs=1e-4)

    def test_calibration_on_gaussian_samples(self):
        passes = sum(ks_gaussian_test(np.random.default_rng(seed).normal(3.0, 0.5, 1000), 0.01).passed
                     for seed in range(20))
        assert passes >= 19

    def test_rejects_skewed_samples(self):
        samples = np.random.default_rng(1).exponential(1.0, 5000)
        assert not ks_gaussian_test(samples, 0.01).passed

    def test_constant_samples(self):
        with pytest.raises(DegenerateSamples, match="zero spread"):
            ks_gaussian_test(np.ones(100))

    def test_invalid_alpha(self):
        with pytest.raises(InvalidParam, match="alpha"):
            ks_gaussian_test(np.arange(100.0), alpha=1.0)

    def test_needs_thirty_samples(self):
        with pytest.raises(InvalidParam, match="at least 30"):
            ks_gaussian_test(np.arange(10.0))

    def test_sqjsd_is_gaussian(self):
        # A second seed is allowed since the test is itself stochastic
        results = [ks_gaussian_test(sample_cell(100, 500, 1e4, 1000, seed=seed)[2], 0.01) for seed in (30, 40)]
        assert any(result.passed for result in results)


class TestChooseEpsilon:

    def test_theory(self):
        assert choose_epsilon(EpsilonMode.THEORY, 50) == pytest.approx(6.467, abs=1e-3)
        assert choose_epsilon("theory", 100) == pytest.approx(9.146, abs=1e-3)

    def test_percentile_interpolation(self):
        sample_set = SqjsdSampleSet(samples=np.arange(1.0, 101.0), N=1, I=1.0, trials=100)
        assert choose_epsilon(EpsilonMode.PERCENTILE, 1, sample_set) == pytest.approx(99.01)

    def test_percentile_needs_samples(self):
        with pytest.raises(MissingSamples):
            choose_epsilon(EpsilonMode.PERCENTILE, 10)

        small = SqjsdSampleSet(samples=np.ones(50), N=1, I=1.0, trials=50)

        with pytest.raises(MissingSamples, match="at least 100"):
            choose_epsilon(EpsilonMode.PERCENTILE, 10, small)

    def test_percentile_independent_of_intensity(self):
        epsilons = [choose_epsilon("percentile", 100, sample_cell(100, 200, intensity, 1000, seed=50)[2])
                    for intensity in (1e6, 1e8)]
        assert 0.9 <= epsilons[0] / epsilons[1] <= 1.1


class TestReconstructionErrorBound:

    def test_constants_at_zero_ric(self):
        bound = reconstruction_error_bound(0.0, 0.5, 50, 1e8, 5)
        assert bound.c_prime == pytest.approx(4 * math.sqrt(8) / 0.5)
        assert bound.c_double_prime == pytest.approx(2.0)
        assert bound.compressibility_term == 0.0
        assert bound.probability == pytest.approx(1 - 2 * math.exp(-25))

    def test_decreases_with_intensity(self):
        bounds = [reconstruction_error_bound(0.1, 0.5, 50, intensity, 5).bound for intensity in (1e4, 1e6, 1e8)]
        assert bounds[0] > bounds[1] > bounds[2]
        assert bounds[0] / bounds[1] == pytest.approx(10.0)

    def test_requires_small_ric(self):
        with pytest.raises(InvalidParam, match="delta_2s"):
            reconstruction_error_bound(0.5, 0.5, 50, 1e8, 5)


class TestLogLogSlope:

    def test_power_law(self):
        x = np.array([25.0, 50.0, 100.0, 200.0])
        assert log_log_slope(x, 3 * x ** 0.5) == pytest.approx(0.5)

    def test_rejects_non_positive(self):
        with pytest.raises(InvalidParam):
            log_log_slope([1.0, 2.0], [0.0, 1.0])


@pytest.mark.slow
class TestConcentrationGrid:

    @pytest.mark.parametrize("N", [50, 100, 500])
    def test_mean_and_variance(self, N):
        for cell, intensity in enumerate((1e3, 1e4, 1e6)):
            phi, x, sample_set = sample_cell(N, 2 * N, intensity, 1000, seed=100 * N + cell)
            bounds = theorem1_bounds(phi, x)

            assert sample_set.mean <= bounds.mean_bound

            if bounds.s_min > 5:
                assert sample_set.var <= ASYMPTOTIC_VARIANCE * 1.2

    def test_variance_is_flat_in_intensity(self):
        variances = [sample_cell(100, 200, intensity, 1000, seed=7)[2].var for intensity in (1e4, 1e6, 1e8)]
        assert max(variances) / min(variances) < 3

    def test_percentile_scales_as_square_root(self):
        measurements = [25, 50, 100, 200, 400]
        percentiles = [sample_cell(N, 1000, 1e6, 1000, seed=N)[2].percentile(99) for N in measurements]

        assert 0.40 <= log_log_slope(measurements, percentiles) <= 0.55
        assert 1.8 <= percentiles[-1] / percentiles[2] <= 2.2
