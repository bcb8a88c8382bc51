import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import kstest

from poisson_cs.algo.functions import js_divergence_terms
from poisson_cs.exceptions import DegenerateSamples, InvalidParam, LengthMismatch, MissingSamples
from poisson_cs.utils.data_helpers import as_non_negative_vector
from poisson_cs.utils.measurement_helpers import draw_counts


logger = logging.getLogger(__name__)

"""
Constants of the SQJSD concentration bounds: E[sqrt(J)] <= sqrt(N) / 2, the asymptotic variance
11/8, and the tail radius sqrt(N) (1/2 + sqrt(11)/8).
"""
ASYMPTOTIC_VARIANCE = 11.0 / 8.0
TAIL_FACTOR = 0.5 + math.sqrt(11.0) / 8.0

EPSILON_PERCENTILE = 99.0

MIN_KS_TRIALS = 30
MIN_PERCENTILE_TRIALS = 100

SQRT_TWO_MINUS_ONE = math.sqrt(2.0) - 1.0


class EpsilonMode(Enum):
    THEORY = "theory"
    PERCENTILE = "percentile"


@dataclass(frozen=True, eq=False)
class SqjsdSampleSet:
    """
    Monte-Carlo draws of sqrt(J(y, Phi x)), one per Poisson realisation of y.
    """

    samples: np.ndarray
    N: int
    I: float
    trials: int

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size != self.trials:
            raise LengthMismatch("expected {0} samples, got shape {1}".format(self.trials, self.samples.shape))

        if np.any(self.samples < 0):
            raise InvalidParam("SQJSD samples must be non-negative")

    @property
    def mean(self):
        return float(np.mean(self.samples))

    @property
    def var(self):
        return float(np.var(self.samples, ddof=1))

    @property
    def std(self):
        return float(np.std(self.samples, ddof=1))

    def percentile(self, q=EPSILON_PERCENTILE):
        return float(np.percentile(self.samples, q, method="linear"))


@dataclass(frozen=True)
class Theorem1Bounds:
    mean_bound: float
    var_bound: float
    tail_epsilon: float
    tail_prob: float
    s_min: float

    @property
    def var_bound_finite(self):
        return math.isfinite(self.var_bound)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    critical: float
    p_value: float
    passed: bool


@dataclass(frozen=True)
class ReconstructionBound:
    bound: float
    noise_term: float
    compressibility_term: float
    c_prime: float
    c_double_prime: float
    probability: float


def sqjs_divergence_rows(counts, rates):
    """
    sqrt(J(y, u)) for every row y of :param counts against the same :param rates.

    :param counts: Array of shape (trials, N).
    :param rates: Array of shape (N,).
    :return: Array of shape (trials,).
    """

    counts = np.asarray(counts, dtype=float)
    terms = js_divergence_terms(counts, np.broadcast_to(rates, counts.shape))

    return np.sqrt(np.sum(terms, axis=-1))


def monte_carlo_sqjsd(phi, x, trials, seed=None):
    """
    Draws :param trials independent Poisson realisations y ~ Poisson(Phi x) and evaluates
    sqrt(J(y, Phi x)) for each.

    :param phi: SensingMatrix.
    :param x: Non-negative signal.
    :param trials: Number of realisations, at least 2.
    :param seed: Seed for the PCG64 generator.
    :return: SqjsdSampleSet.
    """

    if trials < 2:
        raise InvalidParam("at least 2 trials are needed, got {0}".format(trials))

    x = as_non_negative_vector(x, "x")

    if x.size != phi.shape[1]:
        raise LengthMismatch("signal length {0} does not match {1} matrix columns".format(x.size, phi.shape[1]))

    rates = phi.entries @ x
    rng = np.random.default_rng(seed)
    counts = draw_counts(rates, rng, size=trials)

    samples = sqjs_divergence_rows(counts, rates)

    logger.debug("SQJSD Monte-Carlo N=%d I=%.3g trials=%d: mean %.4f", phi.shape[0], x.sum(), trials, samples.mean())

    return SqjsdSampleSet(samples=samples, N=phi.shape[0], I=float(x.sum()), trials=trials)


def theorem1_bounds(phi, x):
    """
    Evaluates the three concentration statements for sqrt(J(y, Phi x)) with s_i = N (Phi x)_i:
    the mean bound sqrt(N / 4), the variance bound (11 + 5 sum 1/s_i) / max(0, 4 (2 - sum 1/s_i))
    (+inf on the degenerate branch), and the tail radius and its probability.

    :param phi: SensingMatrix.
    :param x: Non-negative signal.
    :return: Theorem1Bounds.
    """

    x = as_non_negative_vector(x, "x")
    N = phi.shape[0]
    s = N * (phi.entries @ x)

    with np.errstate(divide="ignore"):
        inverse_sum = float(np.sum(1.0 / s)) if np.all(s > 0) else math.inf

    denominator = max(0.0, 4 * (2 - inverse_sum))
    var_bound = (11 + 5 * inverse_sum) / denominator if denominator > 0 else math.inf

    return Theorem1Bounds(
        mean_bound=math.sqrt(N) / 2,
        var_bound=var_bound,
        tail_epsilon=math.sqrt(N) * TAIL_FACTOR,
        tail_prob=1 - 2 * math.exp(-N / 2),
        s_min=float(s.min()),
    )


def ks_critical_value(alpha, n):
    """
    Asymptotic one-sample Kolmogorov-Smirnov critical value c(alpha) / sqrt(n) with
    c(alpha) = sqrt(-ln(alpha / 2) / 2), i.e. c(0.01) ~ 1.628.
    """

    return math.sqrt(-0.5 * math.log(alpha / 2)) / math.sqrt(n)


def ks_gaussian_test(sample_set, alpha=0.01):
    """
    One-sample KS test of the samples against a Gaussian whose mean and standard deviation are
    the empirical ones. No Lilliefors correction is applied.

    :param sample_set: SqjsdSampleSet or 1-D array with at least 30 values.
    :param alpha: Significance level in (0, 1).
    :return: KsResult, passed iff statistic < critical.
    """

    if not 0 < alpha < 1:
        raise InvalidParam("alpha must lie in (0, 1), got {0}".format(alpha))

    samples = sample_set.samples if isinstance(sample_set, SqjsdSampleSet) else np.asarray(sample_set, dtype=float)

    if samples.size < MIN_KS_TRIALS:
        raise InvalidParam("the KS test needs at least {0} samples, got {1}".format(MIN_KS_TRIALS, samples.size))

    std = float(np.std(samples, ddof=1))

    if std == 0:
        raise DegenerateSamples("samples have zero spread; no Gaussian can be fitted")

    statistic, p_value = kstest(samples, "norm", args=(float(np.mean(samples)), std))
    critical = ks_critical_value(alpha, samples.size)

    return KsResult(statistic=float(statistic), critical=critical, p_value=float(p_value),
                    passed=bool(statistic < critical))


def choose_epsilon(mode, N, sample_set=None, percentile=EPSILON_PERCENTILE):
    """
    Chooses the SQJSD constraint radius.

    :param mode: EpsilonMode (or its value). THEORY gives sqrt(N) (1/2 + sqrt(11)/8), PERCENTILE the
    linear-interpolated empirical percentile of the samples.
    :param N: Number of measurements.
    :param sample_set: SqjsdSampleSet with at least 100 trials, required for PERCENTILE.
    :param percentile: Percentile used in PERCENTILE mode.
    :return: Epsilon.
    """

    mode = EpsilonMode(mode)

    if mode is EpsilonMode.THEORY:
        return math.sqrt(N) * TAIL_FACTOR

    if sample_set is None:
        raise MissingSamples("percentile epsilon requires Monte-Carlo samples")

    if sample_set.trials < MIN_PERCENTILE_TRIALS:
        raise MissingSamples("percentile epsilon needs at least {0} samples, got {1}".format(
            MIN_PERCENTILE_TRIALS, sample_set.trials))

    return sample_set.percentile(percentile)


def log_log_slope(x, y):
    """
    Least-squares slope of log(y) against log(x), e.g. the growth exponent of the SQJSD mean in N.
    """

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    if x.size != y.size or x.size < 2:
        raise InvalidParam("a slope needs at least two matching points")

    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidParam("log-log fits need positive values")

    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def reconstruction_error_bound(delta_2s, p, N, I, s, tail_l1=0.0, sigma=math.sqrt(11.0) / 8.0):
    """
    Evaluates the high-probability bound on ||theta - theta*||_2 / I for the SQJSD-constrained
    estimator: C~ N / sqrt(I) + C'' s^(-1/2) ||theta - theta_s||_1 / I, holding with probability
    at least 1 - 2 exp(-N / 2) when the RIC satisfies delta_2s < sqrt(2) - 1.

    :param delta_2s: RIC of order 2s of Phi~ Psi.
    :param p: Bernoulli parameter.
    :param N: Number of measurements.
    :param I: Signal intensity.
    :param s: Sparsity.
    :param tail_l1: l1 norm of theta minus its best s-term approximation.
    :param sigma: Standard deviation of the per-measurement SQJSD.
    :return: ReconstructionBound.
    """

    if not 0 <= delta_2s < SQRT_TWO_MINUS_ONE:
        raise InvalidParam("the bound requires 0 <= delta_2s < sqrt(2) - 1, got {0}".format(delta_2s))

    if I <= 0 or s < 1 or N < 1:
        raise InvalidParam("I, s and N must be positive")

    contraction = 1 - (1 + math.sqrt(2)) * delta_2s
    c_prime = 4 * math.sqrt(8 * (1 + delta_2s)) / (math.sqrt(p * (1 - p)) * contraction)
    c_double_prime = (2 - 2 * delta_2s + 2 * math.sqrt(2 * delta_2s)) / contraction

    noise_term = c_prime * (0.5 + sigma) * N / math.sqrt(I)
    compressibility_term = c_double_prime * tail_l1 / (math.sqrt(s) * I)

    return ReconstructionBound(
        bound=noise_term + compressibility_term,
        noise_term=noise_term,
        compressibility_term=compressibility_term,
        c_prime=c_prime,
        c_double_prime=c_double_prime,
        probability=1 - 2 * math.exp(-N / 2),
    )
