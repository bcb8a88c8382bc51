import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import rel_entr

from poisson_cs.exceptions import DomainError, InvalidParam, LengthMismatch
from poisson_cs.utils.data_helpers import as_non_negative_vector


logger = logging.getLogger(__name__)

"""
Vectors longer than this are summed with math.fsum instead of numpy's pairwise summation.
"""
COMPENSATED_SUMMATION_THRESHOLD = 10 ** 4

HALF_LOG_TWO_PI = 0.5 * math.log(2 * math.pi)


class DivergenceKind(Enum):
    KL = "kl"
    GEN_KL = "gen_kl"
    JSD = "jsd"
    SQJSD = "sqjsd"
    TV = "tv"
    DELTA = "delta"
    SNLL = "snll"
    NLL_APPROX = "nll_approx"
    SYM_KL = "sym_kl"


# SNLL and the Stirling NLL carry log terms that can make them negative.
SIGNED_DIVERGENCE_KINDS = frozenset({DivergenceKind.SNLL, DivergenceKind.NLL_APPROX})


@dataclass(frozen=True)
class DivergenceValue:
    value: float
    kind: DivergenceKind

    def __post_init__(self):
        if self.kind not in SIGNED_DIVERGENCE_KINDS and self.value < 0:
            raise DomainError("{0} value must be non-negative, got {1}".format(self.kind.value, self.value))

    def __float__(self):
        return float(self.value)


def _as_pair(p, q):
    p = as_non_negative_vector(p, "p")
    q = as_non_negative_vector(q, "q")

    if p.shape != q.shape:
        raise LengthMismatch("vectors have different lengths: {0} and {1}".format(p.size, q.size))

    return p, q


def _accumulate(terms):
    if terms.size > COMPENSATED_SUMMATION_THRESHOLD:
        return math.fsum(terms)

    return float(np.sum(terms))


def kl_terms(p, q):
    """
    Elementwise p_i log(p_i / q_i) with 0 log(0 / q) = 0. Works on arrays of any matching shape,
    +inf where p_i > 0 and q_i = 0.
    """

    return rel_entr(p, q)


def js_divergence_terms(p, q):
    """
    Elementwise Jensen-Shannon terms (D(p_i, m_i) + D(q_i, m_i)) / 2 with m = (p + q) / 2.
    Every term is non-negative by convexity of t log t; round-off below zero is clipped.

    :param p: Non-negative array.
    :param q: Non-negative array with the same shape as :param p.
    :return: Array of per-coordinate terms.
    """

    m = (p + q) / 2

    return np.maximum((rel_entr(p, m) + rel_entr(q, m)) / 2, 0.0)


def kl_divergence(p, q):
    """
    Computes the Kullback-Leibler divergence D(p, q) = sum p_i log(p_i / q_i) between non-negative
    vectors, in nats.

    :param p: First non-negative vector.
    :param q: Second non-negative vector, q_i > 0 wherever p_i > 0.
    :return: KL divergence.
    """

    p, q = _as_pair(p, q)

    if np.any((p > 0) & (q == 0)):
        raise DomainError("kl_divergence is undefined where p_i > 0 and q_i = 0")

    return _accumulate(kl_terms(p, q))


def js_divergence(p, q):
    """
    Computes the Jensen-Shannon divergence J(p, q) = (D(p, m) + D(q, m)) / 2 with m = (p + q) / 2.
    The vectors are not normalised, so J is taken between the raw non-negative vectors. Always
    finite since m dominates the support of both arguments.

    :param p: First non-negative vector.
    :param q: Second non-negative vector.
    :return: JS divergence.
    """

    p, q = _as_pair(p, q)

    return _accumulate(js_divergence_terms(p, q))


def sqjs_divergence(p, q):
    """
    Computes the square root of the Jensen-Shannon divergence, which is a metric.

    :param p: First non-negative vector.
    :param q: Second non-negative vector.
    :return: SQJSD.
    """

    return math.sqrt(js_divergence(p, q))


def generalized_kl_divergence(y, u):
    """
    Computes the generalized KL divergence G(y, u) = sum y_i log(y_i / u_i) - y_i + u_i, the
    Bregman divergence of the Poisson model.

    :param y: Non-negative vector (measurements).
    :param u: Non-negative vector (rates), u_i > 0 wherever y_i > 0.
    :return: Generalized KL divergence.
    """

    y, u = _as_pair(y, u)

    if np.any((y > 0) & (u == 0)):
        raise DomainError("generalized_kl_divergence is undefined where y_i > 0 and u_i = 0")

    return _accumulate(np.maximum(rel_entr(y, u) - y + u, 0.0))


def total_variation(p, q):
    p, q = _as_pair(p, q)

    return _accumulate(np.abs(p - q))


def delta_divergence(p, q):
    """
    Computes Delta(p, q) = sum |p_i - q_i|^2 / (p_i + q_i), skipping indices where p_i + q_i = 0.

    :param p: First non-negative vector.
    :param q: Second non-negative vector.
    :return: Delta divergence.
    """

    p, q = _as_pair(p, q)

    total = p + q
    support = total > 0

    return _accumulate((p[support] - q[support]) ** 2 / total[support])


def symmetric_kl_divergence(u, v):
    """
    Computes Ds(u, v) = D(u, v) + D(v, u). Both directions must be defined, i.e. u and v share
    their support.
    """

    return kl_divergence(u, v) + kl_divergence(v, u)


def _check_strictly_positive(vector, name):
    if np.any(vector <= 0):
        raise DomainError("{0} must be strictly positive; filter zero measurements first".format(name))


def nll_approximation(y, u):
    """
    Stirling-approximated Poisson negative log-likelihood
    NLL(y, u) ~ G(y, u) + sum (log(y_i) / 2 + log(2 pi) / 2).

    :param y: Strictly positive measurements.
    :param u: Strictly positive rates.
    :return: Approximate NLL, may be negative.
    """

    y, u = _as_pair(y, u)
    _check_strictly_positive(y, "y")
    _check_strictly_positive(u, "u")

    log_terms = 0.5 * np.log(y) + HALF_LOG_TWO_PI

    return generalized_kl_divergence(y, u) + _accumulate(log_terms)


def symmetric_nll(y, u):
    """
    Symmetrized Stirling NLL
    SNLL(y, u) ~ G(y, u) + G(u, y) + sum (log(y_i) / 2 + log(u_i) / 2 + log(2 pi)).

    :param y: Strictly positive measurements.
    :param u: Strictly positive rates.
    :return: SNLL, symmetric in its arguments, may be negative.
    """

    y, u = _as_pair(y, u)
    _check_strictly_positive(y, "y")
    _check_strictly_positive(u, "u")

    log_terms = 0.5 * np.log(y) + 0.5 * np.log(u) + 2 * HALF_LOG_TWO_PI

    return generalized_kl_divergence(y, u) + generalized_kl_divergence(u, y) + _accumulate(log_terms)


def satisfies_snll_dominance(y, u, mode="coordinate"):
    """
    Checks the condition under which SNLL(y, u) >= Ds(y, u), so that SNLL(y, u) <= eps implies
    J(y, u) <= eps / 4.

    :param y: Measurements.
    :param u: Strictly positive rates.
    :param mode: "coordinate" requires y_i >= 1 / (4 pi^2 u_i) for every i, "geometric" requires
    min y_i >= 1 / (4 pi^2 (prod u_i)^(1/N)).
    :return: Boolean.
    """

    y, u = _as_pair(y, u)
    _check_strictly_positive(u, "u")

    if mode == "coordinate":
        return bool(np.all(y >= 1.0 / (4 * math.pi ** 2 * u)))

    if mode == "geometric":
        geometric_mean = math.exp(float(np.mean(np.log(u))))
        return bool(y.min() >= 1.0 / (4 * math.pi ** 2 * geometric_mean))

    raise InvalidParam("unknown dominance check mode {0}".format(mode))


DIVERGENCE_FUNCTIONS = {
    DivergenceKind.KL: kl_divergence,
    DivergenceKind.GEN_KL: generalized_kl_divergence,
    DivergenceKind.JSD: js_divergence,
    DivergenceKind.SQJSD: sqjs_divergence,
    DivergenceKind.TV: total_variation,
    DivergenceKind.DELTA: delta_divergence,
    DivergenceKind.SNLL: symmetric_nll,
    DivergenceKind.NLL_APPROX: nll_approximation,
    DivergenceKind.SYM_KL: symmetric_kl_divergence,
}


def divergence(kind, p, q):
    """
    Evaluates the divergence named by :param kind and tags the result with its kind.

    :param kind: DivergenceKind or its string value.
    :param p: First vector.
    :param q: Second vector.
    :return: DivergenceValue.
    """

    kind = DivergenceKind(kind)

    return DivergenceValue(DIVERGENCE_FUNCTIONS[kind](p, q), kind)
