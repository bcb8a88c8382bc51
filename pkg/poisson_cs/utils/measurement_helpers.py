import logging
import math
from dataclasses import dataclass

import numpy as np

from poisson_cs.exceptions import InvalidParam, LengthMismatch
from poisson_cs.utils.data_helpers import as_non_negative_vector


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    """
    Poisson counts y drawn from the rates Phi x, together with the seed that produced them.
    """

    counts: np.ndarray
    rates: np.ndarray
    seed: object = None

    def __post_init__(self):
        if self.counts.shape != self.rates.shape:
            raise LengthMismatch("counts and rates have different shapes")

        if np.any(self.counts < 0):
            raise InvalidParam("counts must be non-negative")

    def __len__(self):
        return self.counts.size

    @property
    def total_flux(self):
        return int(self.counts.sum())


def as_counts(y):
    """
    Accepts a MeasurementVector or a plain array of counts and returns a float count array.
    """

    if isinstance(y, MeasurementVector):
        return y.counts.astype(float)

    return as_non_negative_vector(y, "y")


def _check_rate(rate):
    if math.isnan(rate) or math.isinf(rate) or rate < 0:
        raise InvalidParam("Poisson rate must be finite and non-negative, got {0}".format(rate))


def poisson_draw(rate, rng):
    """
    Draws one Poisson variate. numpy's generator samples small rates by multiplication of
    uniforms and rates >= 10 by transformed rejection (PTRS).

    :param rate: Finite rate >= 0.
    :param rng: numpy Generator.
    :return: Non-negative integer, 0 for rate 0.
    """

    rate = float(rate)
    _check_rate(rate)

    if rate == 0:
        return 0

    return int(rng.poisson(rate))


def draw_counts(rates, rng, size=None):
    """
    Draws independent Poisson counts for every entry of :param rates.

    :param rates: Non-negative rate vector.
    :param rng: numpy Generator.
    :param size: Optional number of independent repetitions; the result then has shape
    (size, len(rates)).
    :return: Integer array.
    """

    rates = np.asarray(rates, dtype=float)

    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise InvalidParam("Poisson rates must be finite and non-negative")

    shape = rates.shape if size is None else (size,) + rates.shape

    return rng.poisson(np.broadcast_to(rates, shape)).astype(np.int64)


def measure(phi, x, seed=None):
    """
    Generates y ~ Poisson(Phi x) with one independent draw per measurement.

    :param phi: SensingMatrix.
    :param x: Non-negative signal of length phi.shape[1].
    :param seed: Int or sequence of ints for the PCG64 generator.
    :return: MeasurementVector.
    """

    x = as_non_negative_vector(x, "x")

    if x.size != phi.shape[1]:
        raise LengthMismatch("signal of length {0} does not match {1} sensing matrix columns".format(
            x.size, phi.shape[1]))

    rates = phi.entries @ x
    rng = np.random.default_rng(seed)
    counts = draw_counts(rates, rng)

    logger.debug("Measured %d counts from total rate %.6g", counts.sum(), rates.sum())

    return MeasurementVector(counts=counts, rates=rates, seed=seed)
