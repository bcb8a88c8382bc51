import numpy as np

from poisson_cs.exceptions import DomainError, LengthMismatch


def as_non_negative_vector(values, name="vector"):
    """
    Converts :param values to a 1-D float array and checks that it is a valid non-negative vector.

    :param values: Sequence of reals.
    :param name: Name used in error messages.
    :return: 1-D numpy float array.
    """

    vector = np.asarray(values, dtype=float)

    if vector.ndim != 1 or vector.size < 1:
        raise LengthMismatch("{0} must be a 1-D vector with at least one entry".format(name))

    if np.any(np.isnan(vector)) or np.any(vector < 0):
        raise DomainError("{0} must have non-negative entries".format(name))

    return vector
