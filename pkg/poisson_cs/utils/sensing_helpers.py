import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from poisson_cs.exceptions import InvalidParam, LengthMismatch, TooManySupports


logger = logging.getLogger(__name__)

DEFAULT_BERNOULLI_P = 0.5

DEFAULT_SUPPORT_CAP = 10 ** 6

# Sub-Gram matrices diagonalised per batch in estimate_ric
RIC_BATCH_SIZE = 20000

ENTRY_TOLERANCE = 1e-15

FLUX_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class RipMatrix:
    """
    Matrix Phi~ = Z / sqrt(N) whose entries Z_ij are -sqrt((1 - p) / p) with probability p and
    sqrt(p / (1 - p)) otherwise. :attr negative keeps the Bernoulli pattern so that the
    flux-preserving matrix can be built from it exactly.
    """

    entries: np.ndarray
    negative: np.ndarray
    p: float

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    """
    Non-negative, flux-preserving sensing matrix Phi = sqrt(p(1-p)/N) Phi~ + ((1-p)/N) 1 with
    entries in {0, 1/N}. Validated on construction.
    """

    entries: np.ndarray
    source: RipMatrix
    p: float

    def __post_init__(self):
        validate_sensing_matrix(self.entries, self.p)

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, other):
        return self.entries @ other


@dataclass(frozen=True)
class RicEstimate:
    order: int
    delta: float
    supports_checked: int


class ComposedSensing(NamedTuple):
    effective: np.ndarray
    companion: np.ndarray


def _check_dimensions(N, m, p):
    if N < 1 or m < 1:
        raise InvalidParam("matrix dimensions must be positive, got N={0}, m={1}".format(N, m))

    if not 0 < p < 1:
        raise InvalidParam("Bernoulli parameter p must lie in (0, 1), got {0}".format(p))


def admissible_entry_values(N, p):
    """
    Returns the two values the affine map of build_phi sends the Bernoulli levels to.

    :param N: Number of measurements.
    :param p: Bernoulli parameter.
    :return: Tuple (low, high), i.e. (0, 1/N) up to round-off for every p.
    """

    scale = math.sqrt(p * (1 - p) / N)
    offset = (1 - p) / N

    low = offset - scale * math.sqrt((1 - p) / p) / math.sqrt(N)
    high = offset + scale * math.sqrt(p / (1 - p)) / math.sqrt(N)

    return low, high


def validate_sensing_matrix(entries, p):
    """
    Checks non-negativity, two-point support and flux preservation of a sensing matrix.

    :param entries: N x m array.
    :param p: Bernoulli parameter the matrix was built with.
    :return: void
    """

    N = entries.shape[0]
    low, high = admissible_entry_values(N, p)

    if np.any(entries < 0):
        raise InvalidParam("sensing matrix has negative entries")

    on_support = (np.abs(entries - low) <= ENTRY_TOLERANCE) | (np.abs(entries - high) <= ENTRY_TOLERANCE)

    if not np.all(on_support):
        raise InvalidParam("sensing matrix entries must lie in {{{0}, {1}}}".format(low, high))

    if np.any(entries.sum(axis=0) > 1 + FLUX_TOLERANCE):
        raise InvalidParam("sensing matrix is not flux preserving")


def sample_rip_matrix(N, m, p=DEFAULT_BERNOULLI_P, seed=None):
    """
    Samples the N x m matrix Phi~ = Z / sqrt(N) with i.i.d. two-point entries.

    :param N: Number of measurements.
    :param m: Signal dimension.
    :param p: Probability of the negative level.
    :param seed: Int or sequence of ints fed to numpy's PCG64 generator.
    :return: RipMatrix.
    """

    _check_dimensions(N, m, p)

    rng = np.random.default_rng(seed)
    negative = rng.random((N, m)) < p

    negative_level = -math.sqrt((1 - p) / p) / math.sqrt(N)
    positive_level = math.sqrt(p / (1 - p)) / math.sqrt(N)

    entries = np.where(negative, negative_level, positive_level)

    return RipMatrix(entries=entries, negative=negative, p=p)


def build_phi(rip_matrix):
    """
    Builds the flux-preserving sensing matrix from :param rip_matrix. The affine map sends the
    negative level to exactly 0 and the positive level to exactly 1/N, so the entries are
    assigned from the Bernoulli pattern instead of evaluated in floating point.

    :param rip_matrix: RipMatrix.
    :return: SensingMatrix.
    """

    N = rip_matrix.shape[0]
    entries = np.where(rip_matrix.negative, 0.0, 1.0 / N)

    return SensingMatrix(entries=entries, source=rip_matrix, p=rip_matrix.p)


def sample_sensing_matrix(N, m, p=DEFAULT_BERNOULLI_P, seed=None):
    return build_phi(sample_rip_matrix(N, m, p, seed))


def count_supports(m, order):
    return math.comb(m, order)


def estimate_ric(matrix, s, support_cap=DEFAULT_SUPPORT_CAP):
    """
    Computes the restricted isometry constant of order 2s exhaustively: the maximum over all
    2s-column submatrices G of max(lambda_max(G^T G) - 1, 1 - lambda_min(G^T G)).

    :param matrix: N x m matrix (Phi~ or Phi~ Psi).
    :param s: Sparsity; the order checked is 2s.
    :param support_cap: Maximum number of supports enumerated.
    :return: RicEstimate.
    """

    matrix = np.asarray(matrix, dtype=float)
    m = matrix.shape[1]
    order = 2 * s

    if s < 1 or order > m:
        raise InvalidParam("order 2s={0} must lie in [2, m={1}]".format(order, m))

    number_of_supports = count_supports(m, order)

    if number_of_supports > support_cap:
        raise TooManySupports("C({0}, {1}) = {2} supports exceeds the cap of {3}".format(
            m, order, number_of_supports, support_cap))

    gram = matrix.T @ matrix
    delta = 0.0
    supports_checked = 0

    support_iterator = combinations(range(m), order)

    while True:
        batch = np.array([support for _, support in zip(range(RIC_BATCH_SIZE), support_iterator)], dtype=int)

        if batch.size == 0:
            break

        sub_grams = gram[batch[:, :, None], batch[:, None, :]]
        eigenvalues = np.linalg.eigvalsh(sub_grams)

        delta = max(delta, float(np.max(eigenvalues[:, -1] - 1)), float(np.max(1 - eigenvalues[:, 0])))
        supports_checked += batch.shape[0]

    logger.debug("RIC of order %d over %d supports: %.6f", order, supports_checked, delta)

    return RicEstimate(order=order, delta=max(delta, 0.0), supports_checked=supports_checked)


def compose_effective(phi, basis):
    """
    Composes the effective matrix A = Phi Psi and its RIP-bearing companion B = Phi~ Psi.

    :param phi: SensingMatrix.
    :param basis: OrthonormalBasis with basis.dim equal to the number of columns of phi.
    :return: ComposedSensing(effective, companion).
    """

    if phi.shape[1] != basis.dim:
        raise LengthMismatch("sensing matrix has {0} columns but the basis has dimension {1}".format(
            phi.shape[1], basis.dim))

    psi = basis.matrix

    return ComposedSensing(effective=phi.entries @ psi, companion=phi.source.entries @ psi)


def save_sensing_matrix(path, phi):
    """
    Saves :param phi as an .npz container holding the Bernoulli pattern, p and the Phi~ entries.

    :param path: Destination path.
    :param phi: SensingMatrix.
    :return: void
    """

    np.savez(path, negative=phi.source.negative, entries=phi.source.entries, p=np.array(phi.p))


def load_sensing_matrix(path):
    with np.load(path) as container:
        rip_matrix = RipMatrix(
            entries=container["entries"], negative=container["negative"].astype(bool), p=float(container["p"]))

    return build_phi(rip_matrix)
