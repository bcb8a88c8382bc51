import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dctn, idctn

from poisson_cs.exceptions import InvalidParam, LengthMismatch


logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 7


class BasisKind(Enum):
    IDENTITY = "identity"
    DCT2 = "dct2"


class OrthonormalBasis:
    """
    Orthonormal sparsifying basis Psi with x = Psi theta. DCT2 is the orthonormal 2-D type-II
    cosine transform of a vectorised (row-major) patch.
    """

    def __init__(self, kind, dim, patch_shape=None):
        self.kind = BasisKind(kind)
        self.dim = int(dim)

        if self.dim < 1:
            raise InvalidParam("basis dimension must be positive, got {0}".format(dim))

        if self.kind is BasisKind.DCT2:
            if patch_shape is None:
                side = int(round(np.sqrt(self.dim)))
                patch_shape = (side, side)

            if patch_shape[0] * patch_shape[1] != self.dim:
                raise InvalidParam("patch shape {0} does not match dimension {1}".format(patch_shape, self.dim))

        self.patch_shape = None if patch_shape is None else tuple(patch_shape)

    @classmethod
    def identity(cls, dim):
        return cls(BasisKind.IDENTITY, dim)

    @classmethod
    def dct2(cls, patch_height, patch_width=None):
        patch_width = patch_height if patch_width is None else patch_width
        return cls(BasisKind.DCT2, patch_height * patch_width, (patch_height, patch_width))

    def _check_length(self, vector):
        vector = np.asarray(vector, dtype=float)

        if vector.shape != (self.dim,):
            raise LengthMismatch("expected a vector of length {0}, got shape {1}".format(self.dim, vector.shape))

        return vector

    def synthesize(self, theta):
        """
        Maps coefficients to the signal, x = Psi theta.
        """

        theta = self._check_length(theta)

        if self.kind is BasisKind.IDENTITY:
            return theta.copy()

        return idctn(theta.reshape(self.patch_shape), norm="ortho").ravel()

    def analyze(self, x):
        """
        Maps a signal to its coefficients, theta = Psi^T x.
        """

        x = self._check_length(x)

        if self.kind is BasisKind.IDENTITY:
            return x.copy()

        return dctn(x.reshape(self.patch_shape), norm="ortho").ravel()

    @cached_property
    def matrix(self):
        """
        Dense m x m matrix Psi whose k-th column is synthesize(e_k).
        """

        if self.kind is BasisKind.IDENTITY:
            return np.eye(self.dim)

        unit_coefficients = np.eye(self.dim).reshape((self.dim,) + self.patch_shape)
        columns = idctn(unit_coefficients, axes=(1, 2), norm="ortho").reshape(self.dim, self.dim)

        return columns.T

    def __repr__(self):
        return "OrthonormalBasis(kind={0}, dim={1})".format(self.kind.value, self.dim)


@dataclass(frozen=True)
class PatchGrid:
    image_h: int
    image_w: int
    patch: int = DEFAULT_PATCH_SIZE
    stride: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidParam("stride must be at least 1, got {0}".format(self.stride))

        if self.patch < 1 or self.patch > min(self.image_h, self.image_w):
            raise InvalidParam("patch size {0} does not fit a {1}x{2} image".format(
                self.patch, self.image_h, self.image_w))

    @staticmethod
    def _offsets(length, patch, stride):
        offsets = list(range(0, length - patch + 1, stride))

        # The last patch is pinned to the border so that every pixel is covered
        if offsets[-1] != length - patch:
            offsets.append(length - patch)

        return offsets

    @property
    def row_offsets(self):
        return self._offsets(self.image_h, self.patch, self.stride)

    @property
    def col_offsets(self):
        return self._offsets(self.image_w, self.patch, self.stride)

    @property
    def positions(self):
        return [(row, col) for row in self.row_offsets for col in self.col_offsets]

    def __len__(self):
        return len(self.row_offsets) * len(self.col_offsets)

    def coverage(self):
        """
        Returns the number of patches covering every pixel.
        """

        counts = np.zeros((self.image_h, self.image_w))

        for row, col in self.positions:
            counts[row:row + self.patch, col:col + self.patch] += 1

        return counts


def extract_patches(image, grid):
    """
    Extracts the vectorised (row-major) patches of :param image listed by :param grid.

    :param image: 2-D array of shape (grid.image_h, grid.image_w).
    :param grid: PatchGrid.
    :return: List of 1-D arrays of length grid.patch ** 2, in grid.positions order.
    """

    image = np.asarray(image, dtype=float)

    if image.shape != (grid.image_h, grid.image_w):
        raise LengthMismatch("image of shape {0} does not match grid {1}x{2}".format(
            image.shape, grid.image_h, grid.image_w))

    windows = sliding_window_view(image, (grid.patch, grid.patch))

    return [windows[row, col].ravel().copy() for row, col in grid.positions]


def reassemble(patches, grid):
    """
    Reassembles an image from estimated patches, averaging every pixel over all patches that
    cover it with uniform weights.

    :param patches: Sequence of vectorised patches in grid.positions order.
    :param grid: PatchGrid.
    :return: 2-D array.
    """

    if len(patches) != len(grid):
        raise LengthMismatch("expected {0} patches, got {1}".format(len(grid), len(patches)))

    accumulated = np.zeros((grid.image_h, grid.image_w))

    for patch_vector, (row, col) in zip(patches, grid.positions):
        patch_vector = np.asarray(patch_vector, dtype=float)

        if patch_vector.size != grid.patch ** 2:
            raise LengthMismatch("patch has {0} entries, expected {1}".format(patch_vector.size, grid.patch ** 2))

        accumulated[row:row + grid.patch, col:col + grid.patch] += patch_vector.reshape(grid.patch, grid.patch)

    return accumulated / grid.coverage()
