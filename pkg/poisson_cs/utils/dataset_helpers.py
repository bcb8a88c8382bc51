import logging

import numpy as np
from PIL import Image

from poisson_cs.exceptions import InvalidParam


logger = logging.getLogger(__name__)

"""
Magnitudes of the non-zero entries of generated sparse signals, before scaling to intensity I.
"""
SIGNAL_MAGNITUDE_RANGE = (0.5, 1.5)

PGM_MAX_VALUES = {8: 255, 16: 65535}


def generate_sparse_signal(m, s, intensity, rng):
    """
    Generates a non-negative s-sparse signal: support drawn uniformly without replacement,
    magnitudes i.i.d. uniform(0.5, 1.5), then scaled to ||x||_1 = intensity.

    :param m: Signal dimension.
    :param s: Number of non-zero entries, 1 <= s <= m.
    :param intensity: Total intensity I > 0.
    :param rng: numpy Generator.
    :return: 1-D array of length m.
    """

    if not 1 <= s <= m:
        raise InvalidParam("sparsity must lie in [1, {0}], got {1}".format(m, s))

    if not intensity > 0:
        raise InvalidParam("intensity must be positive, got {0}".format(intensity))

    support = rng.choice(m, size=s, replace=False)
    magnitudes = rng.uniform(*SIGNAL_MAGNITUDE_RANGE, size=s)

    signal = np.zeros(m)
    signal[support] = magnitudes * intensity / magnitudes.sum()

    return signal


def generate_dense_signal(m, intensity, rng):
    """
    Generates a strictly positive signal with i.i.d. uniform(0.5, 1.5) entries scaled to
    ||x||_1 = intensity.
    """

    if not intensity > 0:
        raise InvalidParam("intensity must be positive, got {0}".format(intensity))

    magnitudes = rng.uniform(*SIGNAL_MAGNITUDE_RANGE, size=m)

    return magnitudes * intensity / magnitudes.sum()


def read_pgm(path):
    """
    Reads an 8-bit or 16-bit grayscale PGM image.

    :param path: Image path.
    :return: 2-D float array of raw intensities.
    """

    with Image.open(path) as image:
        if image.mode not in ("L", "I;16", "I;16B", "I"):
            raise InvalidParam("{0} is not a grayscale image (mode {1})".format(path, image.mode))

        pixels = np.asarray(image, dtype=float)

    logger.debug("Read %s with shape %s", path, pixels.shape)

    return pixels


def write_pgm(path, image, bit_depth=8):
    """
    Writes :param image as a grayscale PGM, rescaled so that its maximum maps to the largest
    representable value. Negative values are clipped to 0.

    :param path: Destination path.
    :param image: 2-D array.
    :param bit_depth: 8 or 16.
    :return: void
    """

    if bit_depth not in PGM_MAX_VALUES:
        raise InvalidParam("bit depth must be 8 or 16, got {0}".format(bit_depth))

    image = np.clip(np.asarray(image, dtype=float), 0, None)
    peak = image.max()
    max_value = PGM_MAX_VALUES[bit_depth]

    scaled = np.zeros_like(image) if peak == 0 else np.rint(image / peak * max_value)

    if bit_depth == 8:
        Image.fromarray(scaled.astype(np.uint8)).save(path, format="PPM")
    else:
        # 32-bit "I" mode is written by the PPM plugin as a 16-bit big-endian P5 file
        Image.fromarray(scaled.astype(np.int32)).save(path, format="PPM")


def rescale_to_intensity(image, intensity):
    """
    Rescales a non-negative image so that its pixels sum to :param intensity.

    :param image: Non-negative array.
    :param intensity: Target total intensity I > 0.
    :return: Tuple (rescaled image, scale factor).
    """

    image = np.asarray(image, dtype=float)

    if np.any(image < 0):
        raise InvalidParam("image intensities must be non-negative")

    total = image.sum()

    if total == 0:
        raise InvalidParam("a zero image cannot be rescaled to a positive intensity")

    scale = intensity / total

    return image * scale, scale


def crop_center(image, height, width):
    image = np.asarray(image)
    height, width = min(height, image.shape[0]), min(width, image.shape[1])
    top = (image.shape[0] - height) // 2
    left = (image.shape[1] - width) // 2

    return image[top:top + height, left:left + width]
