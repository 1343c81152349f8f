"""SSIM, PSNR and quality tables of generated image sets."""
from __future__ import annotations

import math
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog
from skimage.metrics import structural_similarity

from varigen.errors import EmptyImageSet, ShapeMismatch, UnsupportedImageShape
from varigen.models.quality import IDENTICAL_PSNR, QualityRow

LOGGER = structlog.get_logger(__name__)

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
DATA_RANGE = 1.0


class QualityPlugin(Protocol):
    """An optional metric computed for a whole image set, such as IS or LPIPS."""

    name: str

    def __call__(self, originals: Sequence[np.ndarray], images: Sequence[np.ndarray]) -> float:
        """Score the images against the originals."""


def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"Cannot compare images of shape {x.shape} and {y.shape}")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    return x, y


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Structural similarity with an 11x11 Gaussian window of sigma 1.5.

    Uses C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L = 1, averaged over channels and positions.

    :param a: H x W x C image with values in [0, 1].
    :param b: Image of the same shape.
    :return: SSIM in [-1, 1].
    """
    x, y = _pair(a, b)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise UnsupportedImageShape(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    value = structural_similarity(
        x,
        y,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=DATA_RANGE,
        channel_axis=-1,
    )
    return float(value)


def psnr_from_mse(mse: float) -> float:
    """
    Peak signal-to-noise ratio for a peak of 1.

    :param mse: Mean squared error.
    :return: PSNR in dB, infinite for zero error.
    """
    if mse == 0.0:
        return IDENTICAL_PSNR
    return 10.0 * math.log10(DATA_RANGE**2 / mse)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio of two images with values in [0, 1].

    :param a: First image.
    :param b: Image of the same shape.
    :return: PSNR in dB, infinite for identical images.
    """
    x, y = _pair(a, b)
    return psnr_from_mse(float(np.mean((x - y) ** 2)))


def nearest_original(image: np.ndarray, originals: Sequence[np.ndarray]) -> np.ndarray:
    """
    The original an image is closest to in mean squared error.

    :param image: Generated image.
    :param originals: Nonempty originals of the same shape.
    :return: The closest original, the first on ties.
    """
    errors = []
    for original in originals:
        x, y = _pair(image, original)
        errors.append(float(np.mean((x - y) ** 2)))
    return originals[int(np.argmin(errors))]


def quality_table(
    originals: Sequence[np.ndarray],
    image_sets: Sequence[Tuple[str, Sequence[np.ndarray]]],
    plugins: Optional[Sequence[QualityPlugin]] = None,
) -> List[QualityRow]:
    """
    Tabulate SSIM and PSNR of labeled image sets.

    Each image is compared with its nearest original.

    :param originals: Original images.
    :param image_sets: Labeled image sets, in table order.
    :param plugins: Optional extra metrics.
    :return: One row per set, in the given order.
    """
    if not originals:
        raise EmptyImageSet("Quality needs at least one original")

    rows = []
    for label, images in image_sets:
        if not images:
            raise EmptyImageSet(f"Image set '{label}' is empty")
        pairs = [(image, nearest_original(image, originals)) for image in images]
        ssim_value = float(np.mean([ssim(image, original) for image, original in pairs]))
        psnr_value = float(np.mean([psnr(image, original) for image, original in pairs]))
        extras = {plugin.name: float(plugin(originals, images)) for plugin in plugins or []}
        rows.append(QualityRow(label=label, ssim=ssim_value, psnr_db=psnr_value, plugins=extras))
        LOGGER.debug("Measured image set quality", label=label, ssim=ssim_value, psnr=psnr_value)
    return rows
