"""Label-preserving augmentation of original good images."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
import structlog
import torch
import torchvision.transforms.functional as TF
from PIL import ImageOps
from scipy import ndimage
from torchvision.transforms import InterpolationMode

from varigen.errors import EmptyInput, UnknownStrategy

LOGGER = structlog.get_logger(__name__)

CROP_RETAIN = (0.85, 0.95)
ROTATION_DEGREES = 15.0
JITTER = 0.2
BLUR_SIGMA = (0.5, 1.5)
SHARPNESS = (0.5, 2.0)
AUTOCONTRAST_CUTOFF = 1.0
AUTOCONTRAST_PROBABILITY = 0.5
MEDIAN_SIZE = 3
RANDOM_PICK_MAX_OPERATIONS = 2

Operation = Callable[[torch.Tensor, np.random.Generator], Tuple[torch.Tensor, str]]


class AugmentationRecord(NamedTuple):
    """
    How one augmented image was produced.

    source: Index of the original it was made from.
    operations: Applied operations with their drawn parameters.
    """

    source: int
    operations: List[str]


class AugmentedSet(NamedTuple):
    """Augmented images and the record of how each was made."""

    images: List[np.ndarray]
    records: List[AugmentationRecord]


@dataclass(frozen=True)
class AugmentationStrategy:
    """
    A named recipe of augmentation operations.

    name: Strategy name used in configuration.
    operations: Names of the operations, applied in order.
    pick: Draw between one and this many operations per image instead of applying all of them.
    """

    name: str
    operations: Tuple[str, ...]
    pick: int = 0


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)


def _to_array(tensor: torch.Tensor) -> np.ndarray:
    return np.clip(tensor.permute(1, 2, 0).numpy().astype(np.float64), 0.0, 1.0)


def _border_fill(image: torch.Tensor) -> List[float]:
    border = torch.cat(
        [image[:, 0, :], image[:, -1, :], image[:, :, 0], image[:, :, -1]], dim=1
    )
    return [float(v) for v in border.median(dim=1).values]


def random_crop(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Crop a random window retaining 85-95% of each side and resize it back."""
    height, width = image.shape[1:]
    retain = float(rng.uniform(*CROP_RETAIN))
    crop_h, crop_w = max(1, round(height * retain)), max(1, round(width * retain))
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    cropped = TF.resized_crop(image, top, left, crop_h, crop_w, [height, width], antialias=True)
    return cropped, f"crop:{retain:.4f}:{top}:{left}"


def color_jitter(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Jitter brightness and contrast (and saturation of color images) by up to 20%."""
    brightness = float(rng.uniform(1.0 - JITTER, 1.0 + JITTER))
    contrast = float(rng.uniform(1.0 - JITTER, 1.0 + JITTER))
    saturation = float(rng.uniform(1.0 - JITTER, 1.0 + JITTER))
    jittered = TF.adjust_contrast(TF.adjust_brightness(image, brightness), contrast)
    if image.shape[0] == 3:
        jittered = TF.adjust_saturation(jittered, saturation)
    return jittered.clamp(0.0, 1.0), f"jitter:{brightness:.4f}:{contrast:.4f}:{saturation:.4f}"


def brightness_contrast(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Jitter brightness and contrast by up to 20%."""
    brightness = float(rng.uniform(1.0 - JITTER, 1.0 + JITTER))
    contrast = float(rng.uniform(1.0 - JITTER, 1.0 + JITTER))
    jittered = TF.adjust_contrast(TF.adjust_brightness(image, brightness), contrast)
    return jittered.clamp(0.0, 1.0), f"jitter:{brightness:.4f}:{contrast:.4f}"


def random_rotation(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Rotate by up to 15 degrees, filling uncovered corners with the border color."""
    angle = float(rng.uniform(-ROTATION_DEGREES, ROTATION_DEGREES))
    rotated = TF.rotate(image, angle, interpolation=InterpolationMode.BILINEAR)
    # zero padding leaves each pixel weighted by how much of it came from inside the image
    coverage = TF.rotate(
        torch.ones_like(image[:1]), angle, interpolation=InterpolationMode.BILINEAR
    )
    fill = torch.tensor(_border_fill(image), dtype=image.dtype)[:, None, None]
    return rotated + (1.0 - coverage) * fill, f"rotate:{angle:.4f}"


def autocontrast(image: torch.Tensor, cutoff: float = AUTOCONTRAST_CUTOFF) -> torch.Tensor:
    """
    Stretch each channel so its cutoff and 100 - cutoff percentiles map to 0 and 1.

    Works on the 8-bit rendering of the image, flat channels are left unchanged.

    :param image: C x H x W image with one or three channels.
    :param cutoff: Percent of pixels clipped at each end.
    :return: Stretched image.
    """
    stretched = ImageOps.autocontrast(TF.to_pil_image(image.clamp(0.0, 1.0)), cutoff=cutoff)
    return TF.to_tensor(stretched)


def random_autocontrast(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Apply autocontrast with probability 0.5."""
    if rng.uniform() < AUTOCONTRAST_PROBABILITY:
        return autocontrast(image), "autocontrast:1"
    return image, "autocontrast:0"


def gaussian_blur(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Blur with sigma drawn from [0.5, 1.5]."""
    sigma = float(rng.uniform(*BLUR_SIGMA))
    kernel = 2 * int(np.ceil(3.0 * sigma)) + 1
    return TF.gaussian_blur(image, [kernel, kernel], [sigma, sigma]), f"blur:{sigma:.4f}"


def noise_reduction(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Median filter each channel over a 3 x 3 window."""
    size = (1, MEDIAN_SIZE, MEDIAN_SIZE)
    filtered = ndimage.median_filter(image.numpy(), size=size, mode="nearest")
    return torch.from_numpy(filtered), "median:3"


def adjust_sharpness(image: torch.Tensor, rng: np.random.Generator) -> Tuple[torch.Tensor, str]:
    """Change sharpness by a factor drawn from [0.5, 2]."""
    factor = float(rng.uniform(*SHARPNESS))
    return TF.adjust_sharpness(image, factor).clamp(0.0, 1.0), f"sharpness:{factor:.4f}"


OPERATIONS: Dict[str, Operation] = {
    "random_crop": random_crop,
    "brightness_contrast": brightness_contrast,
    "random_rotation": random_rotation,
    "random_autocontrast": random_autocontrast,
    "gaussian_blur": gaussian_blur,
    "noise_reduction": noise_reduction,
    "adjust_sharpness": adjust_sharpness,
    "color_jitter": color_jitter,
}

STRATEGIES: Dict[str, AugmentationStrategy] = {
    "identity": AugmentationStrategy("identity", ()),
    "strategies-1": AugmentationStrategy("strategies-1", ("random_crop", "brightness_contrast")),
    "strategies-2": AugmentationStrategy(
        "strategies-2", ("random_rotation", "random_autocontrast")
    ),
    "random-pick": AugmentationStrategy(
        "random-pick",
        (
            "gaussian_blur",
            "noise_reduction",
            "random_rotation",
            "adjust_sharpness",
            "random_autocontrast",
            "color_jitter",
        ),
        pick=RANDOM_PICK_MAX_OPERATIONS,
    ),
}


def get_strategy(name: str) -> AugmentationStrategy:
    """
    Look up a registered strategy.

    :param name: Strategy name.
    :return: Strategy.
    """
    try:
        return STRATEGIES[name]
    except KeyError:
        raise UnknownStrategy(
            f"Unknown augmentation strategy '{name}', expected one of {sorted(STRATEGIES)}"
        ) from None


def _chosen_operations(strategy: AugmentationStrategy, rng: np.random.Generator) -> List[str]:
    if not strategy.pick:
        return list(strategy.operations)
    count = int(rng.integers(1, strategy.pick + 1))
    picked = sorted(rng.choice(len(strategy.operations), size=count, replace=False))
    return [strategy.operations[i] for i in picked]


def augment(
    originals: Sequence[np.ndarray], strategy: str, count: int, rng: np.random.Generator
) -> AugmentedSet:
    """
    Produce augmented views of the originals, cycling through them in order.

    :param originals: H x W x C images with values in [0, 1].
    :param strategy: Strategy name.
    :param count: Number of images N to produce.
    :param rng: Source of every random parameter.
    :return: N images and how each was made.
    """
    recipe = get_strategy(strategy)
    if count < 1:
        raise ValueError(f"Number of augmented images must be at least 1, got {count}")
    if not originals:
        raise EmptyInput("At least one original image is required")

    images: List[np.ndarray] = []
    records: List[AugmentationRecord] = []
    for i in range(count):
        source = i % len(originals)
        original = np.asarray(originals[source], dtype=np.float64)
        if not recipe.operations:
            images.append(original.copy())
            records.append(AugmentationRecord(source=source, operations=[]))
            continue

        tensor = _to_tensor(original)
        applied = []
        for name in _chosen_operations(recipe, rng):
            tensor, description = OPERATIONS[name](tensor, rng)
            applied.append(description)
        images.append(_to_array(tensor))
        records.append(AugmentationRecord(source=source, operations=applied))

    LOGGER.debug("Augmented originals", strategy=strategy, count=count, originals=len(originals))
    return AugmentedSet(images=images, records=records)
