"""A service for working with files."""
import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import structlog
import yaml
from PIL import Image

from varigen.errors import DecodeFailure, IoFailure, UnsupportedImageShape

LOGGER = structlog.get_logger(__name__)

IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}
SIXTEEN_BIT_MODES = {"I;16", "I;16B", "I;16L", "I"}
MASK_THRESHOLD = 0.5


class FileService:
    """A service for working with files."""

    @staticmethod
    def read_yaml_file(file_path: Path) -> Dict[str, Any]:
        """
        Read the given yaml file into a dictionary.

        :param file_path: Path to yaml file to read.
        :return: Dictionary of yaml contents.
        """
        with open(file_path) as file_contents:
            return yaml.safe_load(file_contents) or {}

    @staticmethod
    def write_yaml_file(file_path: Path, contents: Dict[str, Any]) -> None:
        """Write the given contents to the specified file."""
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w") as file_contents:
                yaml.safe_dump(contents, file_contents, sort_keys=True)
        except OSError as err:
            raise IoFailure(f"Could not write '{file_path}': {err}") from err

    @staticmethod
    def write_csv_file(file_path: Path, header: Sequence[str], rows: List[Sequence[Any]]) -> None:
        """
        Write a delimited table.

        :param file_path: Path of file to write.
        :param header: Column names.
        :param rows: Table rows.
        """
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", newline="") as file_contents:
                writer = csv.writer(file_contents, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as err:
            raise IoFailure(f"Could not write '{file_path}': {err}") from err

    @staticmethod
    def write_text_file(file_path: Path, contents: str) -> None:
        """Write the given text to the specified file."""
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            file_path.write_text(contents)
        except OSError as err:
            raise IoFailure(f"Could not write '{file_path}': {err}") from err

    @staticmethod
    def path_exists(path: Path) -> bool:
        """Determine if the given path exists."""
        return path.exists()

    @staticmethod
    def list_images(directory: Path) -> List[Path]:
        """
        List the image files in a directory in sorted order.

        :param directory: Directory to scan.
        :return: Sorted image paths.
        """
        return sorted(
            p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )

    @staticmethod
    def read_image(file_path: Path, size: Optional[int] = None) -> np.ndarray:
        """
        Read an image into an H x W x C array with values in [0, 1].

        :param file_path: Path of image to read.
        :param size: Resize to size x size if given.
        :return: Image array.
        """
        image = _open_image(file_path)
        if image.mode in SIXTEEN_BIT_MODES:
            array = np.asarray(image, dtype=np.float64) / 65535.0
            array = np.clip(array, 0.0, 1.0)[:, :, None]
            if size is not None:
                array = resize_image(array, size)
            return array

        if image.mode not in ("L", "RGB"):
            image = image.convert("RGB")
        if size is not None and image.size != (size, size):
            image = image.resize((size, size), Image.BILINEAR)
        array = np.asarray(image, dtype=np.float64) / 255.0
        if array.ndim == 2:
            array = array[:, :, None]
        return array

    @staticmethod
    def read_mask(file_path: Path, size: Optional[int] = None) -> np.ndarray:
        """
        Read a ground-truth mask as an H x W array of zeros and ones.

        :param file_path: Path of mask to read.
        :param size: Resize to size x size if given.
        :return: Binary mask.
        """
        image = _open_image(file_path)
        if image.mode in SIXTEEN_BIT_MODES:
            max_value = 65535.0
        elif image.mode == "1":
            max_value = 1.0
        else:
            image = image.convert("L")
            max_value = 255.0
        if size is not None and image.size != (size, size):
            image = image.resize((size, size), Image.NEAREST)
        array = np.asarray(image, dtype=np.float64) / max_value
        return (array >= MASK_THRESHOLD).astype(np.float64)

    @staticmethod
    def write_image(file_path: Path, image: np.ndarray) -> None:
        """
        Write an image with values in [0, 1] as an 8-bit PNG.

        :param file_path: Path of file to write.
        :param image: H x W x C array (C of 1 or 3), or H x W.
        """
        file_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            Image.fromarray(to_uint8(image)).save(file_path, format="PNG")
        except OSError as err:
            raise IoFailure(f"Could not write '{file_path}': {err}") from err


def _open_image(file_path: Path) -> Image.Image:
    try:
        image = Image.open(file_path)
        image.load()
    except (OSError, SyntaxError, ValueError) as err:
        raise DecodeFailure(f"Could not decode image '{file_path}': {err}") from err
    return image


def to_uint8(image: np.ndarray) -> np.ndarray:
    """
    Convert an image in [0, 1] to 8-bit values.

    :param image: H x W x C or H x W array.
    :return: uint8 array, with singleton channel dimensions dropped.
    """
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    if array.ndim == 3 and array.shape[2] != 3:
        raise UnsupportedImageShape(f"Cannot write image with {array.shape[2]} channels")
    return np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """
    Resize an H x W x C image to size x size with bilinear interpolation.

    :param image: Image to resize.
    :param size: Target edge length.
    :return: Resized image.
    """
    if image.shape[0] == size and image.shape[1] == size:
        return image
    channels = [
        np.asarray(
            Image.fromarray(image[:, :, c].astype(np.float32)).resize(
                (size, size), Image.BILINEAR
            ),
            dtype=np.float64,
        )
        for c in range(image.shape[2])
    ]
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0)
