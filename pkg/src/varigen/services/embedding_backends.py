"""Backends that map images and text into the shared embedding space."""
from __future__ import annotations

import abc
from typing import Any, Dict, List

import numpy as np
import structlog
from sklearn.feature_extraction import FeatureHasher

from varigen.errors import BackendUnavailable, EmptyText, UnsupportedImageShape
from varigen.models.embedding import EmbeddingVector

LOGGER = structlog.get_logger(__name__)

TOY_IDENTIFIER = "toy"
TOY_MIN_SIZE = 8
POOL_GRID = 4
GRADIENT_BINS = 8
GRADIENT_RANGE = (0.0, float(np.sqrt(2.0)))
TEXT_PAD_START = "^^"
TEXT_PAD_END = "$$"

OPEN_CLIP_MODEL_NAMES = {
    "vit-b-16": "ViT-B-16",
    "vit-b/16": "ViT-B-16",
    "vit-b-32": "ViT-B-32",
    "vit-b/32": "ViT-B-32",
    "rn50x64": "RN50x64",
    "resnet50x64": "RN50x64",
}


def check_image(image: np.ndarray, min_size: int) -> np.ndarray:
    """
    Validate an H x W x C image in [0, 1].

    :param image: Image to check.
    :param min_size: Smallest accepted edge length.
    :return: The image as float64.
    """
    array = np.asarray(image, dtype=np.float64)
    if array.ndim != 3 or array.shape[2] not in (1, 3):
        raise UnsupportedImageShape(f"Expected an H x W x C image, got shape {array.shape}")
    if array.shape[0] < min_size or array.shape[1] < min_size:
        raise UnsupportedImageShape(
            f"Image of size {array.shape[:2]} is smaller than {min_size}x{min_size}"
        )
    return array


def normalize_text(text: str) -> str:
    """
    Trim text, failing on empty input.

    :param text: Text to check.
    :return: Trimmed text.
    """
    trimmed = text.strip()
    if not trimmed:
        raise EmptyText("Cannot embed empty text")
    return trimmed


class EmbeddingBackend(abc.ABC):
    """A deterministic encoder of images and text into one embedding space."""

    identifier: str
    embed_dim: int

    @abc.abstractmethod
    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        """
        Embed an image.

        :param image: H x W x C image with values in [0, 1].
        :return: Unit-normalized embedding.
        """

    @abc.abstractmethod
    def embed_text(self, text: str) -> EmbeddingVector:
        """
        Embed a sentence.

        :param text: Nonempty text.
        :return: Unit-normalized embedding.
        """


def toy_image_features(image: np.ndarray) -> Dict[str, float]:
    """
    Compute the named raw features of the toy image recipe.

    The features are 4x4 per-channel mean pools and an 8-bin histogram of the gradient
    magnitude of the channel-mean image, as fractions of pixels.

    :param image: H x W x C image.
    :return: Feature name to value.
    """
    features: Dict[str, float] = {}
    row_blocks = np.array_split(np.arange(image.shape[0]), POOL_GRID)
    col_blocks = np.array_split(np.arange(image.shape[1]), POOL_GRID)
    for channel in range(image.shape[2]):
        for i, rows in enumerate(row_blocks):
            for j, cols in enumerate(col_blocks):
                block = image[np.ix_(rows, cols, [channel])]
                features[f"pool:{channel}:{i}:{j}"] = float(block.mean())

    gray = image.mean(axis=2)
    grad_y, grad_x = np.gradient(gray)
    magnitude = np.hypot(grad_x, grad_y)
    histogram, _ = np.histogram(magnitude, bins=GRADIENT_BINS, range=GRADIENT_RANGE)
    for bin_index, count in enumerate(histogram):
        features[f"grad:{bin_index}"] = float(count) / magnitude.size
    return features


def toy_text_features(text: str) -> List[str]:
    """
    Get the character trigrams of the toy text recipe.

    :param text: Text to split.
    :return: Trigrams of the lowercased, padded text, repeated by count.
    """
    padded = f"{TEXT_PAD_START}{text.lower()}{TEXT_PAD_END}"
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


class ToyEmbeddingBackend(EmbeddingBackend):
    """Dependency-free deterministic embedder for tests and desk-scale runs."""

    def __init__(self, embed_dim: int = 64) -> None:
        """
        Initialize the backend.

        :param embed_dim: Dimension of the embedding space.
        """
        self.identifier = TOY_IDENTIFIER
        self.embed_dim = embed_dim
        self._image_hasher = FeatureHasher(n_features=embed_dim, input_type="dict")
        self._text_hasher = FeatureHasher(n_features=embed_dim, input_type="string")

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        """
        Embed an image with the toy recipe.

        :param image: H x W x C image of at least 8x8.
        :return: Unit-normalized embedding.
        """
        array = check_image(image, TOY_MIN_SIZE)
        hashed = self._image_hasher.transform([toy_image_features(array)]).toarray()[0]
        return EmbeddingVector.unit(hashed)

    def embed_text(self, text: str) -> EmbeddingVector:
        """
        Embed text with the toy recipe.

        :param text: Nonempty text.
        :return: Unit-normalized embedding.
        """
        trigrams = toy_text_features(normalize_text(text))
        hashed = self._text_hasher.transform([trigrams]).toarray()[0]
        return EmbeddingVector.unit(hashed)


class OpenClipBackend(EmbeddingBackend):
    """Pretrained vision-language encoder loaded through open_clip."""

    MIN_SIZE = 8

    def __init__(self, model_name: str, pretrained: str = "openai") -> None:
        """
        Load the model.

        :param model_name: open_clip model name, e.g. "ViT-B-16".
        :param pretrained: Weight tag.
        """
        try:
            import open_clip
            import torch
        except ImportError as err:
            raise BackendUnavailable(
                "Pretrained backends need the 'clip' extra (open_clip_torch)"
            ) from err

        try:
            model, _, preprocess = open_clip.create_model_and_transforms(
                model_name, pretrained=pretrained
            )
        except Exception as err:
            raise BackendUnavailable(f"Could not load '{model_name}/{pretrained}': {err}") from err

        self.identifier = f"{model_name.lower()}:{pretrained}"
        self._torch = torch
        self._model: Any = model.eval()
        self._preprocess = preprocess
        self._tokenizer = open_clip.get_tokenizer(model_name)
        self.embed_dim = int(self._model.text_projection.shape[1])

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        """
        Embed an image with the pretrained image tower.

        :param image: H x W x C image with values in [0, 1].
        :return: Unit-normalized embedding.
        """
        from PIL import Image

        from varigen.services.file_service import to_uint8

        array = check_image(image, self.MIN_SIZE)
        pixels = to_uint8(array)
        pil_image = Image.fromarray(pixels).convert("RGB")
        batch = self._preprocess(pil_image).unsqueeze(0)
        with self._torch.no_grad():
            features = self._model.encode_image(batch)[0].double().numpy()
        return EmbeddingVector.unit(features)

    def embed_text(self, text: str) -> EmbeddingVector:
        """
        Embed text with the pretrained text tower.

        :param text: Nonempty text.
        :return: Unit-normalized embedding.
        """
        tokens = self._tokenizer([normalize_text(text)])
        with self._torch.no_grad():
            features = self._model.encode_text(tokens)[0].double().numpy()
        return EmbeddingVector.unit(features)


def create_backend(
    identifier: str, embed_dim: int = 64, pretrained: str = "openai"
) -> EmbeddingBackend:
    """
    Create the backend named by the `embedding.backend` config value.

    :param identifier: "toy" or a pretrained model name such as "vit-b-16".
    :param embed_dim: Dimension of the toy backend.
    :param pretrained: Weight tag of pretrained backends.
    :return: Embedding backend.
    """
    if identifier.lower() == TOY_IDENTIFIER:
        return ToyEmbeddingBackend(embed_dim)
    model_name = OPEN_CLIP_MODEL_NAMES.get(identifier.lower(), identifier)
    LOGGER.info("Loading pretrained embedding backend", model=model_name, pretrained=pretrained)
    return OpenClipBackend(model_name, pretrained)
