"""Service for embedding images and text and comparing embeddings."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor as Executor
from typing import List, Optional, Sequence

import numpy as np
import structlog

from varigen.errors import DimensionMismatch, EmptyImageSet, ZeroVector
from varigen.models.embedding import EmbeddingVector
from varigen.services.config_service import CACHE_FILE_NAME, EmbeddingConfig, cache_directory
from varigen.services.embedding_backends import EmbeddingBackend, create_backend
from varigen.services.embedding_cache import EmbeddingCache, content_key, image_payload

LOGGER = structlog.get_logger(__name__)

N_THREADS = 8


def embed_image(image: np.ndarray, backend: EmbeddingBackend) -> EmbeddingVector:
    """
    Embed an image with the given backend.

    :param image: H x W x C image with values in [0, 1].
    :param backend: Backend to embed with.
    :return: Unit-normalized embedding.
    """
    return backend.embed_image(image)


def embed_text(text: str, backend: EmbeddingBackend) -> EmbeddingVector:
    """
    Embed text with the given backend.

    :param text: Nonempty text.
    :param backend: Backend to embed with.
    :return: Unit-normalized embedding.
    """
    return backend.embed_text(text)


def _check_dims(a: EmbeddingVector, b: EmbeddingVector) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"Cannot compare embeddings of dimension {a.dim} and {b.dim}")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """
    Cosine of the angle between two embeddings.

    :param a: First embedding.
    :param b: Second embedding.
    :return: Similarity in [-1, 1].
    """
    _check_dims(a, b)
    norm_a = float(np.linalg.norm(a.values))
    norm_b = float(np.linalg.norm(b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("Cosine similarity is undefined for a zero vector")
    cosine = float(np.dot(a.values / norm_a, b.values / norm_b))
    return float(np.clip(cosine, -1.0, 1.0))


def l2_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """
    Euclidean distance between two embeddings.

    :param a: First embedding.
    :param b: Second embedding.
    :return: Non-negative distance.
    """
    _check_dims(a, b)
    return float(np.linalg.norm(a.values - b.values))


def mean_embedding(vectors: Sequence[EmbeddingVector]) -> EmbeddingVector:
    """
    Average unit-normalized embeddings and normalize the mean.

    :param vectors: Embeddings to average.
    :return: Normalized mean embedding.
    """
    if not vectors:
        raise EmptyImageSet("Cannot average an empty set of embeddings")
    dims = {vector.dim for vector in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"Embeddings have mixed dimensions: {sorted(dims)}")
    units = [v if v.normalized else EmbeddingVector.unit(v.values) for v in vectors]
    return EmbeddingVector.unit(np.mean([unit.values for unit in units], axis=0))


class EmbeddingService:
    """Embeds images and text with one backend, optionally through the embedding cache."""

    def __init__(self, backend: EmbeddingBackend, cache: Optional[EmbeddingCache] = None) -> None:
        """
        Initialize the service.

        :param backend: Backend to embed with.
        :param cache: Cache of previously computed embeddings.
        """
        self.backend = backend
        self.cache = cache

    @property
    def embed_dim(self) -> int:
        """Dimension of the embedding space."""
        return self.backend.embed_dim

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        """
        Embed an image.

        :param image: H x W x C image with values in [0, 1].
        :return: Unit-normalized embedding.
        """
        if self.cache is None:
            return embed_image(image, self.backend)
        key = content_key(self.backend.identifier, "image", image_payload(image))
        return self.cache.get_or_compute(key, lambda: embed_image(image, self.backend))

    def embed_text(self, text: str) -> EmbeddingVector:
        """
        Embed text.

        :param text: Nonempty text.
        :return: Unit-normalized embedding.
        """
        if self.cache is None:
            return embed_text(text, self.backend)
        key = content_key(self.backend.identifier, "text", text.strip().encode("utf-8"))
        return self.cache.get_or_compute(key, lambda: embed_text(text, self.backend))

    def embed_images(self, images: Sequence[np.ndarray]) -> List[EmbeddingVector]:
        """
        Embed several images in parallel, preserving order.

        :param images: Images to embed.
        :return: One embedding per image.
        """
        with Executor(max_workers=N_THREADS) as exe:
            jobs = [exe.submit(self.embed_image, image) for image in images]
        return [j.result() for j in jobs]

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        """
        Embed several sentences in parallel, preserving order.

        :param texts: Sentences to embed.
        :return: One embedding per sentence.
        """
        with Executor(max_workers=N_THREADS) as exe:
            jobs = [exe.submit(self.embed_text, text) for text in texts]
        return [j.result() for j in jobs]

    def image_set_embedding(self, images: Sequence[np.ndarray]) -> EmbeddingVector:
        """
        Embedding of an image set: the normalized mean of per-image embeddings.

        :param images: Nonempty image set.
        :return: Normalized mean embedding.
        """
        if not images:
            raise EmptyImageSet("Cannot embed an empty image set")
        return mean_embedding(self.embed_images(images))


def create_embedding_service(config: EmbeddingConfig) -> EmbeddingService:
    """
    Create the embedding service described by the `embedding` config section.

    :param config: Embedding configuration.
    :return: Embedding service, caching through the shared cache file when enabled.
    """
    backend = create_backend(config.backend, config.embed_dim, config.pretrained)
    cache = EmbeddingCache(cache_directory() / CACHE_FILE_NAME) if config.use_cache else None
    return EmbeddingService(backend, cache)
