"""Persistent, content-keyed cache of embeddings."""
from __future__ import annotations

import hashlib
import struct
import threading
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import structlog

from varigen.errors import CacheCorrupt, IoFailure
from varigen.models.embedding import EmbeddingVector

LOGGER = structlog.get_logger(__name__)

DIGEST_BYTES = 16
DIGEST_HEX_LENGTH = DIGEST_BYTES * 2
HEADER = struct.Struct("<I")
FLOAT_DTYPE = np.dtype("<f4")


def content_key(backend_id: str, kind: str, payload: bytes) -> str:
    """
    Compute the cache key of an input.

    :param backend_id: Identifier of the backend producing the embedding.
    :param kind: "image" or "text".
    :param payload: Raw input bytes.
    :return: Hex digest.
    """
    digest = hashlib.blake2b(digest_size=DIGEST_BYTES)
    for part in (backend_id.encode("utf-8"), kind.encode("utf-8"), payload):
        digest.update(HEADER.pack(len(part)))
        digest.update(part)
    return digest.hexdigest()


def image_payload(image: np.ndarray) -> bytes:
    """Raw bytes identifying an image, shape included."""
    array = np.ascontiguousarray(image, dtype="<f8")
    return str(array.shape).encode("ascii") + array.tobytes()


def to_stored(vector: EmbeddingVector) -> EmbeddingVector:
    """Round a vector to the precision the cache stores."""
    return EmbeddingVector(
        values=vector.values.astype(FLOAT_DTYPE).astype(np.float64), normalized=False
    )


def parse_records(contents: bytes) -> Tuple[Dict[str, np.ndarray], bool]:
    """
    Parse cache file contents.

    :param contents: Raw file contents.
    :return: Parsed vectors by key and whether a corrupt record was found.
    """
    records: Dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(contents):
        header_end = offset + DIGEST_HEX_LENGTH + HEADER.size
        if header_end > len(contents):
            return records, True
        try:
            key = contents[offset : offset + DIGEST_HEX_LENGTH].decode("ascii")
            int(key, 16)
        except (UnicodeDecodeError, ValueError):
            return records, True
        (dim,) = HEADER.unpack(contents[offset + DIGEST_HEX_LENGTH : header_end])
        record_end = header_end + dim * FLOAT_DTYPE.itemsize
        if dim == 0 or record_end > len(contents):
            return records, True
        records[key] = np.frombuffer(contents[header_end:record_end], dtype=FLOAT_DTYPE).copy()
        offset = record_end
    return records, False


def encode_record(key: str, values: np.ndarray) -> bytes:
    """Encode one cache record."""
    stored = np.asarray(values, dtype=FLOAT_DTYPE)
    return key.encode("ascii") + HEADER.pack(stored.shape[0]) + stored.tobytes()


class EmbeddingCache:
    """
    Append-only file of (hex digest, dimension, little-endian float32 values) records.

    Writes are serialized by a lock; lookups may run from any thread.
    """

    def __init__(self, cache_file: Path) -> None:
        """
        Open the cache, loading existing records.

        :param cache_file: Path of the cache file.
        """
        self.cache_file = cache_file
        self._lock = threading.Lock()
        self._records: Dict[str, np.ndarray] = {}
        self._load()

    def _load(self) -> None:
        if not self.cache_file.exists():
            return
        records, corrupt = parse_records(self.cache_file.read_bytes())
        self._records = records
        if corrupt:
            LOGGER.warning(
                "Corrupt embedding cache, rewriting valid records",
                cache_file=str(self.cache_file),
                valid_records=len(records),
            )
            self._rewrite()

    def _rewrite(self) -> None:
        try:
            self.cache_file.write_bytes(
                b"".join(encode_record(key, values) for key, values in self._records.items())
            )
        except OSError as err:
            raise IoFailure(f"Could not rewrite embedding cache: {err}") from err

    def __len__(self) -> int:
        """Number of cached embeddings."""
        return len(self._records)

    def __contains__(self, key: object) -> bool:
        """Check if a key is cached."""
        return key in self._records

    def get(self, key: str) -> EmbeddingVector:
        """
        Get a cached embedding.

        :param key: Cache key.
        :return: Cached embedding.
        """
        values = self._records.get(key)
        if values is None:
            raise KeyError(key)
        if not np.all(np.isfinite(values)):
            raise CacheCorrupt(f"Cached embedding '{key}' has non-finite entries")
        return EmbeddingVector.unit(values.astype(np.float64))

    def put(self, key: str, vector: EmbeddingVector) -> None:
        """
        Append an embedding to the cache.

        :param key: Cache key.
        :param vector: Embedding to store.
        """
        record = encode_record(key, vector.values)
        with self._lock:
            if key in self._records:
                return
            try:
                self.cache_file.parent.mkdir(parents=True, exist_ok=True)
                with open(self.cache_file, "ab") as cache_contents:
                    cache_contents.write(record)
            except OSError as err:
                raise IoFailure(f"Could not append to embedding cache: {err}") from err
            self._records[key] = np.asarray(vector.values, dtype=FLOAT_DTYPE)

    def get_or_compute(
        self, key: str, compute: Callable[[], EmbeddingVector]
    ) -> EmbeddingVector:
        """
        Get a cached embedding, computing and storing it on a miss.

        :param key: Stable digest of the backend and input bytes.
        :param compute: Deferred embedding computation.
        :return: Embedding, rounded to stored precision.
        """
        if key in self._records:
            try:
                vector = self.get(key)
                LOGGER.debug("Embedding cache hit", key=key)
                return vector
            except CacheCorrupt:
                LOGGER.warning("Discarding corrupt cache record", key=key)
                with self._lock:
                    del self._records[key]
                    self._rewrite()

        LOGGER.debug("Embedding cache miss", key=key)
        computed = compute()
        self.put(key, computed)
        return EmbeddingVector.unit(to_stored(computed).values)

    def keys(self) -> List[str]:
        """List the cached keys in insertion order."""
        return list(self._records)
