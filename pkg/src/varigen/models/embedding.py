"""Model for vectors in the shared text/image embedding space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from varigen.errors import ZeroVector

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """
    A vector in the shared text/image embedding space.

    values: Real vector of dimension C_emb.
    normalized: True if the vector has unit L2 norm.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        """Validate the vector."""
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1:
            raise ValueError(f"Embedding must be one dimensional, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Embedding contains non-finite entries")
        if self.normalized and abs(float(np.linalg.norm(values)) - 1.0) > NORM_TOLERANCE:
            raise ValueError("Embedding flagged normalized does not have unit norm")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def unit(cls, values: np.ndarray) -> EmbeddingVector:
        """
        Build a unit-normalized embedding from raw values.

        :param values: Raw vector.
        :return: Normalized embedding.
        """
        raw = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0 or not np.isfinite(norm):
            raise ZeroVector("Cannot normalize a zero vector")
        return cls(values=raw / norm, normalized=True)

    @property
    def dim(self) -> int:
        """Dimension of the vector."""
        return int(self.values.shape[0])

    def scaled(self, factor: float) -> EmbeddingVector:
        """
        Get this vector multiplied by a scalar.

        :param factor: Scalar to multiply by.
        :return: Scaled, unnormalized vector.
        """
        return EmbeddingVector(
            values=self.values * factor, normalized=factor == 1.0 and self.normalized
        )

    def __eq__(self, other: object) -> bool:
        """Compare vectors element-wise."""
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.normalized == other.normalized and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        """Hash on the raw bytes of the vector."""
        return hash((self.values.tobytes(), self.normalized))
