"""Models for codebooks, latent grids and variance grids."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import torch

from varigen.errors import NegativeVariance, ShapeMismatch


class SamplingMode(str, Enum):
    """
    How patch latents are drawn from the estimated statistics.

    mean: Use the mean grid E unchanged.
    mean_plus_sigma: E + sqrt(Σ).
    mean_plus_sigma_eps: E + sqrt(Σ) * ε with ε standard normal per entry.
    unit_variance: E + ε, ignoring Σ.
    """

    MEAN = "mean"
    MEAN_PLUS_SIGMA = "mean_plus_sigma"
    MEAN_PLUS_SIGMA_EPS = "mean_plus_sigma_eps"
    UNIT_VARIANCE = "unit_variance"


class VarianceSource(str, Enum):
    """Which latents variance statistics are computed on."""

    POST_QUANTIZATION = "post_quantization"
    PRE_QUANTIZATION = "pre_quantization"


@dataclass(frozen=True)
class Codebook:
    """
    The K learned codebook vectors.

    vectors: K x C_lat matrix.
    """

    vectors: torch.Tensor

    def __post_init__(self) -> None:
        """Validate the codebook."""
        if self.vectors.dim() != 2 or self.vectors.shape[0] < 2:
            shape = tuple(self.vectors.shape)
            raise ShapeMismatch(f"Codebook must be K x C with K >= 2, got {shape}")
        if not bool(torch.isfinite(self.vectors).all()):
            raise ValueError("Codebook contains non-finite entries")

    @property
    def size(self) -> int:
        """Number of codebook vectors."""
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        """Dimension of each codebook vector."""
        return int(self.vectors.shape[1])

    def has_unique_rows(self) -> bool:
        """Check that no two codebook vectors are identical."""
        return int(torch.unique(self.vectors.detach(), dim=0).shape[0]) == self.size


@dataclass(frozen=True)
class LatentGrid:
    """
    Patch latents of one image, one row per grid position.

    values: D x C_lat matrix (E), row d is the latent of patch d.
    indices: Codebook index of each row, present after quantization.
    """

    values: torch.Tensor
    indices: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        """Validate the grid."""
        if self.values.dim() != 2:
            raise ShapeMismatch(f"Latent grid must be D x C, got {tuple(self.values.shape)}")
        if self.indices is not None and self.indices.shape != (self.values.shape[0],):
            raise ShapeMismatch("Latent indices must have one entry per grid position")

    @property
    def positions(self) -> int:
        """Number of grid positions D."""
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        """Latent channel count C_lat."""
        return int(self.values.shape[1])

    @property
    def is_quantized(self) -> bool:
        """True if the grid carries codebook indices."""
        return self.indices is not None


@dataclass(frozen=True)
class VarianceGrid:
    """
    Element-wise variances of patch latents (Σ).

    values: D x C_lat matrix of non-negative variances.
    """

    values: torch.Tensor

    def __post_init__(self) -> None:
        """Validate the grid."""
        if self.values.dim() != 2:
            raise ShapeMismatch(f"Variance grid must be D x C, got {tuple(self.values.shape)}")
        detached = self.values.detach()
        if not bool(torch.isfinite(detached).all()) or bool((detached < 0).any()):
            raise NegativeVariance("Variance grid entries must be finite and non-negative")

    @classmethod
    def zeros_like(cls, grid: LatentGrid) -> VarianceGrid:
        """
        Create an all-zero variance grid matching a latent grid.

        :param grid: Grid to match.
        :return: Zero variance grid.
        """
        return cls(values=torch.zeros_like(grid.values))
