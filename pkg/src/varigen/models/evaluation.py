"""Models for the memory-bank detector and its evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, Field

from varigen.models.dataset import ScenarioKind

SCORE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FeatureBank:
    """
    Patch features of the training images a detector compares against.

    features: N x C_feat matrix of patch features.
    backbone: Identifier of the backbone the features came from.
    n_originals: Number of original images pooled.
    n_generated: Number of generated images pooled.
    coreset_fraction: Fraction of the pooled features kept.
    """

    features: np.ndarray
    backbone: str
    n_originals: int
    n_generated: int = 0
    coreset_fraction: float = 1.0

    def __post_init__(self) -> None:
        """Check the bank is a nonempty finite matrix."""
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError(f"Feature bank must be a nonempty matrix, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("Feature bank contains non-finite values")

    @property
    def size(self) -> int:
        """Number of features in the bank."""
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        """Feature dimension."""
        return int(self.features.shape[1])


@dataclass(frozen=True)
class AnomalyScore:
    """
    Anomaly score of one image.

    image_score: Maximum of the score map.
    score_map: H x W map of nonnegative patch distances.
    """

    image_score: float
    score_map: np.ndarray

    def __post_init__(self) -> None:
        """Check the image score is the maximum of the map."""
        peak = float(np.max(self.score_map))
        if abs(self.image_score - peak) > SCORE_TOLERANCE:
            raise ValueError(f"Image score {self.image_score} is not the map maximum {peak}")

    @classmethod
    def from_map(cls, score_map: np.ndarray) -> AnomalyScore:
        """
        Score an image by the peak of its map.

        :param score_map: H x W score map.
        :return: Anomaly score.
        """
        return cls(image_score=float(np.max(score_map)), score_map=score_map)


class ImageScore(BaseModel):
    """Image score of one evaluated test image."""

    name: str
    label: int
    score: float


class EvalReport(BaseModel):
    """
    Detection and segmentation performance of one memory bank.

    arm: Name of the compared configuration, e.g. "baseline" or "generated".
    detection_auroc: Image-level AUROC.
    segmentation_auroc: Pixel-level AUROC pooled over the test set.
    scenario: Scenario the bank was trained in.
    counts: Image counts (originals, generated, normal, anomalous, bank size).
    image_scores: Score of every test image.
    """

    arm: str
    detection_auroc: float = Field(..., ge=0.0, le=1.0)
    segmentation_auroc: Optional[float] = Field(None, ge=0.0, le=1.0)
    scenario: ScenarioKind
    counts: Dict[str, int] = {}
    image_scores: List[ImageScore] = []

    def summary(self) -> Dict[str, Any]:
        """Summary without per-image scores."""
        return json.loads(self.json(exclude={"image_scores"}))

    def score_rows(self) -> List[List[Any]]:
        """Rows of the flat per-image score table."""
        return [[self.arm, s.name, s.label, s.score] for s in self.image_scores]


class EvalSample(NamedTuple):
    """
    A labeled test image.

    name: Name to report the image under.
    image: H x W x C image at detector resolution.
    label: 1 for anomalous, 0 for normal.
    mask: H x W defect mask, required for anomalous images.
    """

    name: str
    image: np.ndarray
    label: int
    mask: Optional[np.ndarray] = None
