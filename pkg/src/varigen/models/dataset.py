"""Models for datasets, scenarios and synthetic category specifications."""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, root_validator, validator

FEW_SHOT_COUNT = 5


class ScenarioKind(str, Enum):
    """How many good images a run trains on."""

    ONE_SHOT = "one_shot"
    FEW_SHOT = "few_shot"
    FULL_SHOT = "full_shot"


class Label(str, Enum):
    """Ground-truth label of a test image."""

    NORMAL = "normal"
    ANOMALOUS = "anomalous"


class TestEntry(BaseModel):
    """
    A test image of a dataset.

    path: Image file.
    defect_type: Name of the test sub-directory ("good" for normal images).
    label: Ground-truth label.
    """

    __test__ = False

    path: Path
    defect_type: str
    label: Label


class DatasetIndex(BaseModel):
    """
    Paths of one dataset category.

    category: Category name.
    train_good: Good training images in sorted order.
    test: Test images in sorted order.
    masks: Mask file of every anomalous test image, keyed by image path.
    """

    category: str
    train_good: List[Path]
    test: List[TestEntry]
    masks: Dict[Path, Path]

    @root_validator(skip_on_failure=True)
    def _masks_match_labels(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        masks = values["masks"]
        for entry in values["test"]:
            if entry.label == Label.ANOMALOUS and entry.path not in masks:
                raise ValueError(f"Anomalous test image without mask: {entry.path}")
            if entry.label == Label.NORMAL and entry.path in masks:
                raise ValueError(f"Good test image with mask: {entry.path}")
        return values

    @property
    def anomalous_count(self) -> int:
        """Number of anomalous test images."""
        return sum(1 for entry in self.test if entry.label == Label.ANOMALOUS)


class Scenario(BaseModel):
    """
    How training originals are chosen.

    kind: Scenario kind.
    seed: Seed used to select images.
    """

    kind: ScenarioKind
    seed: int = 0

    def shot_count(self, available: int) -> int:
        """
        Number of images this scenario selects.

        :param available: Number of good images available.
        :return: Number of images to select.
        """
        if self.kind == ScenarioKind.ONE_SHOT:
            return 1
        if self.kind == ScenarioKind.FEW_SHOT:
            return FEW_SHOT_COUNT
        return available


class DefectKind(str, Enum):
    """Kinds of planted defects."""

    SCRATCH = "scratch"
    BLOB = "blob"
    MISSING_REGION = "missing_region"


class SyntheticCounts(BaseModel):
    """Number of images to render."""

    good: int = Field(20, ge=1)
    defect: int = Field(10, ge=0)
    test_good: int = Field(10, ge=0)


class SyntheticCategorySpec(BaseModel):
    """
    Description of a synthetic dataset category.

    category: Category name, also the object word.
    shapes: Object shape family ("ellipse" or "rectangle").
    textures: Texture parameters (stripe frequency and amplitude, noise level).
    defects: Defect kinds to plant, cycled over the defect images.
    counts: Number of good training, defect test and good test images.
    resolution: Edge length of rendered images.
    seed: Seed of the rendering.
    """

    category: str = "hazelnut"
    shapes: str = "ellipse"
    textures: Dict[str, float] = {"frequency": 6.0, "amplitude": 0.08, "noise": 0.02}
    defects: List[DefectKind] = [DefectKind.SCRATCH, DefectKind.BLOB, DefectKind.MISSING_REGION]
    counts: SyntheticCounts = SyntheticCounts()
    resolution: int = Field(64, ge=16)
    seed: int = 0

    @validator("shapes")
    def _known_shape(cls, shapes: str) -> str:
        if shapes not in ("ellipse", "rectangle"):
            raise ValueError(f"Unknown shape family: '{shapes}'")
        return shapes

    @validator("defects")
    def _defects_not_empty(cls, defects: List[DefectKind]) -> List[DefectKind]:
        if not defects:
            raise ValueError("At least one defect kind is required")
        return defects

    def texture(self, name: str, default: Optional[float] = None) -> float:
        """
        Get a texture parameter.

        :param name: Parameter name.
        :param default: Value if the parameter is not set.
        :return: Parameter value.
        """
        if name in self.textures:
            return float(self.textures[name])
        if default is None:
            raise KeyError(name)
        return default
