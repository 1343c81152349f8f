"""Service for dataset trees in the MVTecAD folder convention."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import inject
import numpy as np
import structlog
from PIL import Image, ImageDraw

from varigen.errors import InsufficientImages, LayoutViolation, MaskMissing
from varigen.models.dataset import (
    DatasetIndex,
    DefectKind,
    Label,
    Scenario,
    ScenarioKind,
    SyntheticCategorySpec,
    TestEntry,
)
from varigen.models.evaluation import EvalSample
from varigen.services.file_service import IMAGE_SUFFIXES, FileService

LOGGER = structlog.get_logger(__name__)

GOOD = "good"
MASK_SUFFIX = "_mask"
SPEC_FILE_NAME = "synthetic_spec.yaml"

BACKGROUND = np.array([0.12, 0.12, 0.14])
OBJECT_COLOR = np.array([0.58, 0.40, 0.22])
SCRATCH_COLOR = np.array([0.92, 0.90, 0.85])
BLOB_COLOR = np.array([0.10, 0.06, 0.04])
OBJECT_EXTENT = 0.34
POSITION_JITTER = 0.04
COLOR_JITTER = 0.03


class Rendering(NamedTuple):
    """A rendered synthetic image, the object footprint and the defect mask."""

    image: np.ndarray
    footprint: np.ndarray
    mask: np.ndarray


def _find_mask(ground_truth: Path, image_path: Path) -> Optional[Path]:
    defect_dir = ground_truth / image_path.parent.name
    for suffix in sorted(IMAGE_SUFFIXES):
        candidate = defect_dir / f"{image_path.stem}{MASK_SUFFIX}{suffix}"
        if candidate.exists():
            return candidate
    return None


def _shape_mask(resolution: int, shape: str, box: Sequence[float]) -> np.ndarray:
    canvas = Image.new("L", (resolution, resolution), 0)
    draw = ImageDraw.Draw(canvas)
    if shape == "ellipse":
        draw.ellipse(list(box), fill=255)
    else:
        draw.rectangle(list(box), fill=255)
    return np.asarray(canvas) > 0


def render_good(spec: SyntheticCategorySpec, rng: np.random.Generator) -> Rendering:
    """
    Render a defect-free object on a plain background.

    :param spec: Category specification.
    :param rng: Source of the per-image variation.
    :return: Rendering with an empty defect mask.
    """
    res = spec.resolution
    center = res / 2.0 + rng.uniform(-POSITION_JITTER, POSITION_JITTER, size=2) * res
    radius = OBJECT_EXTENT * res * rng.uniform(0.95, 1.05, size=2)
    box = [*(center - radius), *(center + radius)]
    footprint = _shape_mask(res, spec.shapes, box)

    rows = np.arange(res)[:, None] / res
    cols = np.arange(res)[None, :] / res
    phase = rng.uniform(0.0, 2.0 * np.pi)
    angle = rng.uniform(-0.2, 0.2)
    stripes = np.sin(
        2.0 * np.pi * spec.texture("frequency", 6.0) * (rows * np.cos(angle) + cols * np.sin(angle))
        + phase
    )
    color = OBJECT_COLOR + rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=3)
    shaded = color[None, None, :] * (1.0 + spec.texture("amplitude", 0.08) * stripes[:, :, None])

    image = np.where(footprint[:, :, None], shaded, BACKGROUND[None, None, :])
    image = image + rng.normal(0.0, spec.texture("noise", 0.02), size=image.shape)
    return Rendering(
        image=np.clip(image, 0.0, 1.0), footprint=footprint, mask=np.zeros((res, res), bool)
    )


def _defect_mask(
    kind: DefectKind, footprint: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    res = footprint.shape[0]
    rows, cols = np.nonzero(footprint)
    inner = (rows > res * 0.3) & (rows < res * 0.7) & (cols > res * 0.3) & (cols < res * 0.7)
    pick = int(rng.integers(0, int(inner.sum()))) if inner.any() else 0
    cy, cx = (rows[inner][pick], cols[inner][pick]) if inner.any() else (res // 2, res // 2)

    canvas = Image.new("L", (res, res), 0)
    draw = ImageDraw.Draw(canvas)
    if kind == DefectKind.SCRATCH:
        length = res * rng.uniform(0.18, 0.3)
        theta = rng.uniform(0.0, np.pi)
        dx, dy = 0.5 * length * np.cos(theta), 0.5 * length * np.sin(theta)
        width = max(1, res // 32)
        draw.line([(cx - dx, cy - dy), (cx + dx, cy + dy)], fill=255, width=width)
    elif kind == DefectKind.BLOB:
        radius = res * rng.uniform(0.05, 0.08)
        draw.ellipse([cx - radius, cy - radius, cx + radius, cy + radius], fill=255)
    else:
        half = res * rng.uniform(0.06, 0.1)
        draw.rectangle([cx - half, cy - half, cx + half, cy + half], fill=255)
    return np.asarray(canvas) > 0


def render_defect(
    spec: SyntheticCategorySpec, kind: DefectKind, rng: np.random.Generator
) -> Rendering:
    """
    Render an object carrying one planted defect.

    The mask holds exactly the pixels the defect was drawn on.

    :param spec: Category specification.
    :param kind: Kind of defect to plant.
    :param rng: Source of the per-image variation.
    :return: Rendering with its defect mask.
    """
    good = render_good(spec, rng)
    mask = _defect_mask(kind, good.footprint, rng)
    if kind == DefectKind.SCRATCH:
        fill = np.broadcast_to(SCRATCH_COLOR, good.image.shape)
    elif kind == DefectKind.BLOB:
        fill = np.broadcast_to(BLOB_COLOR, good.image.shape)
    else:
        fill = np.broadcast_to(BACKGROUND, good.image.shape)
    image = np.where(mask[:, :, None], fill, good.image)
    return Rendering(image=image, footprint=good.footprint, mask=mask)


class DatasetService:
    """A service for loading, subsetting and synthesizing datasets."""

    @inject.autoparams()
    def __init__(self, file_service: FileService) -> None:
        """
        Initialize the service.

        :param file_service: Service for working with files.
        """
        self.file_service = file_service

    def load_dataset(self, root: Path, category: str) -> DatasetIndex:
        """
        Index a category laid out as train/good, test/<type> and ground_truth/<type>.

        :param root: Dataset root directory.
        :param category: Category name.
        :return: Index in sorted order.
        """
        category_dir = root / category
        good_dir = category_dir / "train" / GOOD
        if not good_dir.is_dir():
            raise LayoutViolation(f"Missing good training directory: {good_dir}")
        train_good = self.file_service.list_images(good_dir)

        test_dir = category_dir / "test"
        ground_truth = category_dir / "ground_truth"
        test: List[TestEntry] = []
        masks: Dict[Path, Path] = {}
        if test_dir.is_dir():
            for type_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
                label = Label.NORMAL if type_dir.name == GOOD else Label.ANOMALOUS
                for image_path in self.file_service.list_images(type_dir):
                    test.append(TestEntry(path=image_path, defect_type=type_dir.name, label=label))
                    if label == Label.NORMAL:
                        continue
                    mask_path = _find_mask(ground_truth, image_path)
                    if mask_path is None:
                        raise MaskMissing(f"No ground-truth mask for anomalous image {image_path}")
                    masks[image_path] = mask_path
        else:
            LOGGER.warning("Category has no test directory", category_dir=str(category_dir))

        LOGGER.debug(
            "Loaded dataset",
            category=category,
            train_good=len(train_good),
            test=len(test),
            masks=len(masks),
        )
        return DatasetIndex(category=category, train_good=train_good, test=test, masks=masks)

    @staticmethod
    def select_scenario(
        index: DatasetIndex, scenario: Scenario, rng: Optional[np.random.Generator] = None
    ) -> List[Path]:
        """
        Choose the good training originals for a scenario.

        :param index: Dataset index.
        :param scenario: Scenario to select for.
        :param rng: Source of the choice, seeded from the scenario if not given.
        :return: Selected paths in sorted order.
        """
        available = len(index.train_good)
        count = scenario.shot_count(available)
        if available == 0 or count > available:
            raise InsufficientImages(
                f"Scenario {scenario.kind.value} needs {max(count, 1)} good images, "
                f"{available} available"
            )
        if scenario.kind == ScenarioKind.FULL_SHOT:
            return list(index.train_good)

        rng = rng if rng is not None else np.random.default_rng(scenario.seed)
        chosen = sorted(int(i) for i in rng.choice(available, size=count, replace=False))
        selected = [index.train_good[i] for i in chosen]
        LOGGER.debug("Selected originals", scenario=scenario.kind.value, selected=selected)
        return selected

    def load_images(self, paths: Sequence[Path], size: Optional[int] = None) -> List[np.ndarray]:
        """
        Read images, resizing them to a common size.

        :param paths: Image files.
        :param size: Edge length to resize to.
        :return: H x W x C arrays.
        """
        return [self.file_service.read_image(path, size) for path in paths]

    def load_test_samples(self, index: DatasetIndex, size: int) -> List[EvalSample]:
        """
        Read the labeled test images and masks of a category.

        :param index: Dataset index.
        :param size: Detector resolution.
        :return: Samples named "<defect type>/<file name>".
        """
        samples = []
        for entry in index.test:
            anomalous = entry.label == Label.ANOMALOUS
            mask = self.file_service.read_mask(index.masks[entry.path], size) if anomalous else None
            samples.append(
                EvalSample(
                    name=f"{entry.defect_type}/{entry.path.name}",
                    image=self.file_service.read_image(entry.path, size),
                    label=int(anomalous),
                    mask=mask,
                )
            )
        return samples

    def make_synthetic_category(
        self,
        spec: SyntheticCategorySpec,
        out_dir: Path,
        rng: Optional[np.random.Generator] = None,
    ) -> Path:
        """
        Render a dataset category with planted defects and exact masks.

        :param spec: Category specification.
        :param out_dir: Dataset root to write the category under.
        :param rng: Source of all rendering randomness, seeded from the category if not given.
        :return: Category directory.
        """
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        category_dir = out_dir / spec.category

        for i in range(spec.counts.good):
            rendering = render_good(spec, rng)
            path = category_dir / "train" / GOOD / f"{i:03d}.png"
            self.file_service.write_image(path, rendering.image)
        for i in range(spec.counts.test_good):
            rendering = render_good(spec, rng)
            path = category_dir / "test" / GOOD / f"{i:03d}.png"
            self.file_service.write_image(path, rendering.image)

        per_kind: Dict[DefectKind, int] = {}
        for i in range(spec.counts.defect):
            kind = spec.defects[i % len(spec.defects)]
            number = per_kind.get(kind, 0)
            per_kind[kind] = number + 1
            rendering = render_defect(spec, kind, rng)
            name = f"{number:03d}"
            self.file_service.write_image(
                category_dir / "test" / kind.value / f"{name}.png", rendering.image
            )
            self.file_service.write_image(
                category_dir / "ground_truth" / kind.value / f"{name}{MASK_SUFFIX}.png",
                rendering.mask.astype(np.float64),
            )

        self.file_service.write_yaml_file(
            category_dir / SPEC_FILE_NAME, json.loads(spec.json())
        )
        LOGGER.info(
            "Wrote synthetic category",
            category_dir=str(category_dir),
            good=spec.counts.good,
            defect=spec.counts.defect,
            test_good=spec.counts.test_good,
        )
        return category_dir
