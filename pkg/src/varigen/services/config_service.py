"""Service for working with configuration."""
from __future__ import annotations

import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

import inject
import structlog
import yaml
from pydantic import BaseModel, Field, root_validator, validator
from xdg import xdg_cache_home

from varigen.models.dataset import ScenarioKind
from varigen.models.latent import SamplingMode, VarianceSource
from varigen.services.file_service import FileService

LOGGER = structlog.get_logger(__name__)

CACHE_DIR_ENV = "VARIGEN_CACHE_DIR"
CACHE_FILE_NAME = "embeddings.bin"
DIGEST_EXCLUDED_KEYS = {"output_root"}


class Comparator(str, Enum):
    """How a candidate's distance is compared to the outlier threshold."""

    GREATER = "greater"
    LESS = "less"


class FallbackMode(str, Enum):
    """What to do when no candidate prompt survives outlier filtering."""

    ERROR = "error"
    NAIVE = "naive"


class ImageEmbeddingMode(str, Enum):
    """How original images are combined into one image embedding."""

    SINGLE = "single"
    MEAN = "mean"


class PromptSearch(str, Enum):
    """How the best prompt is searched for."""

    EXHAUSTIVE = "exhaustive"
    BATCHED = "batched"


class PromptMode(str, Enum):
    """Which prompt the integrator scores generated images against."""

    GENERATED = "generated"
    NAIVE = "naive"


class Backbone(str, Enum):
    """Patch feature extractor for the anomaly detector."""

    TOY = "toy"
    RESNET18 = "resnet18"


class _Section(BaseModel):
    class Config:
        extra = "forbid"
        allow_population_by_field_name = True
        validate_assignment = True


class EmbeddingConfig(_Section):
    """
    Configuration of the shared text/image embedding space.

    backend: "toy" or a pretrained vision-language model such as "vit-b-16".
    embed_dim: Dimension of the toy backend.
    pretrained: Weight tag for pretrained backends.
    use_cache: Persist embeddings in the embedding cache.
    """

    backend: str = "toy"
    embed_dim: int = Field(64, ge=1)
    pretrained: str = "openai"
    use_cache: bool = True


class PromptConfig(_Section):
    """Configuration of the keyword-to-prompt generator."""

    t_max: int = Field(1000, ge=1)
    threshold: float = Field(0.5, ge=0.0, le=2.0)
    comparator: Comparator = Comparator.GREATER
    fallback: FallbackMode = FallbackMode.ERROR
    image_embedding: ImageEmbeddingMode = ImageEmbeddingMode.MEAN
    search: PromptSearch = PromptSearch.EXHAUSTIVE
    iterations: int = Field(100, ge=1)
    mode: PromptMode = PromptMode.GENERATED


class GeneratorConfig(_Section):
    """
    Configuration of the variance-aware image generator.

    codebook_size: K, number of codebook vectors.
    latent_dim: C_lat, latent channel count.
    grid: Edge length of the patch grid; D = grid * grid.
    resolution: Edge length of generator images.
    hidden_channels: Width of the convolutional layers.
    channels: Image channel count the generator reads and writes.
    lambda_vq: Weight of the VQ objective in the total loss.
    beta: Commitment weight.
    learning_rate: Adam learning rate.
    seed: Seed of the initial weights, the run seed when built through `PipelineConfig`.
    """

    codebook_size: int = Field(64, alias="K", ge=2)
    latent_dim: int = Field(16, ge=1)
    grid: int = Field(8, ge=1)
    resolution: int = Field(64, ge=2)
    hidden_channels: int = Field(32, ge=1)
    channels: int = Field(3, ge=1)
    lambda_vq: float = Field(1.0, alias="lambda", ge=0.0)
    beta: float = Field(0.25, ge=0.0)
    learning_rate: float = Field(0.05, alias="lr", ge=0.0)
    sampling_mode: SamplingMode = SamplingMode.MEAN_PLUS_SIGMA_EPS
    seed: Optional[int] = None

    @validator("resolution")
    def _resolution_matches_grid(cls, resolution: int, values: Dict[str, Any]) -> int:
        grid = values.get("grid")
        if grid is None:
            return resolution
        ratio, remainder = divmod(resolution, grid)
        if remainder or ratio < 2 or ratio & (ratio - 1):
            raise ValueError("resolution / grid must be a power of two of at least 2")
        return resolution

    @property
    def init_seed(self) -> int:
        """Seed of the initial weights."""
        return 0 if self.seed is None else self.seed

    @property
    def levels(self) -> int:
        """Number of stride-2 levels between image and patch grid."""
        return (self.resolution // self.grid).bit_length() - 1

    @property
    def positions(self) -> int:
        """Number of grid positions D."""
        return self.grid * self.grid


class VarianceConfig(_Section):
    """How the variance grid is estimated."""

    scalar_per_patch: bool = False
    source: VarianceSource = VarianceSource.POST_QUANTIZATION


class IntegratorConfig(_Section):
    """
    Configuration of the text-guided generation rounds.

    rounds: L, number of generation rounds.
    copies: M, images generated per round.
    augment: N, augmented images per round.
    steps_per_round: Generator updates before each generation.
    strategy: Augmentation strategy name.
    memory_lean: Keep only the best image set in memory.
    """

    rounds: int = Field(20, ge=1)
    copies: int = Field(30, ge=1)
    augment: int = Field(8, ge=1)
    steps_per_round: int = Field(1, ge=0)
    strategy: str = "random-pick"
    memory_lean: bool = False


class DetectorConfig(_Section):
    """Configuration of the memory-bank anomaly detector."""

    backbone: Backbone = Backbone.TOY
    resolution: int = Field(64, ge=8)
    patch_size: int = Field(8, ge=1)
    coreset_fraction: float = Field(1.0, gt=0.0, le=1.0)
    smoothing_sigma: float = Field(4.0, ge=0.0)

    @property
    def scaled_sigma(self) -> float:
        """Gaussian smoothing width scaled to the detector resolution."""
        return self.smoothing_sigma * self.resolution / 64.0


class DataConfig(_Section):
    """Configuration of dataset ingestion."""

    root: Optional[str] = None
    category: str = "hazelnut"
    object_word: Optional[str] = None
    scenario: ScenarioKind = ScenarioKind.ONE_SHOT
    resolution: int = Field(64, ge=8)

    @property
    def object_name(self) -> str:
        """Word naming the object, defaulting to the category name."""
        return self.object_word or self.category


class PipelineConfig(_Section):
    """Every run hyperparameter in one place."""

    embedding: EmbeddingConfig = EmbeddingConfig()
    prompt: PromptConfig = PromptConfig()
    generator: GeneratorConfig = GeneratorConfig()
    variance: VarianceConfig = VarianceConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    detector: DetectorConfig = DetectorConfig()
    data: DataConfig = DataConfig()
    seed: int = 0
    output_root: str = "runs"

    @root_validator(skip_on_failure=True)
    def _generator_seed_follows_run_seed(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        generator = values["generator"]
        if generator.seed is None:
            values["generator"] = generator.copy(update={"seed": values["seed"]})
        return values

    def as_dict(self) -> Dict[str, Any]:
        """Get a plain, alias-keyed dictionary of the configuration."""
        return json.loads(self.json(by_alias=True))

    def flat(self) -> Dict[str, Any]:
        """Get the configuration as flat dotted keys."""
        return flatten(self.as_dict())

    def digest(self) -> str:
        """Canonical digest of the configuration, output locations excluded."""
        contents = {k: v for k, v in self.as_dict().items() if k not in DIGEST_EXCLUDED_KEYS}
        canonical = json.dumps(contents, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def flatten(contents: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """
    Flatten nested sections into dotted keys.

    :param contents: Possibly nested mapping.
    :param prefix: Prefix for keys at this level.
    :return: Flat mapping.
    """
    flat: Dict[str, Any] = {}
    for key, value in contents.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Expand dotted keys into nested sections.

    :param flat: Mapping with dotted keys.
    :return: Nested mapping.
    """
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        *sections, key = dotted.split(".")
        target = nested
        for section in sections:
            existing = target.setdefault(section, {})
            if not isinstance(existing, dict):
                raise ValueError(f"Key '{dotted}' conflicts with a value at '{section}'")
            target = existing
        target[key] = value
    return nested


def parse_override(override: str) -> Tuple[str, Any]:
    """
    Parse a `key=value` override, typing the value as YAML would.

    :param override: Override text.
    :return: Dotted key and typed value.
    """
    key, sep, value = override.partition("=")
    if not sep or not key.strip():
        raise ValueError(f"Override '{override}' is not of the form key=value")
    return key.strip(), yaml.safe_load(value)


def cache_directory() -> Path:
    """Directory holding the embedding cache."""
    override = os.environ.get(CACHE_DIR_ENV)
    if override:
        return Path(override)
    return xdg_cache_home() / "varigen"


class ConfigurationService:
    """Service for working with configuration."""

    @inject.autoparams()
    def __init__(self, file_service: FileService) -> None:
        """
        Initialize the service.

        :param file_service: Service for working with files.
        """
        self.file_service = file_service

    def get_config(
        self, config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
    ) -> PipelineConfig:
        """
        Build the configuration from an optional file and dotted overrides.

        :param config_file: YAML file of flat dotted keys or nested sections.
        :param overrides: Dotted keys that take precedence over the file.
        :return: Validated configuration.
        """
        flat: Dict[str, Any] = {}
        if config_file is not None:
            flat.update(flatten(self.file_service.read_yaml_file(config_file)))
        if overrides:
            flat.update(overrides)
        LOGGER.debug("Building configuration", config_file=config_file, keys=sorted(flat))
        return PipelineConfig.parse_obj(unflatten(flat))

    def save_config(self, config: PipelineConfig, destination: Path) -> None:
        """
        Save the given config as flat dotted keys.

        :param config: Configuration to save.
        :param destination: File to write.
        """
        self.file_service.write_yaml_file(destination, config.flat())


def merge_overrides(*groups: Iterable[Tuple[str, Any]]) -> Dict[str, Any]:
    """
    Merge groups of overrides, later groups winning.

    :param groups: Groups of (dotted key, value) pairs.
    :return: Merged overrides.
    """
    merged: Dict[str, Any] = {}
    for group in groups:
        for key, value in group:
            merged[key] = value
    return merged
