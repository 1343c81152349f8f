"""The variance-aware vector-quantized image generator."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch
from torch import nn

from varigen.errors import (
    DimensionMismatch,
    EmptyInput,
    IoFailure,
    NonFiniteLoss,
    ShapeMismatch,
)
from varigen.models.latent import (
    Codebook,
    LatentGrid,
    SamplingMode,
    VarianceGrid,
    VarianceSource,
)
from varigen.services.config_service import GeneratorConfig, VarianceConfig

LOGGER = structlog.get_logger(__name__)

CHECKPOINT_FORMAT = "varigen-generator/1"


class QuantizationAnchors(NamedTuple):
    """
    Quantization decisions held fixed while the objective is evaluated.

    latents: Encoder output the decisions were made on (B x D x C), detached.
    indices: Chosen codebook index per position (B x D).
    codes: Codebook rows at those indices (B x D x C), detached.
    """

    latents: torch.Tensor
    indices: torch.Tensor
    codes: torch.Tensor


class TrainStepResult(NamedTuple):
    """Losses of one optimizer step, measured before the update."""

    total: float
    mse: float
    vq: float


def nearest_codes(latents: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """
    Find the nearest codebook row of each latent row.

    :param latents: N x C latents.
    :param codebook: K x C codebook.
    :return: N indices; ties go to the smallest index.
    """
    if latents.shape[-1] != codebook.shape[-1]:
        raise DimensionMismatch(
            f"Latent dimension {latents.shape[-1]} does not match codebook {codebook.shape[-1]}"
        )
    distances = ((latents[:, None, :] - codebook[None, :, :]) ** 2).sum(dim=-1)
    return torch.argmin(distances, dim=1)


def quantize(latents: LatentGrid, codebook: Codebook) -> LatentGrid:
    """
    Replace each latent row by its nearest codebook row.

    :param latents: Continuous or quantized latents.
    :param codebook: Codebook to snap to.
    :return: Quantized grid carrying codebook indices.
    """
    vectors = codebook.vectors.detach()
    indices = nearest_codes(latents.values.detach().to(vectors.dtype), vectors)
    return LatentGrid(values=vectors[indices].clone(), indices=indices)


def estimate_statistics(
    grids: Sequence[LatentGrid], scalar_per_patch: bool = False
) -> Tuple[LatentGrid, VarianceGrid]:
    """
    Estimate the element-wise mean and population variance of latent grids.

    :param grids: Latent grids of the augmented views.
    :param scalar_per_patch: Use one variance per position, averaged over channels.
    :return: Mean grid E and variance grid Σ.
    """
    if not grids:
        raise EmptyInput("At least one latent grid is required")
    shapes = {tuple(grid.values.shape) for grid in grids}
    if len(shapes) != 1:
        raise ShapeMismatch(f"Latent grids have different shapes: {sorted(shapes)}")
    stacked = torch.stack([grid.values.detach() for grid in grids])
    mean, variance = _moments(stacked, scalar_per_patch)
    return LatentGrid(values=mean), VarianceGrid(values=variance)


def _moments(stacked: torch.Tensor, scalar_per_patch: bool) -> Tuple[torch.Tensor, torch.Tensor]:
    mean = stacked.mean(dim=0)
    variance = ((stacked - mean) ** 2).mean(dim=0)
    if scalar_per_patch:
        variance = variance.mean(dim=-1, keepdim=True).expand_as(variance)
    return mean, variance


def safe_sqrt(variance: torch.Tensor) -> torch.Tensor:
    """Square root whose gradient is zero, not infinite, where the variance is zero."""
    positive = variance > 0
    safe = torch.where(positive, variance, torch.ones_like(variance))
    return torch.where(positive, torch.sqrt(safe), torch.zeros_like(variance))


def draw_latents(
    mean: torch.Tensor,
    variance: torch.Tensor,
    mode: SamplingMode,
    rng: torch.Generator,
    copies: int,
) -> torch.Tensor:
    """
    Draw latent grids around a mean grid.

    :param mean: D x C mean grid.
    :param variance: D x C variance grid.
    :param mode: Sampling mode.
    :param rng: Source of the standard normal noise.
    :param copies: Number of grids to draw.
    :return: copies x D x C latents.
    """
    if mean.shape != variance.shape:
        raise ShapeMismatch(
            f"Mean shape {tuple(mean.shape)} does not match variance {tuple(variance.shape)}"
        )
    shape = (copies,) + tuple(mean.shape)
    if mode == SamplingMode.MEAN:
        return mean.expand(shape).clone()
    std = safe_sqrt(variance)
    if mode == SamplingMode.MEAN_PLUS_SIGMA:
        return (mean + std).expand(shape).clone()
    noise = torch.randn(shape, generator=rng, dtype=mean.dtype, device=mean.device)
    if mode == SamplingMode.UNIT_VARIANCE:
        return mean + noise
    return mean + std * noise


def sample_latents(
    mean: LatentGrid,
    variance: VarianceGrid,
    rng: torch.Generator,
    mode: SamplingMode = SamplingMode.MEAN_PLUS_SIGMA_EPS,
) -> LatentGrid:
    """
    Sample one latent grid from N(E, Σ) according to the sampling mode.

    :param mean: Mean grid E.
    :param variance: Variance grid Σ.
    :param rng: Source of the standard normal noise.
    :param mode: Sampling mode.
    :return: Sampled grid.
    """
    return LatentGrid(values=draw_latents(mean.values, variance.values, mode, rng, 1)[0])


def pixel_mse(originals: torch.Tensor, generated: torch.Tensor) -> torch.Tensor:
    """
    Mean over generated images of the per-pixel squared error to the paired original.

    Each generated image is paired with its nearest original by pixel MSE, which for a single
    original pairs every generated image with it.

    :param originals: O x C x H x W originals.
    :param generated: M x C x H x W generated images.
    :return: Scalar loss.
    """
    if originals.shape[1:] != generated.shape[1:]:
        raise ShapeMismatch(
            f"Original shape {tuple(originals.shape[1:])} does not match "
            f"generated shape {tuple(generated.shape[1:])}"
        )
    errors = ((generated[:, None] - originals[None, :]) ** 2).mean(dim=(2, 3, 4))
    return errors.min(dim=1).values.mean()


def mse_loss(originals: Sequence[np.ndarray], generated: Sequence[np.ndarray]) -> float:
    """
    Image-space MSE between generated images and their paired originals.

    :param originals: Original images.
    :param generated: Generated images.
    :return: Non-negative loss.
    """
    if not originals or not generated:
        raise EmptyInput("MSE needs at least one original and one generated image")
    shapes = {np.shape(image) for image in list(originals) + list(generated)}
    if len(shapes) != 1:
        raise ShapeMismatch(f"Images have different shapes: {sorted(shapes)}")
    target = torch.from_numpy(np.stack(originals).astype(np.float64)).permute(0, 3, 1, 2)
    images = torch.from_numpy(np.stack(generated).astype(np.float64)).permute(0, 3, 1, 2)
    return pixel_mse(target, images).item()


class VarianceAwareGenerator(nn.Module):
    """Strided convolutional encoder and decoder around a learned codebook."""

    def __init__(self, config: GeneratorConfig) -> None:
        """
        Build the network.

        :param config: Generator configuration.
        """
        super().__init__()
        self.config = config
        hidden = config.hidden_channels

        encoder: List[nn.Module] = [nn.Conv2d(config.channels, hidden, 3, padding=1), nn.SiLU()]
        for _ in range(config.levels):
            encoder += [nn.Conv2d(hidden, hidden, 4, stride=2, padding=1), nn.SiLU()]
        encoder.append(nn.Conv2d(hidden, config.latent_dim, 1))
        self.encoder = nn.Sequential(*encoder)

        decoder: List[nn.Module] = [nn.Conv2d(config.latent_dim, hidden, 1), nn.SiLU()]
        for _ in range(config.levels):
            decoder += [nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1), nn.SiLU()]
        decoder += [nn.Conv2d(hidden, config.channels, 3, padding=1), nn.Sigmoid()]
        self.decoder = nn.Sequential(*decoder)

        size = config.codebook_size
        self.codebook = nn.Embedding(size, config.latent_dim)
        self.codebook.weight.data.uniform_(-1.0 / size, 1.0 / size)

    def encode_batch(self, images: torch.Tensor) -> torch.Tensor:
        """
        Encode images into patch latents.

        :param images: B x C x H x W images.
        :return: B x D x C_lat latents, positions in row-major grid order.
        """
        features = self.encoder(images)
        return features.permute(0, 2, 3, 1).reshape(images.shape[0], -1, self.config.latent_dim)

    def decode_batch(self, latents: torch.Tensor) -> torch.Tensor:
        """
        Decode patch latents into images.

        :param latents: B x D x C_lat latents.
        :return: B x C x H x W images in (0, 1).
        """
        grid = self.config.grid
        features = latents.reshape(latents.shape[0], grid, grid, -1).permute(0, 3, 1, 2)
        return self.decoder(features)

    def anchors(self, latents: torch.Tensor) -> QuantizationAnchors:
        """
        Make quantization decisions for a batch of latents.

        :param latents: B x D x C_lat latents.
        :return: Detached anchors.
        """
        detached = latents.detach()
        weight = self.codebook.weight.detach()
        indices = nearest_codes(detached.reshape(-1, detached.shape[-1]), weight)
        indices = indices.reshape(detached.shape[:2])
        return QuantizationAnchors(latents=detached, indices=indices, codes=weight[indices])

    @staticmethod
    def straight_through(latents: torch.Tensor, anchors: QuantizationAnchors) -> torch.Tensor:
        """Quantized latents whose gradient passes to the encoder unchanged."""
        return latents + (anchors.codes - anchors.latents)

    def vq_loss(
        self, images: torch.Tensor, latents: torch.Tensor, anchors: QuantizationAnchors
    ) -> torch.Tensor:
        """
        VQ objective of already encoded images.

        :param images: B x C x H x W inputs.
        :param latents: Their B x D x C_lat encoder output.
        :param anchors: Quantization decisions.
        :return: Scalar objective.
        """
        codes = self.codebook.weight[anchors.indices]
        reconstruction = self.decode_batch(self.straight_through(latents, anchors))
        reconstruction_term = ((reconstruction - images) ** 2).mean(dim=(1, 2, 3))
        codebook_term = ((anchors.latents - codes) ** 2).sum(dim=(1, 2))
        commitment_term = ((latents - anchors.codes) ** 2).sum(dim=(1, 2))
        per_image = reconstruction_term + codebook_term + self.config.beta * commitment_term
        return per_image.mean()

    def vq_objective(
        self, images: torch.Tensor, anchors: Optional[QuantizationAnchors] = None
    ) -> torch.Tensor:
        """
        Reconstruction, codebook and commitment terms, averaged over the batch.

        :param images: B x C x H x W inputs.
        :param anchors: Quantization decisions to hold fixed; made from this pass if not given.
        :return: Scalar objective.
        """
        latents = self.encode_batch(images)
        if anchors is None:
            anchors = self.anchors(latents)
        return self.vq_loss(images, latents, anchors)


def build_model(
    config: GeneratorConfig, dtype: torch.dtype = torch.float32
) -> VarianceAwareGenerator:
    """
    Build a generator whose initial weights depend only on the configured seed.

    :param config: Generator configuration.
    :param dtype: Parameter dtype.
    :return: Initialized network.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.init_seed)
        model = VarianceAwareGenerator(config)
    return model.to(dtype)


class GeneratorService:
    """Trains the generator and draws image sets from it."""

    def __init__(
        self,
        config: GeneratorConfig,
        variance: Optional[VarianceConfig] = None,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        """
        Initialize the service with a freshly seeded generator.

        :param config: Generator configuration.
        :param variance: How variance statistics are estimated.
        :param dtype: Parameter dtype.
        """
        self.config = config
        self.variance = variance or VarianceConfig()
        self.dtype = dtype
        self.model = build_model(config, dtype)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.learning_rate)
        self.steps = 0

    @property
    def codebook(self) -> Codebook:
        """Current codebook."""
        return Codebook(vectors=self.model.codebook.weight.detach().clone())

    def to_batch(self, images: Sequence[np.ndarray]) -> torch.Tensor:
        """
        Stack images into a B x C x H x W tensor in the generator's channel count.

        :param images: H x W x C images at the generator resolution.
        :return: Batch tensor.
        """
        if not images:
            raise EmptyInput("At least one image is required")
        resolution = self.config.resolution
        arrays = []
        for image in images:
            array = np.asarray(image, dtype=np.float64)
            if array.ndim != 3 or array.shape[:2] != (resolution, resolution):
                raise ShapeMismatch(
                    f"Expected a {resolution}x{resolution} image, got shape {array.shape}"
                )
            arrays.append(_match_channels(array, self.config.channels))
        batch = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2)
        return batch.to(self.dtype).contiguous()

    @staticmethod
    def to_images(batch: torch.Tensor) -> List[np.ndarray]:
        """Convert a B x C x H x W batch into H x W x C arrays in [0, 1]."""
        clamped = batch.detach().clamp(0.0, 1.0).permute(0, 2, 3, 1)
        return [image.to(torch.float64).numpy().copy() for image in clamped]

    def encode(self, image: np.ndarray) -> LatentGrid:
        """
        Encode an image into continuous patch latents.

        :param image: H x W x C image at the generator resolution.
        :return: D x C_lat latents.
        """
        with torch.no_grad():
            latents = self.model.encode_batch(self.to_batch([image]))
        return LatentGrid(values=latents[0].clone())

    def quantize(self, latents: LatentGrid) -> LatentGrid:
        """Snap latents to the current codebook."""
        return quantize(latents, self.codebook)

    def decode(self, latents: LatentGrid) -> np.ndarray:
        """
        Decode patch latents into an image.

        :param latents: D x C_lat latents.
        :return: H x W x C image in [0, 1].
        """
        expected = (self.config.positions, self.config.latent_dim)
        if tuple(latents.values.shape) != expected:
            raise ShapeMismatch(
                f"Expected latents of shape {expected}, got {tuple(latents.values.shape)}"
            )
        with torch.no_grad():
            batch = self.model.decode_batch(latents.values.to(self.dtype)[None])
        return self.to_images(batch)[0]

    def statistics(self, images: Sequence[np.ndarray]) -> Tuple[LatentGrid, VarianceGrid]:
        """
        Estimate the latent mean and variance of a set of augmented views.

        :param images: Augmented views at the generator resolution.
        :return: Mean grid E and variance grid Σ.
        """
        grids = [self.encode(image) for image in images]
        if self.variance.source == VarianceSource.POST_QUANTIZATION:
            grids = [self.quantize(grid) for grid in grids]
        return estimate_statistics(grids, self.variance.scalar_per_patch)

    def generate_set(
        self,
        mean: LatentGrid,
        variance: VarianceGrid,
        copies: int,
        rng: torch.Generator,
        mode: Optional[SamplingMode] = None,
    ) -> List[np.ndarray]:
        """
        Generate images from latents sampled around the mean grid.

        :param mean: Mean grid E.
        :param variance: Variance grid Σ.
        :param copies: Number of images M.
        :param rng: Source of the sampling noise.
        :param mode: Sampling mode, the configured one if not given.
        :return: M images.
        """
        if copies < 1:
            raise ValueError(f"Number of copies must be at least 1, got {copies}")
        mode = mode or self.config.sampling_mode
        latents = draw_latents(mean.values, variance.values, mode, rng, copies)
        return [self.decode(LatentGrid(values=grid)) for grid in latents]

    def vq_objective(self, inputs: Sequence[np.ndarray]) -> float:
        """
        Evaluate the VQ objective on a batch of images without training.

        :param inputs: Images at the generator resolution.
        :return: Non-negative objective.
        """
        with torch.no_grad():
            return self.model.vq_objective(self.to_batch(inputs)).item()

    def reconstruct(self, image: np.ndarray) -> np.ndarray:
        """Decode the quantized encoding of an image."""
        return self.decode(self.quantize(self.encode(image)))

    def train_step(
        self,
        originals: Sequence[np.ndarray],
        augmented: Sequence[np.ndarray],
        copies: int,
        rng: torch.Generator,
    ) -> TrainStepResult:
        """
        Apply one optimizer step to encoder, decoder and codebook.

        The total loss is the MSE between images generated from the augmented views'
        statistics and their paired originals, plus λ times the VQ objective of the views.

        :param originals: Original good images.
        :param augmented: Augmented views of the originals.
        :param copies: Number of images generated for the MSE term.
        :param rng: Source of the sampling noise.
        :return: Losses before the update.
        """
        targets = self.to_batch(originals)
        views = self.to_batch(augmented)
        self.model.train()
        self.optimizer.zero_grad()

        latents = self.model.encode_batch(views)
        anchors = self.model.anchors(latents)
        quantized = self.model.straight_through(latents, anchors)
        source = quantized if self.variance.source == VarianceSource.POST_QUANTIZATION else latents
        mean, variance = _moments(source, self.variance.scalar_per_patch)
        sampled = draw_latents(mean, variance, self.config.sampling_mode, rng, copies)
        generated = self.model.decode_batch(sampled)

        loss_mse = pixel_mse(targets, generated)
        loss_vq = self.model.vq_loss(views, latents, anchors)
        total = loss_mse + self.config.lambda_vq * loss_vq
        if not bool(torch.isfinite(total)):
            raise NonFiniteLoss(
                f"Non-finite loss at step {self.steps + 1}: "
                f"mse={loss_mse.item()}, vq={loss_vq.item()}"
            )

        total.backward()
        self.optimizer.step()
        self.model.eval()
        self.steps += 1
        result = TrainStepResult(total=total.item(), mse=loss_mse.item(), vq=loss_vq.item())
        LOGGER.debug("Generator step", step=self.steps, **result._asdict())
        return result

    def save_checkpoint(self, path: Path, seed: Optional[int] = None) -> None:
        """
        Save configuration, parameters, codebook and optimizer state.

        :param path: File to write.
        :param seed: Run seed to record.
        """
        payload: Dict[str, Any] = {
            "format": CHECKPOINT_FORMAT,
            "config": json.loads(self.config.json(by_alias=True)),
            "variance": json.loads(self.variance.json()),
            "state_dict": self.model.state_dict(),
            "codebook": self.model.codebook.weight.detach().clone(),
            "optimizer": self.optimizer.state_dict(),
            "steps": self.steps,
            "seed": self.config.init_seed if seed is None else seed,
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            torch.save(payload, path)
        except OSError as err:
            raise IoFailure(f"Could not write checkpoint '{path}': {err}") from err
        LOGGER.info("Saved generator checkpoint", path=str(path), steps=self.steps)

    @classmethod
    def load_checkpoint(cls, path: Path) -> GeneratorService:
        """
        Restore a generator saved by `save_checkpoint`.

        :param path: Checkpoint file.
        :return: Generator service with restored parameters and optimizer state.
        """
        try:
            payload = torch.load(path, map_location="cpu")
        except (OSError, RuntimeError) as err:
            raise IoFailure(f"Could not read checkpoint '{path}': {err}") from err
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise IoFailure(f"'{path}' is not a generator checkpoint")

        service = cls(
            GeneratorConfig.parse_obj(payload["config"]),
            VarianceConfig.parse_obj(payload["variance"]),
            dtype=payload["codebook"].dtype,
        )
        service.model.load_state_dict(payload["state_dict"])
        service.optimizer.load_state_dict(payload["optimizer"])
        service.steps = int(payload["steps"])
        return service


def _match_channels(image: np.ndarray, channels: int) -> np.ndarray:
    if image.shape[2] == channels:
        return image
    if image.shape[2] == 1:
        return np.repeat(image, channels, axis=2)
    if channels == 1:
        return image.mean(axis=2, keepdims=True)
    raise ShapeMismatch(f"Cannot convert {image.shape[2]} channels to {channels}")
