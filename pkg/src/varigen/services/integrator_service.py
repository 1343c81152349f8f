"""The text-guided knowledge integrator: generation rounds scored against a prompt."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, List, Optional, Sequence

import inject
import numpy as np
import structlog
import torch

from varigen.errors import EmptyImageSet, NonFiniteLoss
from varigen.models.embedding import EmbeddingVector
from varigen.models.generation import (
    IMAGES_DIR,
    MANIFEST_FILE_NAME,
    ORIGINALS_DIR,
    GenerationRound,
    RunResult,
    best_round,
)
from varigen.models.prompt import PromptCandidate, PromptSelection
from varigen.services.augmentation_service import augment
from varigen.services.config_service import PipelineConfig, PromptMode
from varigen.services.embedding_service import EmbeddingService, cosine_similarity
from varigen.services.file_service import FileService
from varigen.services.generator_service import GeneratorService

LOGGER = structlog.get_logger(__name__)

Scorer = Callable[[EmbeddingVector, EmbeddingVector], float]


def round_seeds(seed: int, round_index: int) -> List[int]:
    """
    Derive the augmentation and sampling seeds of a round.

    :param seed: Run seed.
    :param round_index: 1-based round number.
    :return: [augmentation seed, sampling seed].
    """
    state = np.random.SeedSequence([seed, round_index]).generate_state(2)
    return [int(value) for value in state]


def visual_feature(
    images: Sequence[np.ndarray], embedding_service: EmbeddingService
) -> EmbeddingVector:
    """
    Normalized mean of the per-image embeddings of an image set.

    :param images: Nonempty image set.
    :param embedding_service: Service to embed images with.
    :return: Visual feature z_v.
    """
    if not images:
        raise EmptyImageSet("Cannot compute the visual feature of an empty image set")
    return embedding_service.image_set_embedding(images)


class IntegratorService:
    """Runs generation rounds and keeps the round that best matches the prompt."""

    @inject.autoparams()
    def __init__(self, embedding_service: EmbeddingService, file_service: FileService) -> None:
        """
        Initialize the service.

        :param embedding_service: Service to embed prompts and generated images with.
        :param file_service: Service for working with files.
        """
        self.embedding_service = embedding_service
        self.file_service = file_service

    def prompt_text(self, prompt: PromptSelection, mode: PromptMode) -> str:
        """
        Sentence the rounds are scored against.

        :param prompt: Prompt selection.
        :param mode: Use the selected prompt or the naive prompt.
        :return: Sentence.
        """
        if mode == PromptMode.NAIVE:
            return PromptCandidate.naive(prompt.object_word).text
        return prompt.best.text

    def run(
        self,
        originals: Sequence[np.ndarray],
        prompt: PromptSelection,
        config: PipelineConfig,
        generator: GeneratorService,
        scorer: Optional[Scorer] = None,
        out_dir: Optional[Path] = None,
        original_paths: Optional[Sequence[str]] = None,
    ) -> RunResult:
        """
        Run L rounds of augment, train, generate and score, returning the best round.

        The run manifest is rewritten after every round so that a failed run leaves the
        rounds it completed on disk.

        :param originals: Original good images at the generator resolution.
        :param prompt: Selected prompt.
        :param config: Pipeline configuration.
        :param generator: Generator to train and sample from.
        :param scorer: Similarity of prompt and visual features, cosine if not given.
        :param out_dir: Directory to keep the run manifest in.
        :param original_paths: Names of the originals, for the manifest.
        :return: Run result.
        """
        settings = config.integrator
        scorer = scorer or cosine_similarity
        text = self.prompt_text(prompt, config.prompt.mode)
        text_embedding = self.embedding_service.embed_text(text)
        rounds: List[GenerationRound] = []

        def snapshot() -> RunResult:
            alpha = best_round([r.score for r in rounds]) if rounds else 0
            return RunResult(
                rounds=list(rounds),
                alpha=alpha,
                best_images=list(rounds[alpha - 1].images) if rounds else [],
                prompt=prompt,
                prompt_text=text,
                config_digest=config.digest(),
                seed=config.seed,
                originals=list(original_paths or []),
            )

        LOGGER.info(
            "Starting generation run",
            prompt=text,
            rounds=settings.rounds,
            copies=settings.copies,
            augment=settings.augment,
            strategy=settings.strategy,
        )
        for round_index in range(1, settings.rounds + 1):
            augment_seed, sample_seed = round_seeds(config.seed, round_index)
            rng = torch.Generator().manual_seed(sample_seed)
            views = augment(
                originals, settings.strategy, settings.augment, np.random.default_rng(augment_seed)
            )

            loss: Optional[float] = None
            try:
                for _ in range(settings.steps_per_round):
                    loss = generator.train_step(originals, views.images, settings.copies, rng).total
            except NonFiniteLoss:
                LOGGER.error("Generator diverged", round=round_index)
                self._write_manifest(out_dir, snapshot(), status="failed")
                raise

            mean, variance = generator.statistics(views.images)
            images = generator.generate_set(mean, variance, settings.copies, rng)
            feature = visual_feature(images, self.embedding_service)
            score = float(scorer(text_embedding, feature))

            if settings.memory_lean and rounds:
                best_so_far = rounds[best_round([r.score for r in rounds]) - 1]
                if score > best_so_far.score:
                    best_so_far.images = []
                else:
                    images = []

            rounds.append(
                GenerationRound(
                    round_index=round_index,
                    images=images,
                    visual_feature=feature,
                    score=score,
                    generator_loss=loss,
                    seed_used=augment_seed,
                    augmentations=[
                        {"source": r.source, "operations": list(r.operations)}
                        for r in views.records
                    ],
                )
            )
            LOGGER.info("Round complete", round=round_index, score=score, generator_loss=loss)
            self._write_manifest(out_dir, snapshot(), status="running")

        result = snapshot()
        LOGGER.info("Generation run complete", alpha=result.alpha, best_score=result.best.score)
        return result

    def _write_manifest(self, out_dir: Optional[Path], result: RunResult, status: str) -> None:
        if out_dir is None:
            return
        self.file_service.write_yaml_file(out_dir / MANIFEST_FILE_NAME, result.manifest(status))

    def export_best_set(
        self, result: RunResult, out_dir: Path, originals: Sequence[np.ndarray] = ()
    ) -> Path:
        """
        Write the best round's images, the originals and the final run manifest.

        :param result: Completed run.
        :param out_dir: Directory to write to.
        :param originals: Originals the run started from, kept for quality reports.
        :return: Path of the manifest.
        """
        image_names = []
        for i, image in enumerate(result.best_images):
            name = f"best_{i:03d}.png"
            self.file_service.write_image(out_dir / IMAGES_DIR / name, image)
            image_names.append(f"{IMAGES_DIR}/{name}")
        for i, image in enumerate(originals):
            self.file_service.write_image(out_dir / ORIGINALS_DIR / f"original_{i:03d}.png", image)

        manifest = result.manifest()
        manifest["images"] = image_names
        manifest_path = out_dir / MANIFEST_FILE_NAME
        self.file_service.write_yaml_file(manifest_path, manifest)
        LOGGER.info("Exported best image set", out_dir=str(out_dir), images=len(image_names))
        return manifest_path
