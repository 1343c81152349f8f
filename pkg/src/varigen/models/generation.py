"""Models for generation rounds and the result of a generation run."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from varigen.models.embedding import EmbeddingVector
from varigen.models.prompt import PromptSelection

MANIFEST_FILE_NAME = "manifest.yaml"
CONFIG_FILE_NAME = "config.yaml"
EVALUATION_FILE_NAME = "evaluation.yaml"
SCORES_FILE_NAME = "scores.csv"
IMAGES_DIR = "images"
ORIGINALS_DIR = "originals"


def run_identifier(config_digest: str, seed: int) -> str:
    """Identifier of a run, derived from its configuration digest and seed."""
    return f"{config_digest[:12]}-s{seed}"


def best_round(scores: Sequence[float]) -> int:
    """
    Find the winning round.

    :param scores: Score of each round, first round first.
    :return: 1-based index of the earliest round attaining the maximal score.
    """
    if not scores:
        raise ValueError("At least one round is required")
    return int(np.argmax(np.asarray(scores, dtype=np.float64))) + 1


@dataclass
class GenerationRound:
    """
    One round of the text-guided generation loop.

    round_index: 1-based round number l.
    images: The M generated images, empty once released in memory-lean mode.
    visual_feature: Normalized mean embedding of the images (z_v).
    score: Similarity between the prompt embedding and the visual feature.
    generator_loss: Total loss of the last generator step of the round.
    seed_used: Seed the round's augmentation and sampling were derived from.
    augmentations: How each augmented view of the round was made.
    """

    round_index: int
    images: List[np.ndarray]
    visual_feature: EmbeddingVector
    score: float
    generator_loss: Optional[float]
    seed_used: int
    augmentations: List[Dict[str, Any]] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        """Manifest entry of the round."""
        return {
            "round": self.round_index,
            "score": float(self.score),
            "generator_loss": None if self.generator_loss is None else float(self.generator_loss),
            "seed": int(self.seed_used),
            "augmentations": self.augmentations,
        }


@dataclass
class RunResult:
    """
    Outcome of a generation run.

    rounds: Every round in order.
    alpha: 1-based index of the winning round.
    best_images: Images of the winning round.
    prompt: Prompt selection the run was guided by.
    prompt_text: Sentence whose embedding the rounds were scored against (z_t).
    config_digest: Digest of the configuration used.
    seed: Run seed.
    originals: Original images the run started from.
    """

    rounds: List[GenerationRound]
    alpha: int
    best_images: List[np.ndarray]
    prompt: PromptSelection
    prompt_text: str
    config_digest: str
    seed: int
    originals: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Check that alpha names the earliest best round."""
        if self.rounds and self.alpha != best_round([r.score for r in self.rounds]):
            raise ValueError(f"Round {self.alpha} is not the earliest best round")

    @property
    def best(self) -> GenerationRound:
        """The winning round."""
        return self.rounds[self.alpha - 1]

    @property
    def run_id(self) -> str:
        """Identifier derived from the configuration digest and seed."""
        return run_identifier(self.config_digest, self.seed)

    def manifest(self, status: str = "complete") -> Dict[str, Any]:
        """
        Build the run manifest.

        :param status: Run status to record.
        :return: Manifest contents.
        """
        return {
            "run_id": self.run_id,
            "status": status,
            "prompt": {"text": self.prompt_text, **self.prompt.summary()},
            "rounds": [r.summary() for r in self.rounds],
            "alpha": self.alpha,
            "best_score": float(self.best.score) if self.rounds else None,
            "seeds": {"run": self.seed, "rounds": [r.seed_used for r in self.rounds]},
            "originals": self.originals,
            "config_digest": self.config_digest,
        }
