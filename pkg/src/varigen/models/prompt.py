"""Models for candidate prompts and prompt selection."""
from __future__ import annotations

from typing import Any, Dict, List

from pydantic import BaseModel, root_validator, validator

PROMPT_TEMPLATE = "a {object_word} with {status_word}"
NAIVE_TEMPLATE = "a photo of a {object_word}"
FALLBACK_INDEX = -1


class PromptCandidate(BaseModel):
    """
    A candidate sentence built from the object word and a status word.

    object_word: Name of the object (W^o).
    status_word: Related word drawn from the lexicon (W_t).
    text: Rendered sentence (S_t).
    index: Position in the candidate list, or FALLBACK_INDEX for the naive prompt.
    """

    object_word: str
    status_word: str
    text: str
    index: int

    class Config:
        """Candidates are immutable."""

        allow_mutation = False

    @classmethod
    def render(cls, object_word: str, status_word: str, index: int) -> PromptCandidate:
        """
        Create a candidate by applying the prompt template.

        :param object_word: Name of the object.
        :param status_word: Related word.
        :param index: Position in the candidate list.
        :return: Rendered candidate.
        """
        text = PROMPT_TEMPLATE.format(object_word=object_word, status_word=status_word)
        return cls(object_word=object_word, status_word=status_word, text=text, index=index)

    @classmethod
    def naive(cls, object_word: str) -> PromptCandidate:
        """
        Create the naive fallback prompt for an object.

        :param object_word: Name of the object.
        :return: Fallback candidate.
        """
        return cls(
            object_word=object_word,
            status_word="",
            text=NAIVE_TEMPLATE.format(object_word=object_word),
            index=FALLBACK_INDEX,
        )

    @property
    def is_fallback(self) -> bool:
        """True if this is the naive fallback prompt."""
        return self.index == FALLBACK_INDEX

    @root_validator(skip_on_failure=True)
    def _check_template(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if values["index"] == FALLBACK_INDEX:
            return values
        status_word = values["status_word"]
        if not status_word or "{" in status_word or "}" in status_word:
            raise ValueError(f"Invalid status word: '{status_word}'")
        expected = PROMPT_TEMPLATE.format(
            object_word=values["object_word"], status_word=status_word
        )
        if values["text"] != expected:
            raise ValueError(f"Candidate text '{values['text']}' does not match template")
        return values


class KeywordExpansion(BaseModel):
    """
    Status words produced for an object word.

    words: Ordered, unique status words.
    fallback: True if the object word was not in the lexicon and only inflections were returned.
    """

    words: List[str]
    fallback: bool = False


class PromptSelection(BaseModel):
    """
    Result of choosing the best prompt for a set of original images.

    candidates: Every candidate considered (size T).
    positive_set: Indices of candidates that survived outlier filtering (S^p).
    best: Selected prompt (P).
    best_score: Cosine similarity between the image embedding and the best prompt.
    worst: Lowest scoring member of the positive set, kept for diagnostics.
    worst_score: Cosine similarity of the worst prompt.
    scores: Cosine similarity of each positive candidate, keyed by candidate index.
    fallback: True if the naive prompt was used because the positive set was empty.
    """

    candidates: List[PromptCandidate]
    positive_set: List[int]
    best: PromptCandidate
    best_score: float
    worst: PromptCandidate
    worst_score: float
    scores: Dict[int, float] = {}
    fallback: bool = False

    @validator("positive_set")
    def _sorted_unique(cls, positive_set: List[int]) -> List[int]:
        if sorted(set(positive_set)) != positive_set:
            raise ValueError("Positive set must be sorted and unique")
        return positive_set

    @root_validator(skip_on_failure=True)
    def _best_in_positive_set(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if not values["fallback"] and values["best"].index not in values["positive_set"]:
            raise ValueError("Best prompt must be a member of the positive set")
        return values

    @property
    def object_word(self) -> str:
        """Name of the object the prompt describes."""
        return self.best.object_word

    def summary(self) -> Dict[str, Any]:
        """Best and worst prompts with their scores and set sizes."""
        return {
            "best": self.best.text,
            "best_score": float(self.best_score),
            "worst": self.worst.text,
            "worst_score": float(self.worst_score),
            "fallback": self.fallback,
            "candidates": len(self.candidates),
            "positive_set": len(self.positive_set),
        }
