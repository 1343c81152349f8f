"""Service for turning an object word into the best describing prompt."""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import inject
import numpy as np
import structlog

from varigen.errors import (
    DimensionMismatch,
    EmptyInput,
    EmptyPositiveSet,
    EmptyText,
    WordNotInLexicon,
)
from varigen.models.embedding import EmbeddingVector
from varigen.models.prompt import KeywordExpansion, PromptCandidate, PromptSelection
from varigen.services.config_service import (
    Comparator,
    FallbackMode,
    ImageEmbeddingMode,
    PromptConfig,
    PromptSearch,
)
from varigen.services.embedding_service import (
    EmbeddingService,
    cosine_similarity,
    l2_distance,
    mean_embedding,
)
from varigen.services.lexicon_service import RELATION_ORDER, Lexicon, inflections, surface_form

LOGGER = structlog.get_logger(__name__)

DEFAULT_THRESHOLD = 0.5
DEFAULT_ITERATIONS = 100


def expand_keywords(object_word: str, lexicon: Lexicon, t_max: int) -> KeywordExpansion:
    """
    Build the ordered list of status words for an object word.

    Words are taken relation by relation (synonyms, hypernyms, hyponyms, part-whole), each
    relation in alphabetical order, dropping repeats and the object word itself.

    :param object_word: Name of the object.
    :param lexicon: Lexicon to expand with.
    :param t_max: Largest number of words to return.
    :return: Expansion, flagged as fallback if the word is not in the lexicon.
    """
    if not object_word.strip():
        raise EmptyText("Object word must not be empty")
    if t_max < 1:
        raise ValueError(f"t_max must be at least 1, got {t_max}")

    own_form = surface_form(object_word)
    try:
        related = lexicon.related(object_word)
    except WordNotInLexicon:
        LOGGER.warning(
            "Object word not in lexicon, using inflections", word=object_word, source=lexicon.source
        )
        return KeywordExpansion(words=inflections(own_form)[:t_max], fallback=True)

    words: List[str] = []
    seen = {own_form}
    for relation in RELATION_ORDER:
        for word in related.get(relation, []):
            word = surface_form(word)
            if word and word not in seen and "{" not in word and "}" not in word:
                seen.add(word)
                words.append(word)
    if not words:
        LOGGER.warning("Lexicon entry has no usable words, using inflections", word=object_word)
        return KeywordExpansion(words=inflections(own_form)[:t_max], fallback=True)
    return KeywordExpansion(words=words[:t_max])


def build_candidates(object_word: str, words: Sequence[str]) -> List[PromptCandidate]:
    """
    Render one candidate prompt per status word.

    :param object_word: Name of the object.
    :param words: Status words.
    :return: Candidates indexed 0..len(words) - 1.
    """
    if not words:
        raise EmptyInput("At least one status word is needed to build candidates")
    return [PromptCandidate.render(object_word, word, index) for index, word in enumerate(words)]


def _check_embeddings(
    candidates: Sequence[PromptCandidate], text_embeddings: Sequence[EmbeddingVector]
) -> None:
    if len(candidates) != len(text_embeddings):
        raise DimensionMismatch(
            f"{len(candidates)} candidates but {len(text_embeddings)} text embeddings"
        )


def filter_outliers(
    candidates: Sequence[PromptCandidate],
    text_embeddings: Sequence[EmbeddingVector],
    image_embedding: EmbeddingVector,
    threshold: float = DEFAULT_THRESHOLD,
    comparator: Comparator = Comparator.GREATER,
) -> List[int]:
    """
    Find the candidates whose distance to the image satisfies the threshold.

    Distances are measured between unit-normalized embeddings.

    :param candidates: Candidate prompts.
    :param text_embeddings: Embedding of each candidate, in candidate order.
    :param image_embedding: Embedding of the original images.
    :param threshold: Distance threshold in [0, 2].
    :param comparator: Keep candidates strictly greater or strictly less than the threshold.
    :return: Sorted indices of the positive set.
    """
    if not 0.0 <= threshold <= 2.0:
        raise ValueError(f"Threshold must lie in [0, 2], got {threshold}")
    _check_embeddings(candidates, text_embeddings)
    image_unit = EmbeddingVector.unit(image_embedding.values)

    positive_set = []
    for candidate, text_embedding in zip(candidates, text_embeddings):
        distance = l2_distance(image_unit, EmbeddingVector.unit(text_embedding.values))
        keep = distance > threshold if comparator == Comparator.GREATER else distance < threshold
        if keep:
            positive_set.append(candidate.index)

    LOGGER.debug(
        "Filtered prompt candidates",
        candidates=len(candidates),
        positive=len(positive_set),
        threshold=threshold,
        comparator=comparator.value,
    )
    if not positive_set:
        raise EmptyPositiveSet(
            f"No candidate distance is {comparator.value} than {threshold}; "
            "use the naive fallback or change the comparator"
        )
    return sorted(positive_set)


def _batched_argmax(order: Sequence[int], scores: Dict[int, float], iterations: int) -> int:
    best = order[0]
    for batch in np.array_split(np.asarray(order), min(iterations, len(order))):
        batch_best = int(batch[int(np.argmax([scores[int(i)] for i in batch]))])
        if scores[batch_best] > scores[best]:
            best = batch_best
    return best


def select_best_prompt(
    candidates: Sequence[PromptCandidate],
    positive_set: Sequence[int],
    text_embeddings: Sequence[EmbeddingVector],
    image_embedding: EmbeddingVector,
    fallback: FallbackMode = FallbackMode.ERROR,
    search: PromptSearch = PromptSearch.EXHAUSTIVE,
    iterations: int = DEFAULT_ITERATIONS,
    text_embedder: Optional[Callable[[str], EmbeddingVector]] = None,
) -> PromptSelection:
    """
    Choose the member of the positive set most similar to the image.

    Ties go to the smallest candidate index. The least similar member is kept as the worst
    prompt.

    :param candidates: All candidate prompts.
    :param positive_set: Indices surviving outlier filtering.
    :param text_embeddings: Embedding of each candidate, in candidate order.
    :param image_embedding: Embedding of the original images.
    :param fallback: Raise on an empty positive set, or fall back to the naive prompt.
    :param search: Exhaustive scan or the iteration-wise batched search.
    :param iterations: Number of batches of the batched search.
    :param text_embedder: Embeds the naive prompt when falling back.
    :return: Selection.
    """
    _check_embeddings(candidates, text_embeddings)
    positive = sorted(set(positive_set))
    if not positive:
        if fallback == FallbackMode.ERROR:
            raise EmptyPositiveSet("Positive set is empty")
        return _naive_selection(candidates, image_embedding, text_embedder)

    scores = {i: cosine_similarity(image_embedding, text_embeddings[i]) for i in positive}
    if search == PromptSearch.BATCHED:
        best_index = _batched_argmax(positive, scores, iterations)
    else:
        best_index = positive[int(np.argmax([scores[i] for i in positive]))]
    worst_index = positive[int(np.argmin([scores[i] for i in positive]))]

    LOGGER.debug(
        "Selected prompt",
        best=candidates[best_index].text,
        best_score=scores[best_index],
        worst=candidates[worst_index].text,
        worst_score=scores[worst_index],
    )
    return PromptSelection(
        candidates=list(candidates),
        positive_set=positive,
        best=candidates[best_index],
        best_score=scores[best_index],
        worst=candidates[worst_index],
        worst_score=scores[worst_index],
        scores=scores,
    )


def _naive_selection(
    candidates: Sequence[PromptCandidate],
    image_embedding: EmbeddingVector,
    text_embedder: Optional[Callable[[str], EmbeddingVector]],
) -> PromptSelection:
    if not candidates:
        raise EmptyPositiveSet("No candidates to take the object word from")
    if text_embedder is None:
        raise EmptyPositiveSet("Positive set is empty and no text embedder was given")
    naive = PromptCandidate.naive(candidates[0].object_word)
    score = cosine_similarity(image_embedding, text_embedder(naive.text))
    LOGGER.warning("Positive set is empty, using naive prompt", prompt=naive.text)
    return PromptSelection(
        candidates=list(candidates),
        positive_set=[],
        best=naive,
        best_score=score,
        worst=naive,
        worst_score=score,
        fallback=True,
    )


class PromptService:
    """Builds the best prompt for a set of original images."""

    @inject.autoparams()
    def __init__(self, embedding_service: EmbeddingService, lexicon: Lexicon) -> None:
        """
        Initialize the service.

        :param embedding_service: Service to embed prompts and images with.
        :param lexicon: Lexicon to expand object words with.
        """
        self.embedding_service = embedding_service
        self.lexicon = lexicon

    def image_embedding(
        self, originals: Sequence[np.ndarray], mode: ImageEmbeddingMode
    ) -> EmbeddingVector:
        """
        Embed the original images.

        :param originals: Original good images.
        :param mode: Use the first original only, or the mean over all originals.
        :return: Normalized image embedding.
        """
        if not originals:
            raise EmptyInput("At least one original image is required")
        if mode == ImageEmbeddingMode.SINGLE:
            return self.embedding_service.embed_image(originals[0])
        return mean_embedding(self.embedding_service.embed_images(originals))

    def naive_prompt_embedding(self, object_word: str) -> EmbeddingVector:
        """Embed the naive prompt of an object."""
        return self.embedding_service.embed_text(PromptCandidate.naive(object_word).text)

    def generate(
        self, object_word: str, originals: Sequence[np.ndarray], config: PromptConfig
    ) -> PromptSelection:
        """
        Run keyword expansion, outlier filtering and best-prompt selection.

        :param object_word: Name of the object.
        :param originals: Original good images.
        :param config: Prompt configuration.
        :return: Selection.
        """
        expansion = expand_keywords(object_word, self.lexicon, config.t_max)
        candidates = build_candidates(object_word, expansion.words)
        text_embeddings = self.embedding_service.embed_texts([c.text for c in candidates])
        image_embedding = self.image_embedding(originals, config.image_embedding)
        LOGGER.info(
            "Scoring prompt candidates",
            object_word=object_word,
            candidates=len(candidates),
            fallback_words=expansion.fallback,
        )

        try:
            positive_set = filter_outliers(
                candidates, text_embeddings, image_embedding, config.threshold, config.comparator
            )
        except EmptyPositiveSet:
            if config.fallback == FallbackMode.ERROR:
                raise
            positive_set = []

        return select_best_prompt(
            candidates,
            positive_set,
            text_embeddings,
            image_embedding,
            fallback=config.fallback,
            search=config.search,
            iterations=config.iterations,
            text_embedder=self.embedding_service.embed_text,
        )
