"""Lexical databases used to expand an object word into related status words."""
from __future__ import annotations

import abc
from collections import defaultdict
from importlib import resources
from typing import Dict, Iterable, List, Tuple

import structlog

from varigen.errors import BackendUnavailable, WordNotInLexicon

LOGGER = structlog.get_logger(__name__)

SNAPSHOT_PACKAGE = "varigen.data"
SNAPSHOT_FILE = "lexicon.tsv"
RELATION_ORDER = ("synonym", "hypernym", "hyponym", "part_whole")

LexiconRow = Tuple[str, str, str]


def headword(word: str) -> str:
    """Normalize a word into the form used as a lexicon key."""
    return word.strip().lower().replace(" ", "_")


def surface_form(lemma: str) -> str:
    """Convert a lexicon lemma into the text that goes into a prompt."""
    return lemma.strip().lower().replace("_", " ")


class Lexicon(abc.ABC):
    """Source of words related to an object word."""

    source: str

    @abc.abstractmethod
    def related(self, word: str) -> Dict[str, List[str]]:
        """
        Get the words related to a word, grouped by relation.

        :param word: Word to look up.
        :return: Map of relation name to sorted related words.
        """


class SnapshotLexicon(Lexicon):
    """Lexicon backed by a frozen `headword<TAB>relation<TAB>related_word` file."""

    def __init__(self, rows: Iterable[LexiconRow], source: str = "snapshot") -> None:
        """
        Build the lexicon from snapshot rows.

        :param rows: (headword, relation, related word) triples.
        :param source: Identifier of where the rows came from.
        """
        self.source = source
        entries: Dict[str, Dict[str, set]] = defaultdict(lambda: defaultdict(set))
        for head, relation, word in rows:
            if relation not in RELATION_ORDER:
                raise ValueError(f"Unknown lexicon relation '{relation}' for '{head}'")
            entries[headword(head)][relation].add(surface_form(word))
        self._entries = {
            head: {relation: sorted(words) for relation, words in relations.items()}
            for head, relations in entries.items()
        }

    @classmethod
    def from_text(cls, contents: str, source: str = "snapshot") -> SnapshotLexicon:
        """
        Parse snapshot file contents.

        :param contents: UTF-8 text, one tab-separated triple per line.
        :param source: Identifier of where the text came from.
        :return: Lexicon.
        """
        rows = []
        for line_number, line in enumerate(contents.splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"Malformed lexicon line {line_number}: '{line}'")
            rows.append((fields[0], fields[1], fields[2]))
        return cls(rows, source)

    @classmethod
    def shipped(cls) -> SnapshotLexicon:
        """Load the snapshot shipped with the package."""
        contents = resources.files(SNAPSHOT_PACKAGE).joinpath(SNAPSHOT_FILE).read_text("utf-8")
        return cls.from_text(contents, source=f"{SNAPSHOT_PACKAGE}/{SNAPSHOT_FILE}")

    def related(self, word: str) -> Dict[str, List[str]]:
        """
        Get the words related to a word, grouped by relation.

        :param word: Word to look up.
        :return: Map of relation name to sorted related words.
        """
        entry = self._entries.get(headword(word))
        if entry is None:
            raise WordNotInLexicon(f"'{word}' is not in lexicon {self.source}")
        return {relation: list(entry.get(relation, [])) for relation in RELATION_ORDER}

    def headwords(self) -> List[str]:
        """List every headword in sorted order."""
        return sorted(self._entries)


class NltkLexicon(Lexicon):
    """Live WordNet lookups through nltk, used to rebuild the snapshot."""

    def __init__(self) -> None:
        """Load WordNet."""
        try:
            from nltk.corpus import wordnet as wn

            wn.ensure_loaded()
        except (ImportError, LookupError) as err:
            raise BackendUnavailable(
                "Rebuilding the lexicon needs the 'wordnet' extra and the nltk wordnet corpus"
            ) from err
        self._wn = wn
        self.source = "nltk-wordnet"

    def related(self, word: str) -> Dict[str, List[str]]:
        """
        Get the words related to a noun, grouped by relation.

        :param word: Word to look up.
        :return: Map of relation name to sorted related words.
        """
        synsets = self._wn.synsets(headword(word), pos=self._wn.NOUN)
        if not synsets:
            raise WordNotInLexicon(f"'{word}' is not in WordNet")

        def lemmas(related_synsets: Iterable) -> List[str]:
            return sorted({surface_form(n) for s in related_synsets for n in s.lemma_names()})

        part_whole = [
            related
            for synset in synsets
            for related in (
                synset.part_meronyms()
                + synset.substance_meronyms()
                + synset.part_holonyms()
                + synset.substance_holonyms()
            )
        ]
        return {
            "synonym": lemmas(synsets),
            "hypernym": lemmas(h for s in synsets for h in s.hypernyms()),
            "hyponym": lemmas(h for s in synsets for h in s.hyponyms()),
            "part_whole": lemmas(part_whole),
        }


def snapshot_rows(lexicon: Lexicon, words: Iterable[str]) -> List[LexiconRow]:
    """
    Dump a lexicon's entries for some words as sorted snapshot rows.

    Words missing from the lexicon are skipped with a warning.

    :param lexicon: Lexicon to dump.
    :param words: Headwords to include.
    :return: Sorted (headword, relation, related word) triples.
    """
    rows = set()
    for word in words:
        try:
            related = lexicon.related(word)
        except WordNotInLexicon:
            LOGGER.warning("Skipping word not in lexicon", word=word, source=lexicon.source)
            continue
        head = headword(word)
        for relation, related_words in related.items():
            rows.update((head, relation, w) for w in related_words if w != surface_form(head))
    return sorted(rows)


def format_snapshot(rows: Iterable[LexiconRow]) -> str:
    """Render snapshot rows as file contents."""
    return "".join(f"{head}\t{relation}\t{word}\n" for head, relation, word in sorted(rows))


def inflections(word: str) -> List[str]:
    """
    Get the plural of a singular English noun, or the singular of a plural one.

    :param word: Word to inflect.
    :return: Variants that differ from the word, in sorted order.
    """
    base = word.strip().lower()
    variants = set()
    if base.endswith("ies") and len(base) > 3:
        variants.add(base[:-3] + "y")
    elif base.endswith(("ses", "xes", "zes", "ches", "shes")):
        variants.add(base[:-2])
    elif base.endswith("s") and not base.endswith("ss") and len(base) > 1:
        variants.add(base[:-1])
    elif base.endswith("y") and len(base) > 1 and base[-2] not in "aeiou":
        variants.add(base[:-1] + "ies")
    elif base.endswith(("s", "x", "z", "ch", "sh")):
        variants.add(base + "es")
    else:
        variants.add(base + "s")
    variants.discard(base)
    return sorted(variants)
