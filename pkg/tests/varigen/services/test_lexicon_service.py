"""Unit tests for lexicon_service.py."""
import pytest

import varigen.services.lexicon_service as under_test
from varigen.errors import WordNotInLexicon

SNAPSHOT = (
    "# headword\trelation\trelated_word\n"
    "hazelnut\tsynonym\tfilbert\n"
    "hazelnut\tsynonym\tcobnut\n"
    "hazelnut\tpart_whole\tshell\n"
    "metal_nut\thypernym\tFastener\n"
)


@pytest.fixture()
def lexicon():
    return under_test.SnapshotLexicon.from_text(SNAPSHOT)


class TestSnapshotLexicon:
    def test_related_should_group_and_sort_by_relation(self, lexicon):
        assert lexicon.related("Hazelnut") == {
            "synonym": ["cobnut", "filbert"],
            "hypernym": [],
            "hyponym": [],
            "part_whole": ["shell"],
        }

    def test_multi_word_headwords(self, lexicon):
        assert lexicon.related("metal nut")["hypernym"] == ["fastener"]
        assert lexicon.headwords() == ["hazelnut", "metal_nut"]

    def test_unknown_word_should_raise(self, lexicon):
        with pytest.raises(WordNotInLexicon):
            lexicon.related("zipper")

    @pytest.mark.parametrize("line", ["hazelnut\tsynonym", "hazelnut\tantonym\tshell"])
    def test_malformed_snapshot_should_raise(self, line):
        with pytest.raises(ValueError):
            under_test.SnapshotLexicon.from_text(line)

    def test_shipped_snapshot_should_cover_dataset_categories(self):
        shipped = under_test.SnapshotLexicon.shipped()

        assert "cobnut" in shipped.related("hazelnut")["synonym"]
        assert "bottle" in shipped.headwords()


class TestSnapshotRows:
    def test_rows_should_skip_unknown_words_and_the_headword(self):
        source = under_test.SnapshotLexicon.from_text(
            "hazelnut\tsynonym\thazelnut\nhazelnut\tsynonym\tfilbert\nhazelnut\thypernym\tnut\n"
        )

        rows = under_test.snapshot_rows(source, ["hazelnut", "unknown"])

        assert rows == [("hazelnut", "hypernym", "nut"), ("hazelnut", "synonym", "filbert")]

    def test_format_snapshot_round_trips_through_from_text(self, lexicon):
        rows = under_test.snapshot_rows(lexicon, ["hazelnut"])

        reparsed = under_test.SnapshotLexicon.from_text(under_test.format_snapshot(rows))

        assert reparsed.related("hazelnut") == lexicon.related("hazelnut")


class TestInflections:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("hazelnut", ["hazelnuts"]),
            ("nuts", ["nut"]),
            ("cherry", ["cherries"]),
            ("berries", ["berry"]),
            ("box", ["boxes"]),
            ("boxes", ["box"]),
            ("glass", ["glasses"]),
        ],
    )
    def test_inflections(self, word, expected):
        assert under_test.inflections(word) == expected
