"""Annotation-XML ingestion: the handwritten fixture, strict rejection of
malformed variants, and round-trip equality."""

from pathlib import Path

import pytest

from osfa.manga109 import (
    BookAnnotation,
    Manga109FormatError,
    parse_annotations,
    serialize_annotations,
)

FIXTURE = Path(__file__).parent / "fixtures" / "mini_book.xml"


@pytest.fixture(scope="module")
def book() -> BookAnnotation:
    return parse_annotations(FIXTURE)


class TestFixtureParsing:
    def test_two_characters_three_faces(self, book):
        assert len(book.characters) == 2
        assert book.face_count() == 3
        assert book.character_ids == ["c001", "c002"]
        assert book.title == "MiniBook"

    def test_page_geometry_retained(self, book):
        assert [(p.index, p.width, p.height) for p in book.pages] == [
            (0, 800, 1200), (1, 800, 1200)]

    def test_faces_keyed_by_character(self, book):
        by_char = book.instances_by_character()
        assert len(by_char["c001"]) == 2
        assert len(by_char["c002"]) == 1
        assert by_char["c002"][0] == (0, (430, 515, 560, 660))

    def test_non_face_elements_ignored(self, book):
        # text/body/frame elements exist in the fixture but produce nothing
        assert {f.face_id for p in book.pages for f in p.faces} == {"f001", "f002", "f003"}


class TestRoundTrip:
    def test_serialize_parse_identity(self, book):
        assert parse_annotations(serialize_annotations(book)) == book

    def test_reserialize_stable(self, book):
        once = serialize_annotations(book)
        assert serialize_annotations(parse_annotations(once)) == once


def _mutate(old: str, new: str) -> str:
    text = FIXTURE.read_text()
    assert old in text, f"fixture does not contain {old!r}"
    return text.replace(old, new, 1)


class TestStrictRejection:
    BAD_CASES = [
        # (mutation old, new, expected path fragment)
        ('xmin="120"', 'ymin2="120"', "face[0]"),                      # missing attribute
        ('xmin="305"', 'xmin="abc"', "page[1]/face[0]"),               # non-integer
        ('xmin="120" ymin="200" xmax="260"', 'xmin="270" ymin="200" xmax="260"', "face[0]"),  # xmin >= xmax
        ('character="c002"', 'character="c999"', "face[1]"),           # dangling character id
        ('width="800" height="1200">\n      <face id="f001"', 'width="-800" height="1200">\n      <face id="f001"', "page[0]"),  # negative geometry
        ('xmax="560"', 'xmax="9999"', "face[1]"),                      # box outside page bounds
        ('id="c002"', 'id="c001"', "character[1]"),                    # duplicate character id
        ('index="1"', 'index="0"', "page[1]"),                         # duplicate page index
    ]

    @pytest.mark.parametrize("old,new,fragment", BAD_CASES,
                             ids=[c[2] + ":" + c[0][:12] for c in BAD_CASES])
    def test_mutation_rejected_with_path(self, old, new, fragment):
        with pytest.raises(Manga109FormatError) as exc:
            parse_annotations(_mutate(old, new))
        assert fragment in exc.value.element_path

    def test_not_xml_rejected(self):
        with pytest.raises(Manga109FormatError, match="well-formed"):
            parse_annotations("<book><characters>")

    def test_wrong_root_rejected(self):
        with pytest.raises(Manga109FormatError, match="book"):
            parse_annotations("<manga></manga>")

    def test_missing_characters_rejected(self):
        with pytest.raises(Manga109FormatError, match="characters"):
            parse_annotations("<book><pages></pages></book>")

    def test_missing_pages_rejected(self):
        with pytest.raises(Manga109FormatError, match="pages"):
            parse_annotations('<book><characters><character id="a" name="A"/></characters></book>')

    def test_negative_extent_rejected(self):
        text = _mutate('xmin="430" ymin="515" xmax="560" ymax="660"',
                       'xmin="430" ymin="660" xmax="560" ymax="515"')
        with pytest.raises(Manga109FormatError, match="degenerate"):
            parse_annotations(text)
