"""Strict reader for Manga109-style annotation XML (face boxes only).

Expected shape::

    <book title="...">
      <characters>
        <character id="c1" name="..."/>
      </characters>
      <pages>
        <page index="0" width="W" height="H">
          <face id="f1" character="c1" xmin=".." ymin=".." xmax=".." ymax=".."/>
          <text .../>   <!-- frame/text/body elements are ignored -->
        </page>
      </pages>
    </book>

The parser is deliberately unforgiving: a missing attribute, a non-integer
coordinate, a degenerate or out-of-bounds box, or a face referencing an
unknown character id is an error carrying the element path (for example
``book/pages/page[1]/face[0]``), never a silent repair.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path


class Manga109FormatError(ValueError):
    def __init__(self, element_path: str, message: str):
        self.element_path = element_path
        super().__init__(f"{element_path}: {message}")


@dataclass(frozen=True)
class FaceBox:
    face_id: str
    character: str
    xmin: int
    ymin: int
    xmax: int
    ymax: int


@dataclass(frozen=True)
class PageAnnotation:
    index: int
    width: int
    height: int
    faces: tuple[FaceBox, ...]


@dataclass(frozen=True)
class BookAnnotation:
    title: str
    characters: tuple[tuple[str, str], ...]   # (id, name), in document order
    pages: tuple[PageAnnotation, ...]

    @property
    def character_ids(self) -> list[str]:
        return [cid for cid, _ in self.characters]

    def face_count(self) -> int:
        return sum(len(p.faces) for p in self.pages)

    def instances_by_character(self) -> dict[str, list[tuple[int, tuple[int, int, int, int]]]]:
        """character id -> [(page index, box)], covering every face."""
        out: dict[str, list[tuple[int, tuple[int, int, int, int]]]] = {
            cid: [] for cid in self.character_ids}
        for page in self.pages:
            for f in page.faces:
                out[f.character].append((page.index, (f.xmin, f.ymin, f.xmax, f.ymax)))
        return out


def _require(elem: ET.Element, attr: str, path: str) -> str:
    value = elem.get(attr)
    if value is None:
        raise Manga109FormatError(path, f"missing attribute {attr!r}")
    return value


def _require_int(elem: ET.Element, attr: str, path: str) -> int:
    raw = _require(elem, attr, path)
    try:
        return int(raw)
    except ValueError:
        raise Manga109FormatError(path, f"attribute {attr!r} must be an integer, got {raw!r}") from None


def parse_annotations(source) -> BookAnnotation:
    """Parse one annotation file (path or XML string) into a BookAnnotation."""
    text = source if isinstance(source, str) and source.lstrip().startswith("<") else Path(source).read_text()
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise Manga109FormatError("(document)", f"not well-formed XML: {e}") from None
    if root.tag != "book":
        raise Manga109FormatError(root.tag, f"root element must be 'book', got {root.tag!r}")

    chars_elem = root.find("characters")
    if chars_elem is None:
        raise Manga109FormatError("book", "missing <characters> element")
    characters: list[tuple[str, str]] = []
    known: set[str] = set()
    for i, ch in enumerate(chars_elem.findall("character")):
        path = f"book/characters/character[{i}]"
        cid = _require(ch, "id", path)
        name = _require(ch, "name", path)
        if cid in known:
            raise Manga109FormatError(path, f"duplicate character id {cid!r}")
        known.add(cid)
        characters.append((cid, name))

    pages_elem = root.find("pages")
    if pages_elem is None:
        raise Manga109FormatError("book", "missing <pages> element")
    pages: list[PageAnnotation] = []
    seen_idx: set[int] = set()
    for pi, pg in enumerate(pages_elem.findall("page")):
        ppath = f"book/pages/page[{pi}]"
        index = _require_int(pg, "index", ppath)
        width = _require_int(pg, "width", ppath)
        height = _require_int(pg, "height", ppath)
        if index in seen_idx:
            raise Manga109FormatError(ppath, f"duplicate page index {index}")
        seen_idx.add(index)
        if width <= 0 or height <= 0:
            raise Manga109FormatError(ppath, f"non-positive page geometry {width}x{height}")
        faces: list[FaceBox] = []
        for fi, fe in enumerate(pg.findall("face")):
            fpath = f"{ppath}/face[{fi}]"
            fid = _require(fe, "id", fpath)
            character = _require(fe, "character", fpath)
            if character not in known:
                raise Manga109FormatError(fpath, f"reference to unknown character id {character!r}")
            xmin = _require_int(fe, "xmin", fpath)
            ymin = _require_int(fe, "ymin", fpath)
            xmax = _require_int(fe, "xmax", fpath)
            ymax = _require_int(fe, "ymax", fpath)
            if xmin >= xmax or ymin >= ymax:
                raise Manga109FormatError(
                    fpath, f"degenerate box ({xmin},{ymin},{xmax},{ymax}): need xmin < xmax and ymin < ymax")
            if xmin < 0 or ymin < 0 or xmax > width or ymax > height:
                raise Manga109FormatError(
                    fpath, f"box ({xmin},{ymin},{xmax},{ymax}) outside page bounds {width}x{height}")
            faces.append(FaceBox(face_id=fid, character=character,
                                 xmin=xmin, ymin=ymin, xmax=xmax, ymax=ymax))
        pages.append(PageAnnotation(index=index, width=width, height=height, faces=tuple(faces)))

    return BookAnnotation(title=root.get("title", ""), characters=tuple(characters), pages=tuple(pages))


def serialize_annotations(book: BookAnnotation) -> str:
    """Inverse of :func:`parse_annotations`; parse(serialize(b)) == b."""
    root = ET.Element("book", {"title": book.title})
    chars = ET.SubElement(root, "characters")
    for cid, name in book.characters:
        ET.SubElement(chars, "character", {"id": cid, "name": name})
    pages = ET.SubElement(root, "pages")
    for page in book.pages:
        pe = ET.SubElement(pages, "page", {"index": str(page.index),
                                           "width": str(page.width),
                                           "height": str(page.height)})
        for f in page.faces:
            ET.SubElement(pe, "face", {"id": f.face_id, "character": f.character,
                                       "xmin": str(f.xmin), "ymin": str(f.ymin),
                                       "xmax": str(f.xmax), "ymax": str(f.ymax)})
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
