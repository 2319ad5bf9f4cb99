"""Core domain types shared by the whole pipeline.

Coordinate convention: origin at the top-left corner of the page, x grows
rightward, y grows downward, units are PDF points.  "Above" therefore means
smaller y.

Carrier types (BBox, Token, Page) accept whatever values they are given;
``validate_page`` is the single enforcement point and reports violations
instead of raising, so that malformed input files can be diagnosed in full.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

TOKENS_FORMAT_VERSION = 1

#: Closed set of region class names accepted in annotation files.
REGION_CLASSES = frozenset(
    {
        "title",
        "text",
        "list",
        "table",
        "image",
        "row",
        "column",
        "table_header",
        "projected_header",
        "table_cell",
        "grid_cell",
        "caption",
        "other",
    }
)


class TokenLabel(Enum):
    """Token classes; the member value is the serialized name.

    The declaration order is the class index order used everywhere a numeric
    class id is needed (classifier outputs, confusion matrices, tie rules).
    """

    TEXT = "Text"
    TITLE = "Title"
    LIST = "List"
    CAPTION = "Caption"
    TABLE_CELL = "TableCell"
    TABLE_HEADER = "TableHeader"
    TABLE_PROJECTED_HEADER = "TableProjectedHeader"
    IMAGE = "Image"
    OTHER = "Other"

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]

    @classmethod
    def from_name(cls, name: str) -> "TokenLabel":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown token label name: {name!r}") from None

    @classmethod
    def from_index(cls, index: int) -> "TokenLabel":
        return LABEL_ORDER[index]


LABEL_ORDER: tuple[TokenLabel, ...] = tuple(TokenLabel)
_LABEL_INDEX = {label: i for i, label in enumerate(LABEL_ORDER)}

#: Labels that mark a token as part of a table.
TABLE_LABELS = frozenset(
    {TokenLabel.TABLE_CELL, TokenLabel.TABLE_HEADER, TokenLabel.TABLE_PROJECTED_HEADER}
)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in page coordinates (x1,y1 top-left, x2,y2 bottom-right)."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def intersection_area(self, other: "BBox") -> float:
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x1, other.x1),
            min(self.y1, other.y1),
            max(self.x2, other.x2),
            max(self.y2, other.y2),
        )

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Token:
    """One word-level PDF object.

    ``ext_embedding`` optionally carries a precomputed word-embedding vector
    taken verbatim from the tokens file; the pipeline never computes these
    itself.
    """

    id: int
    text: str
    bbox: BBox
    block_id: int
    is_image: bool = False
    ext_embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RegionAnnotation:
    """Ground-truth region from an annotation file.

    ``region_class`` must be one of the 13 closed names; anything else is
    rejected at construction so bad annotation files fail loudly.
    """

    bbox: BBox
    region_class: str
    page_no: int

    def __post_init__(self) -> None:
        if self.region_class not in REGION_CLASSES:
            raise ValueError(f"unknown region class: {self.region_class!r}")


@dataclass(frozen=True)
class Page:
    """An ordered collection of tokens on a page of known size."""

    page_no: int
    width: float
    height: float
    tokens: tuple[Token, ...] = ()

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError(
                f"page {self.page_no}: width/height must be positive, "
                f"got {self.width}x{self.height}"
            )
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class Document:
    """A tokens file in memory: the unit of (de)serialization."""

    doc_id: str
    pages: tuple[Page, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pages", tuple(self.pages))


# Tolerance, in points, for token boxes that poke past the page edge.
PAGE_EDGE_TOLERANCE = 1.0


def validate_page(page: Page) -> list[str]:
    """Check every token invariant on ``page`` and describe the failures.

    Returns an empty list iff the page is valid.  Never raises: a page with
    ten bad tokens yields ten messages, each naming the token id and the rule
    it breaks.
    """
    violations: list[str] = []
    seen_ids = set()
    for pos, token in enumerate(page.tokens):
        where = f"token {token.id}"
        b = token.bbox
        coords = (b.x1, b.y1, b.x2, b.y2)
        if not all(math.isfinite(c) for c in coords):
            violations.append(f"{where}: bbox coordinates must be finite")
            continue
        if any(c < 0 for c in coords):
            violations.append(f"{where}: bbox coordinates must be >= 0")
        if b.x1 > b.x2:
            violations.append(f"{where}: bbox x1 > x2")
        if b.y1 > b.y2:
            violations.append(f"{where}: bbox y1 > y2")
        if (
            b.x1 < -PAGE_EDGE_TOLERANCE
            or b.y1 < -PAGE_EDGE_TOLERANCE
            or b.x2 > page.width + PAGE_EDGE_TOLERANCE
            or b.y2 > page.height + PAGE_EDGE_TOLERANCE
        ):
            violations.append(f"{where}: bbox outside page bounds")
        if not token.text and not token.is_image:
            violations.append(f"{where}: empty text on a non-image token")
        if "\n" in token.text:
            violations.append(f"{where}: text contains a newline")
        if token.id != pos:
            violations.append(
                f"{where}: ids must be contiguous from 0 (found at position {pos})"
            )
        if token.id in seen_ids:
            violations.append(f"{where}: duplicate token id")
        seen_ids.add(token.id)
    return violations


def validate_document(doc: Document) -> list[str]:
    violations = []
    for page in doc.pages:
        violations.extend(f"page {page.page_no}, {v}" for v in validate_page(page))
    return violations


# ---------------------------------------------------------------------------
# Tokens file (de)serialization
# ---------------------------------------------------------------------------


def _token_to_dict(token: Token) -> dict:
    d = {
        "id": token.id,
        "text": token.text,
        "bbox": token.bbox.as_list(),
        "block_id": token.block_id,
        "is_image": token.is_image,
    }
    if token.ext_embedding is not None:
        d["ext_embedding"] = list(token.ext_embedding)
    return d


def _token_from_dict(d: dict) -> Token:
    ext = d.get("ext_embedding")
    return Token(
        id=int(d["id"]),
        text=str(d["text"]),
        bbox=BBox(*(float(c) for c in d["bbox"])),
        block_id=int(d["block_id"]),
        is_image=bool(d["is_image"]),
        ext_embedding=None if ext is None else tuple(float(v) for v in ext),
    )


def document_to_dict(doc: Document) -> dict:
    return {
        "format_version": TOKENS_FORMAT_VERSION,
        "doc_id": doc.doc_id,
        "pages": [
            {
                "page_no": page.page_no,
                "width": page.width,
                "height": page.height,
                "tokens": [_token_to_dict(t) for t in page.tokens],
            }
            for page in doc.pages
        ],
    }


def document_from_dict(data: dict) -> Document:
    version = data.get("format_version")
    if version != TOKENS_FORMAT_VERSION:
        raise ValueError(f"unsupported tokens file version: {version!r}")
    pages = tuple(
        Page(
            page_no=int(p["page_no"]),
            width=float(p["width"]),
            height=float(p["height"]),
            tokens=tuple(_token_from_dict(t) for t in p["tokens"]),
        )
        for p in data["pages"]
    )
    return Document(doc_id=str(data["doc_id"]), pages=pages)


def save_document(doc: Document, path: str | Path) -> None:
    Path(path).write_text(dumps_json(document_to_dict(doc)), encoding="utf-8")


def load_document(path: str | Path) -> Document:
    return document_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Annotation file (de)serialization
# ---------------------------------------------------------------------------


def regions_to_dict(doc_id: str, regions: Sequence[RegionAnnotation]) -> dict:
    return {
        "doc_id": doc_id,
        "regions": [
            {"page_no": r.page_no, "class": r.region_class, "bbox": r.bbox.as_list()}
            for r in regions
        ],
    }


def regions_from_dict(data: dict) -> tuple[str, list[RegionAnnotation]]:
    regions = [
        RegionAnnotation(
            bbox=BBox(*(float(c) for c in r["bbox"])),
            region_class=str(r["class"]),
            page_no=int(r["page_no"]),
        )
        for r in data["regions"]
    ]
    return str(data["doc_id"]), regions


def save_regions(doc_id: str, regions: Sequence[RegionAnnotation], path: str | Path) -> None:
    Path(path).write_text(dumps_json(regions_to_dict(doc_id, regions)), encoding="utf-8")


def load_regions(path: str | Path) -> tuple[str, list[RegionAnnotation]]:
    return regions_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def regions_for_page(regions: Iterable[RegionAnnotation], page_no: int) -> list[RegionAnnotation]:
    return [r for r in regions if r.page_no == page_no]


def dumps_json(data: dict) -> str:
    """Canonical JSON used by every writer: stable key order, no whitespace drift.

    Byte-identical output for equal inputs is part of the determinism contract.
    """
    return json.dumps(data, sort_keys=True, separators=(",", ": "), indent=1) + "\n"
