"""Labeled pages: region-to-token label assignment, splits, synthetic corpus.

Joins tokens files with region annotation files to label every token, applies
the proximity-based caption fixup, produces deterministic train/val/test
splits, and generates small synthetic pages so the whole pipeline can train
and evaluate without any external corpus.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from pathlib import Path

from .model import (
    TABLE_LABELS,
    BBox,
    Document,
    Page,
    RegionAnnotation,
    Token,
    TokenLabel,
    dumps_json,
)
from .reprs import CellTable

logger = logging.getLogger(__name__)

LABELS_FORMAT_VERSION = 1

#: Region classes that translate to token labels, in descending priority.
#: Structural helpers (row, column, grid_cell, table, other) never label tokens.
LABEL_PRIORITY: tuple[tuple[str, TokenLabel], ...] = (
    ("projected_header", TokenLabel.TABLE_PROJECTED_HEADER),
    ("table_header", TokenLabel.TABLE_HEADER),
    ("table_cell", TokenLabel.TABLE_CELL),
    ("caption", TokenLabel.CAPTION),
    ("title", TokenLabel.TITLE),
    ("list", TokenLabel.LIST),
    ("text", TokenLabel.TEXT),
    ("image", TokenLabel.IMAGE),
)
_PRIORITY_RANK = {name: rank for rank, (name, _) in enumerate(LABEL_PRIORITY)}

#: A region must cover at least this fraction of a token's area to label it.
OVERLAP_THRESHOLD = 0.5

#: Maximum vertical gap, in points, between a caption block and its figure/table.
CAPTION_GAP = 30.0


@dataclass(frozen=True)
class LabeledPage:
    """A page with one TokenLabel per token."""

    page: Page
    labels: tuple[TokenLabel, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != len(self.page.tokens):
            raise ValueError(
                f"page {self.page.page_no}: {len(self.labels)} labels for "
                f"{len(self.page.tokens)} tokens"
            )

    def with_labels(self, labels: Sequence[TokenLabel]) -> "LabeledPage":
        return LabeledPage(page=self.page, labels=tuple(labels))


def has_table(labeled: LabeledPage) -> bool:
    return any(label in TABLE_LABELS for label in labeled.labels)


# ---------------------------------------------------------------------------
# Label assignment
# ---------------------------------------------------------------------------


def assign_labels(page: Page, regions: Sequence[RegionAnnotation]) -> LabeledPage:
    """Give every token exactly one label from the region annotations.

    A region qualifies for a token when it covers at least half the token's
    area; among qualifying regions the highest-priority class wins.  Tokens
    with no qualifying region fall back to Other, and image tokens are always
    labeled Image.  Region order never matters.
    """
    for region in regions:
        if region.page_no != page.page_no:
            raise ValueError(
                f"region on page {region.page_no} passed to page {page.page_no}"
            )
    labels: list[TokenLabel] = []
    for token in page.tokens:
        if token.is_image:
            labels.append(TokenLabel.IMAGE)
            continue
        area = token.bbox.area
        best: int | None = None
        for region in regions:
            rank = _PRIORITY_RANK.get(region.region_class)
            if rank is None:
                continue
            if area > 0:
                covered = token.bbox.intersection_area(region.bbox) / area
            else:
                # Degenerate boxes carry no area; fall back to the center point.
                covered = 1.0 if region.bbox.contains_point(*token.bbox.center) else 0.0
            if covered >= OVERLAP_THRESHOLD and (best is None or rank < best):
                best = rank
        labels.append(TokenLabel.OTHER if best is None else LABEL_PRIORITY[best][1])
    return LabeledPage(page=page, labels=tuple(labels))


def _block_bbox(tokens: Sequence[Token], indices: Sequence[int]) -> BBox:
    box = tokens[indices[0]].bbox
    for i in indices[1:]:
        box = box.union(tokens[i].bbox)
    return box


def _caption_candidate(block: BBox, region: BBox, *, below: bool, gap: float) -> bool:
    if below:
        dist = block.y1 - region.y2
    else:
        dist = region.y1 - block.y2
    if not (0.0 <= dist <= gap):
        return False
    if block.width <= 0:
        return False
    overlap = min(block.x2, region.x2) - max(block.x1, region.x1)
    return overlap / block.width >= 0.5


def caption_heuristic(
    labeled: LabeledPage,
    regions: Sequence[RegionAnnotation],
    gap: float = CAPTION_GAP,
) -> LabeledPage:
    """Relabel Text blocks that hug an image or table as Caption.

    A block qualifies when its bbox (union of its still-Text tokens) sits at
    most ``gap`` points below the region with at least 50% of the block's
    width overlapping it horizontally; when no block qualifies below a
    region, the same rule is tried above it.
    """
    page = labeled.page
    block_members: dict[int, list[int]] = {}
    for i, (token, label) in enumerate(zip(page.tokens, labeled.labels)):
        if label is TokenLabel.TEXT:
            block_members.setdefault(token.block_id, []).append(i)
    if not block_members:
        return labeled

    labels = list(labeled.labels)
    claimed: set[int] = set()
    anchors = [r for r in regions if r.region_class in ("image", "table")]
    for region in anchors:
        open_blocks = {
            bid: _block_bbox(page.tokens, members)
            for bid, members in block_members.items()
            if bid not in claimed
        }
        hits = [
            bid
            for bid, box in open_blocks.items()
            if _caption_candidate(box, region.bbox, below=True, gap=gap)
        ]
        if not hits:
            hits = [
                bid
                for bid, box in open_blocks.items()
                if _caption_candidate(box, region.bbox, below=False, gap=gap)
            ]
        for bid in hits:
            claimed.add(bid)
            for i in block_members[bid]:
                labels[i] = TokenLabel.CAPTION
    return labeled.with_labels(labels)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions plus the shuffle seed."""

    train: float = 0.9
    val: float = 0.05
    test: float = 0.05
    seed: int = 0
    drop_tableless_train: bool = False

    def __post_init__(self) -> None:
        fractions = (self.train, self.val, self.test)
        if any(f <= 0 for f in fractions):
            raise ValueError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")


def split_corpus(
    pages: Sequence[LabeledPage], spec: SplitSpec
) -> tuple[list[LabeledPage], list[LabeledPage], list[LabeledPage]]:
    """Deterministically shuffle and slice pages into train/val/test.

    Sizes are floor(fraction * n) for train and val with the remainder going
    to test.  With ``drop_tableless_train`` set, pages without table-class
    tokens are routed to the test split and only tabled pages fill train and
    val, so the three splits always partition the input.
    """
    n = len(pages)
    if n < 3:
        raise ValueError(f"need at least 3 pages to make three splits, got {n}")
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    n_train = math.floor(spec.train * n)
    n_val = math.floor(spec.val * n)
    if spec.drop_tableless_train:
        tabled = [i for i in order if has_table(pages[i])]
        tableless = [i for i in order if not has_table(pages[i])]
        train_idx = tabled[:n_train]
        val_idx = tabled[n_train : n_train + n_val]
        test_idx = tabled[n_train + n_val :] + tableless
        if not train_idx:
            logger.warning("train split is empty: no pages contain table tokens")
    else:
        train_idx = order[:n_train]
        val_idx = order[n_train : n_train + n_val]
        test_idx = order[n_train + n_val :]
    return (
        [pages[i] for i in train_idx],
        [pages[i] for i in val_idx],
        [pages[i] for i in test_idx],
    )


# ---------------------------------------------------------------------------
# Labeled corpus file
# ---------------------------------------------------------------------------


def save_labels(
    doc_id: str,
    labeled_pages: Sequence[LabeledPage],
    path: str | Path,
    tokens_file: str = "",
) -> None:
    data = {
        "format_version": LABELS_FORMAT_VERSION,
        "doc_id": doc_id,
        "tokens_file": tokens_file,
        "pages": [
            {
                "page_no": lp.page.page_no,
                "labels": [label.value for label in lp.labels],
            }
            for lp in labeled_pages
        ],
    }
    Path(path).write_text(dumps_json(data), encoding="utf-8")


def load_labels(path: str | Path) -> tuple[str, str, dict[int, list[TokenLabel]]]:
    """Read a labels file -> (doc_id, tokens_file, labels keyed by page_no)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != LABELS_FORMAT_VERSION:
        raise ValueError(f"unsupported labels file version: {data.get('format_version')!r}")
    by_page = {
        int(p["page_no"]): [TokenLabel.from_name(name) for name in p["labels"]]
        for p in data["pages"]
    }
    return str(data["doc_id"]), str(data.get("tokens_file", "")), by_page


def apply_labels(
    doc: Document, by_page: Mapping[int, Sequence[TokenLabel]]
) -> list[LabeledPage]:
    """Join a document with a loaded labels mapping."""
    labeled = []
    for page in doc.pages:
        if page.page_no not in by_page:
            raise ValueError(f"labels file has no entry for page {page.page_no}")
        labeled.append(LabeledPage(page=page, labels=tuple(by_page[page.page_no])))
    return labeled


# ---------------------------------------------------------------------------
# Synthetic pages
# ---------------------------------------------------------------------------

PAGE_WIDTH = 612.0
PAGE_HEIGHT = 792.0
_MARGIN = 54.0
_CONTENT_WIDTH = PAGE_WIDTH - 2 * _MARGIN

_WORDS = (
    "the", "model", "graph", "layout", "results", "method", "pages", "tokens",
    "training", "structure", "analysis", "values", "report", "summary",
    "figure", "section", "data", "metrics", "evaluation", "approach",
    "features", "nodes", "edges", "labels", "over", "with", "several",
)
_HEADER_WORDS = (
    "Model", "Size", "Accuracy", "Score", "Count", "Rate", "Error", "Time",
    "Name", "Total", "Mean", "Index",
)


class _PageDraft:
    """Mutable accumulator used only while generating one synthetic page."""

    def __init__(self, page_no: int) -> None:
        self.page_no = page_no
        self.tokens: list[Token] = []
        self.labels: list[TokenLabel] = []
        self.regions: list[RegionAnnotation] = []
        self.next_block = 0
        self.y = _MARGIN

    def new_block(self) -> int:
        self.next_block += 1
        return self.next_block - 1

    def add_token(
        self,
        text: str,
        box: BBox,
        label: TokenLabel,
        block_id: int,
        is_image: bool = False,
    ) -> None:
        self.tokens.append(
            Token(
                id=len(self.tokens),
                text=text,
                bbox=box,
                block_id=block_id,
                is_image=is_image,
            )
        )
        self.labels.append(label)

    def add_region(self, region_class: str, box: BBox, pad: float = 2.0) -> None:
        self.regions.append(
            RegionAnnotation(
                bbox=BBox(box.x1 - pad, box.y1 - pad, box.x2 + pad, box.y2 + pad),
                region_class=region_class,
                page_no=self.page_no,
            )
        )

    def span_of(self, first: int) -> BBox:
        box = self.tokens[first].bbox
        for token in self.tokens[first + 1 :]:
            box = box.union(token.bbox)
        return box


def _wrap_words(
    draft: _PageDraft,
    words: Sequence[str],
    label: TokenLabel,
    *,
    char_w: float,
    height: float,
    word_gap: float,
    line_gap: float,
    block_id: int | None = None,
    indent: float = 0.0,
) -> None:
    """Lay words onto left-aligned lines starting at the draft's y cursor."""
    if block_id is None:
        block_id = draft.new_block()
    x = _MARGIN + indent
    for word in words:
        width = max(char_w, char_w * len(word))
        if x + width > PAGE_WIDTH - _MARGIN:
            x = _MARGIN + indent
            draft.y += height + line_gap
        draft.add_token(word, BBox(x, draft.y, x + width, draft.y + height), label, block_id)
        x += width + word_gap
    draft.y += height


def _numeric_cell(rng: random.Random) -> str:
    kind = rng.randrange(5)
    if kind == 0:
        return f"{rng.uniform(0, 100):.1f}"
    if kind == 1:
        return f"±{rng.uniform(0, 5):.2f}"
    if kind == 2:
        return f"{rng.uniform(0, 1):.3f}"
    if kind == 3:
        return str(rng.randrange(1, 2000))
    return f"{rng.uniform(0, 9):.1f}({rng.uniform(0, 9):.1f})"


def _emit_table(draft: _PageDraft, rng: random.Random) -> CellTable:
    """One table: header row, optional projected-header row, numeric body."""
    n_cols = rng.randrange(3, 6)
    n_body = rng.randrange(3, 7)
    projected = rng.random() < 0.45
    col_gap = 12.0
    col_w = (_CONTENT_WIDTH - col_gap * (n_cols - 1)) / n_cols
    row_h = 16.0
    text_h = 10.0
    char_w = 5.5
    top = draft.y
    grid: list[list[str]] = []

    def cell_box(row_y: float, j: int, text: str) -> BBox:
        x = _MARGIN + j * (col_w + col_gap)
        width = min(col_w, char_w * len(text))
        y = row_y + (row_h - text_h) / 2
        return BBox(x, y, x + width, y + text_h)

    def row_span(row_y: float) -> BBox:
        return BBox(_MARGIN, row_y + (row_h - text_h) / 2 - 1,
                    _MARGIN + _CONTENT_WIDTH, row_y + (row_h + text_h) / 2 + 1)

    header = [rng.choice(_HEADER_WORDS) for _ in range(n_cols)]
    grid.append(header)
    block = draft.new_block()
    for j, text in enumerate(header):
        draft.add_token(text, cell_box(draft.y, j, text), TokenLabel.TABLE_HEADER, block)
    draft.add_region("table_header", row_span(draft.y), pad=0.0)
    draft.add_region("table_cell", row_span(draft.y), pad=0.0)
    draft.add_region("row", row_span(draft.y), pad=0.0)
    draft.y += row_h

    if projected:
        phrase = [rng.choice(_WORDS).capitalize() for _ in range(rng.randrange(2, 4))]
        grid.append([" ".join(phrase)] + [""] * (n_cols - 1))
        block = draft.new_block()
        x = _MARGIN
        y = draft.y + (row_h - text_h) / 2
        for word in phrase:
            width = char_w * len(word)
            draft.add_token(
                word, BBox(x, y, x + width, y + text_h),
                TokenLabel.TABLE_PROJECTED_HEADER, block,
            )
            x += width + 4.0
        draft.add_region("projected_header", row_span(draft.y), pad=0.0)
        draft.add_region("table_cell", row_span(draft.y), pad=0.0)
        draft.add_region("row", row_span(draft.y), pad=0.0)
        draft.y += row_h

    for _ in range(n_body):
        row = [_numeric_cell(rng) for _ in range(n_cols)]
        grid.append(row)
        for j, text in enumerate(row):
            block = draft.new_block()
            box = cell_box(draft.y, j, text)
            draft.add_token(text, box, TokenLabel.TABLE_CELL, block)
            draft.add_region("table_cell", box, pad=1.0)
            draft.add_region("grid_cell", box, pad=1.0)
        draft.add_region("row", row_span(draft.y), pad=0.0)
        draft.y += row_h

    bottom = draft.y
    for j in range(n_cols):
        x = _MARGIN + j * (col_w + col_gap)
        draft.add_region("column", BBox(x, top, x + col_w, bottom), pad=0.0)
    draft.add_region("table", BBox(_MARGIN, top, _MARGIN + _CONTENT_WIDTH, bottom), pad=2.0)
    return CellTable(grid=tuple(tuple(row) for row in grid))


def _synthesize_page(rng: random.Random, page_no: int) -> tuple[
    Page, tuple[TokenLabel, ...], list[RegionAnnotation], CellTable
]:
    draft = _PageDraft(page_no)

    first = len(draft.tokens)
    title = [rng.choice(_WORDS).capitalize() for _ in range(rng.randrange(3, 6))]
    _wrap_words(draft, title, TokenLabel.TITLE, char_w=9.0, height=18.0, word_gap=6.0, line_gap=6.0)
    draft.add_region("title", draft.span_of(first))
    draft.y += 16.0

    for _ in range(rng.randrange(1, 3)):
        first = len(draft.tokens)
        words = [rng.choice(_WORDS) for _ in range(rng.randrange(25, 45))]
        _wrap_words(draft, words, TokenLabel.TEXT, char_w=5.5, height=11.0, word_gap=4.0, line_gap=4.0)
        draft.add_region("text", draft.span_of(first))
        draft.y += 14.0

    if rng.random() < 0.3:
        first = len(draft.tokens)
        block = draft.new_block()
        for _ in range(rng.randrange(3, 5)):
            items = ["•"] + [rng.choice(_WORDS) for _ in range(rng.randrange(2, 5))]
            x = _MARGIN + 12.0
            for word in items:
                width = 5.5 * len(word)
                draft.add_token(
                    word, BBox(x, draft.y, x + width, draft.y + 11.0),
                    TokenLabel.LIST, block,
                )
                x += width + 4.0
            draft.y += 15.0
        draft.add_region("list", draft.span_of(first))
        draft.y += 10.0

    if rng.random() < 0.3:
        width = rng.uniform(160.0, 240.0)
        height = rng.uniform(90.0, 130.0)
        x = _MARGIN + rng.uniform(0.0, _CONTENT_WIDTH - width)
        box = BBox(x, draft.y, x + width, draft.y + height)
        draft.add_token("", box, TokenLabel.IMAGE, draft.new_block(), is_image=True)
        draft.add_region("image", box)
        draft.y += height + 14.0

    table = _emit_table(draft, rng)
    draft.y += 8.0

    first = len(draft.tokens)
    caption = ["Table", f"{page_no + 1}:"] + [
        rng.choice(_WORDS) for _ in range(rng.randrange(3, 6))
    ]
    _wrap_words(draft, caption, TokenLabel.CAPTION, char_w=5.0, height=10.0, word_gap=4.0, line_gap=4.0)
    draft.add_region("caption", draft.span_of(first))

    number = str(page_no + 1)
    x = (PAGE_WIDTH - 5.5 * len(number)) / 2
    draft.add_token(
        number, BBox(x, PAGE_HEIGHT - 40.0, x + 5.5 * len(number), PAGE_HEIGHT - 30.0),
        TokenLabel.OTHER, draft.new_block(),
    )

    page = Page(
        page_no=page_no,
        width=PAGE_WIDTH,
        height=PAGE_HEIGHT,
        tokens=tuple(draft.tokens),
    )
    return page, tuple(draft.labels), draft.regions, table


def generate_synthetic_corpus(
    n: int, seed: int
) -> tuple[list[tuple[Page, LabeledPage, list[RegionAnnotation]]], list[CellTable]]:
    """Generate ``n`` labeled pages plus the cell grids of their tables.

    Every page carries a title, one or two paragraphs, one table (header row,
    numeric body, sometimes a projected-header row), a caption under the
    table, a bottom page number, and sometimes a list or an image block.
    Output is fully determined by ``(n, seed)``.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 pages, got {n}")
    rng = random.Random(seed)
    triples = []
    tables = []
    for page_no in range(n):
        page, labels, regions, table = _synthesize_page(rng, page_no)
        triples.append((page, LabeledPage(page=page, labels=labels), regions))
        tables.append(table)
    return triples, tables


def generate_synthetic_pages(
    n: int, seed: int
) -> list[tuple[Page, LabeledPage, list[RegionAnnotation]]]:
    """Synthetic page triples (page, labeled page, regions); see the corpus variant."""
    return generate_synthetic_corpus(n, seed)[0]
