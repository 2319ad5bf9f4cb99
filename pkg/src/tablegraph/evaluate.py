"""Post-processing and scoring: block voting, metrics, SVG overlays."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LABEL_PRIORITY
from .model import LABEL_ORDER, TABLE_LABELS, BBox, Page, TokenLabel, dumps_json

METRICS_FORMAT_VERSION = 1

#: Tie-break order for block votes: the region-priority order, Other last.
VOTE_ORDER: tuple[TokenLabel, ...] = tuple(label for _, label in LABEL_PRIORITY) + (
    TokenLabel.OTHER,
)
_VOTE_RANK = {label: rank for rank, label in enumerate(VOTE_ORDER)}


@dataclass(frozen=True)
class BlockPrediction:
    """A block of tokens labeled with their majority class."""

    block_id: int
    bbox: BBox
    label: TokenLabel
    members: tuple[int, ...]
    vote_fraction: float

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError(f"block {self.block_id} has no members")
        if not (0.0 < self.vote_fraction <= 1.0):
            raise ValueError(f"block {self.block_id}: vote fraction {self.vote_fraction}")


def group_blocks(
    page: Page, predictions: Sequence[TokenLabel]
) -> list[BlockPrediction]:
    """Group token predictions by block id and majority-vote a block label.

    Vote ties resolve by the same priority order used for labeling.  Block
    boxes are tight unions of member token boxes; blocks from an extractor
    may overlap, which is reported as-is, never repaired.
    """
    if len(predictions) != len(page.tokens):
        raise ValueError(
            f"{len(predictions)} predictions for {len(page.tokens)} tokens"
        )
    members: dict[int, list[int]] = {}
    for i, token in enumerate(page.tokens):
        members.setdefault(token.block_id, []).append(i)
    blocks = []
    for block_id in sorted(members):
        ids = members[block_id]
        counts: dict[TokenLabel, int] = {}
        for i in ids:
            counts[predictions[i]] = counts.get(predictions[i], 0) + 1
        top = max(counts.values())
        label = min(
            (lab for lab, c in counts.items() if c == top),
            key=lambda lab: _VOTE_RANK[lab],
        )
        box = page.tokens[ids[0]].bbox
        for i in ids[1:]:
            box = box.union(page.tokens[i].bbox)
        blocks.append(
            BlockPrediction(
                block_id=block_id,
                bbox=box,
                label=label,
                members=tuple(ids),
                vote_fraction=top / len(ids),
            )
        )
    return blocks


def apply_block_vote(
    page: Page, predictions: Sequence[TokenLabel]
) -> list[TokenLabel]:
    """Token labels after replacing each token's label with its block's vote."""
    smoothed = list(predictions)
    for block in group_blocks(page, predictions):
        for i in block.members:
            smoothed[i] = block.label
    return smoothed


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: dict[TokenLabel, ClassScore]
    confusion: np.ndarray
    total: int

    def score(self, label: TokenLabel) -> ClassScore:
        return self.per_class[label]

    def to_dict(self) -> dict:
        return {
            "format_version": METRICS_FORMAT_VERSION,
            "accuracy": self.accuracy,
            "total": self.total,
            "per_class": {
                label.value: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for label, s in self.per_class.items()
            },
            "confusion": [[int(c) for c in row] for row in self.confusion],
        }

    def to_text(self) -> str:
        lines = [
            f"tokens        {self.total}",
            f"accuracy      {self.accuracy:.4f}",
            f"cell F1       {self.per_class[TokenLabel.TABLE_CELL].f1:.4f}",
            f"cell-h F1     {self.per_class[TokenLabel.TABLE_HEADER].f1:.4f}",
            "",
            f"{'class':<22}{'prec':>8}{'rec':>8}{'f1':>8}{'support':>9}",
        ]
        for label in LABEL_ORDER:
            s = self.per_class[label]
            lines.append(
                f"{label.value:<22}{s.precision:>8.4f}{s.recall:>8.4f}"
                f"{s.f1:>8.4f}{s.support:>9d}"
            )
        return "\n".join(lines) + "\n"


def compute_metrics(
    gold: Sequence[TokenLabel], predicted: Sequence[TokenLabel]
) -> MetricsReport:
    """Multiclass accuracy, per-class precision/recall/F1, confusion matrix.

    The confusion matrix is indexed [gold class, predicted class].  A class
    with no gold or predicted occurrences scores 0 with support 0.
    """
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    if not gold:
        raise ValueError("no labels to score")
    n_classes = len(LABEL_ORDER)
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    for g, p in zip(gold, predicted):
        confusion[g.index, p.index] += 1
    per_class = {}
    for label in LABEL_ORDER:
        i = label.index
        tp = int(confusion[i, i])
        support = int(confusion[i].sum())
        predicted_n = int(confusion[:, i].sum())
        precision = tp / predicted_n if predicted_n else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassScore(precision, recall, f1, support)
    accuracy = float(np.trace(confusion)) / len(gold)
    return MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        confusion=confusion,
        total=len(gold),
    )


def save_metrics(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(dumps_json(report.to_dict()), encoding="utf-8")


def load_metrics(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# SVG overlay
# ---------------------------------------------------------------------------

#: Fill colors per token class for overlay rendering.
CLASS_COLORS: dict[TokenLabel, str] = {
    TokenLabel.TEXT: "#e53935",  # red
    TokenLabel.TITLE: "#43a047",  # green
    TokenLabel.LIST: "#1a237e",  # dark blue
    TokenLabel.CAPTION: "#81d4fa",  # light blue
    TokenLabel.TABLE_CELL: "#f48fb1",  # pink
    TokenLabel.TABLE_HEADER: "#fb8c00",  # orange
    TokenLabel.TABLE_PROJECTED_HEADER: "#8d6e63",  # brown
    TokenLabel.IMAGE: "#7b1fa2",  # purple
    TokenLabel.OTHER: "#9e9e9e",  # grey
}

#: Whole table blocks render yellow in the block-level view.
TABLE_BLOCK_COLOR = "#fdd835"


def _rect(box: BBox, color: str, opacity: float) -> str:
    return (
        f'<rect x="{box.x1:.2f}" y="{box.y1:.2f}" '
        f'width="{box.width:.2f}" height="{box.height:.2f}" '
        f'fill="{color}" fill-opacity="{opacity:.2f}" '
        f'stroke="{color}" stroke-width="0.5"/>'
    )


def render_overlay(
    page: Page,
    predictions: Sequence[TokenLabel] | None = None,
    blocks: Sequence[BlockPrediction] | None = None,
) -> str:
    """One SVG document: the page frame plus one rectangle per token or block.

    Token view fills each token box with its class color; block view fills
    each block box, with table-class blocks in yellow.  Output depends only
    on the inputs, so identical calls yield identical bytes.
    """
    if predictions is not None and blocks is not None:
        raise ValueError("pass predictions or blocks, not both")
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {page.width:.2f} {page.height:.2f}" '
        f'width="{page.width:.2f}" height="{page.height:.2f}">',
        f'<rect x="0" y="0" width="{page.width:.2f}" height="{page.height:.2f}" '
        f'fill="white" stroke="black" stroke-width="1"/>',
    ]
    if blocks is not None:
        for block in blocks:
            color = (
                TABLE_BLOCK_COLOR if block.label in TABLE_LABELS
                else CLASS_COLORS[block.label]
            )
            body.append(_rect(block.bbox, color, 0.45))
    elif predictions is not None:
        if len(predictions) != len(page.tokens):
            raise ValueError(
                f"{len(predictions)} predictions for {len(page.tokens)} tokens"
            )
        for token, label in zip(page.tokens, predictions):
            body.append(_rect(token.bbox, CLASS_COLORS[label], 0.5))
    body.append("</svg>")
    return "\n".join(body) + "\n"
