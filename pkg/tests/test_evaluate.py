import random

import numpy as np
import pytest

from tablegraph.evaluate import (
    CLASS_COLORS,
    TABLE_BLOCK_COLOR,
    BlockPrediction,
    apply_block_vote,
    compute_metrics,
    group_blocks,
    load_metrics,
    render_overlay,
    save_metrics,
)
from tablegraph.model import BBox, Page, Token, TokenLabel

T = TokenLabel


def page_of_blocks(block_ids, boxes=None):
    tokens = []
    for i, bid in enumerate(block_ids):
        box = boxes[i] if boxes else (10.0 * i, 0.0, 10.0 * i + 8, 12.0)
        tokens.append(Token(id=i, text=f"t{i}", bbox=BBox(*box), block_id=bid))
    return Page(page_no=0, width=612.0, height=792.0, tokens=tuple(tokens))


class TestGroupBlocks:
    def test_majority_wins(self):
        page = page_of_blocks([0, 0, 0])
        blocks = group_blocks(page, [T.TEXT, T.TEXT, T.TITLE])
        assert len(blocks) == 1
        assert blocks[0].label is T.TEXT
        assert blocks[0].vote_fraction == pytest.approx(2 / 3)

    def test_tie_breaks_by_label_priority(self):
        page = page_of_blocks([0, 0])
        blocks = group_blocks(page, [T.TEXT, T.TABLE_CELL])
        assert blocks[0].label is T.TABLE_CELL  # table beats plain text
        blocks = group_blocks(page, [T.TABLE_CELL, T.TABLE_HEADER])
        assert blocks[0].label is T.TABLE_HEADER

    def test_members_partition_tokens(self):
        rng = random.Random(0)
        block_ids = [rng.randint(0, 3) for _ in range(12)]
        page = page_of_blocks(block_ids)
        predictions = [rng.choice(list(T)) for _ in range(12)]
        blocks = group_blocks(page, predictions)
        seen = sorted(i for b in blocks for i in b.members)
        assert seen == list(range(12))
        for block in blocks:
            assert {page.tokens[i].block_id for i in block.members} == {block.block_id}

    def test_bbox_is_union_of_members(self):
        page = page_of_blocks([5, 5], boxes=[(0, 0, 10, 10), (20, 5, 30, 40)])
        blocks = group_blocks(page, [T.TEXT, T.TEXT])
        assert blocks[0].bbox == BBox(0, 0, 30, 40)

    def test_blocks_sorted_by_id(self):
        page = page_of_blocks([7, 2, 2])
        blocks = group_blocks(page, [T.TEXT] * 3)
        assert [b.block_id for b in blocks] == [2, 7]

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="predictions"):
            group_blocks(page_of_blocks([0, 0]), [T.TEXT])

    def test_block_prediction_validation(self):
        with pytest.raises(ValueError, match="members"):
            BlockPrediction(0, BBox(0, 0, 1, 1), T.TEXT, (), 1.0)
        with pytest.raises(ValueError, match="fraction"):
            BlockPrediction(0, BBox(0, 0, 1, 1), T.TEXT, (0,), 0.0)


class TestApplyBlockVote:
    def test_minority_tokens_flip(self):
        page = page_of_blocks([0, 0, 0, 1])
        smoothed = apply_block_vote(page, [T.TABLE_CELL, T.TABLE_CELL, T.TEXT, T.TITLE])
        assert smoothed == [T.TABLE_CELL, T.TABLE_CELL, T.TABLE_CELL, T.TITLE]

    def test_unanimous_blocks_unchanged(self):
        page = page_of_blocks([0, 1, 1])
        labels = [T.CAPTION, T.LIST, T.LIST]
        assert apply_block_vote(page, labels) == labels


class TestComputeMetrics:
    def test_identity_is_perfect(self):
        gold = [T.TEXT, T.TITLE, T.TABLE_CELL, T.TABLE_CELL]
        report = compute_metrics(gold, gold)
        assert report.accuracy == 1.0
        assert report.score(T.TABLE_CELL).f1 == 1.0
        assert report.score(T.TABLE_CELL).support == 2
        assert report.total == 4

    def test_two_class_hand_example(self):
        gold = [T.TEXT, T.TEXT, T.TITLE]
        predicted = [T.TEXT, T.TITLE, T.TITLE]
        report = compute_metrics(gold, predicted)
        assert report.accuracy == pytest.approx(2 / 3)
        text = report.score(T.TEXT)
        assert text.precision == 1.0
        assert text.recall == pytest.approx(1 / 2)
        assert text.f1 == pytest.approx(2 / 3)
        title = report.score(T.TITLE)
        assert title.precision == pytest.approx(1 / 2)
        assert title.recall == 1.0
        assert title.f1 == pytest.approx(2 / 3)

    def test_absent_class_scores_zero(self):
        score = compute_metrics([T.TEXT], [T.TEXT]).score(T.IMAGE)
        assert (score.precision, score.recall, score.f1, score.support) == (0, 0, 0, 0)

    def test_confusion_orientation(self):
        report = compute_metrics([T.TEXT], [T.TITLE])
        assert report.confusion[T.TEXT.index, T.TITLE.index] == 1
        assert report.confusion.sum() == 1

    def test_trace_equals_hits(self):
        rng = random.Random(3)
        gold = [rng.choice(list(T)) for _ in range(200)]
        predicted = [rng.choice(list(T)) for _ in range(200)]
        report = compute_metrics(gold, predicted)
        hits = sum(g is p for g, p in zip(gold, predicted))
        assert np.trace(report.confusion) == hits
        assert report.accuracy == pytest.approx(hits / 200)
        assert report.confusion.sum() == report.total == 200

    def test_order_equivariant(self):
        rng = random.Random(4)
        gold = [rng.choice(list(T)) for _ in range(50)]
        predicted = [rng.choice(list(T)) for _ in range(50)]
        report = compute_metrics(gold, predicted)
        order = list(range(50))
        rng.shuffle(order)
        shuffled = compute_metrics([gold[i] for i in order], [predicted[i] for i in order])
        assert np.array_equal(report.confusion, shuffled.confusion)
        assert report.accuracy == shuffled.accuracy

    def test_errors(self):
        with pytest.raises(ValueError, match="vs"):
            compute_metrics([T.TEXT], [T.TEXT, T.TEXT])
        with pytest.raises(ValueError, match="no labels"):
            compute_metrics([], [])

    def test_report_file_round_trip(self, tmp_path):
        report = compute_metrics([T.TEXT, T.TITLE], [T.TEXT, T.TEXT])
        path = tmp_path / "metrics.json"
        save_metrics(report, path)
        data = load_metrics(path)
        assert data["format_version"] == 1
        assert data["accuracy"] == pytest.approx(0.5)
        assert data["total"] == 2
        assert data["per_class"]["Title"]["support"] == 1
        assert data["confusion"][T.TITLE.index][T.TEXT.index] == 1

    def test_text_table_mentions_cell_scores(self):
        report = compute_metrics([T.TABLE_CELL], [T.TABLE_CELL])
        text = report.to_text()
        assert "cell F1" in text and "1.0000" in text
        assert "TableHeader" in text and text.endswith("\n")


class TestRenderOverlay:
    def test_empty_page_is_just_the_frame(self):
        page = Page(page_no=0, width=612.0, height=792.0, tokens=())
        svg = render_overlay(page)
        assert svg.count("<rect") == 1
        assert 'viewBox="0 0 612.00 792.00"' in svg
        assert svg.startswith("<svg") and svg.endswith("</svg>\n")

    def test_token_view_uses_class_colors(self):
        page = page_of_blocks([0], boxes=[(10, 20, 60, 35)])
        svg = render_overlay(page, predictions=[T.TABLE_CELL])
        assert svg.count("<rect") == 2
        assert CLASS_COLORS[T.TABLE_CELL] in svg
        assert 'x="10.00" y="20.00" width="50.00" height="15.00"' in svg

    def test_block_view_paints_table_blocks_yellow(self):
        page = page_of_blocks([0, 1], boxes=[(0, 0, 10, 10), (20, 0, 30, 10)])
        blocks = group_blocks(page, [T.TABLE_CELL, T.CAPTION])
        svg = render_overlay(page, blocks=blocks)
        assert TABLE_BLOCK_COLOR in svg
        assert CLASS_COLORS[T.CAPTION] in svg
        assert CLASS_COLORS[T.TABLE_CELL] not in svg

    def test_deterministic(self):
        page = page_of_blocks([0, 0, 1])
        labels = [T.TEXT, T.TITLE, T.LIST]
        assert render_overlay(page, predictions=labels) == render_overlay(
            page, predictions=labels
        )

    def test_both_views_rejected(self):
        page = page_of_blocks([0])
        blocks = group_blocks(page, [T.TEXT])
        with pytest.raises(ValueError, match="not both"):
            render_overlay(page, predictions=[T.TEXT], blocks=blocks)

    def test_prediction_count_checked(self):
        page = page_of_blocks([0, 1])
        with pytest.raises(ValueError, match="2 tokens"):
            render_overlay(page, predictions=[T.TEXT])

    def test_every_class_has_a_distinct_color(self):
        assert set(CLASS_COLORS) == set(T)
        assert len(set(CLASS_COLORS.values())) == len(T)
        assert TABLE_BLOCK_COLOR not in CLASS_COLORS.values()
