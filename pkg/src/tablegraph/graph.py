"""Spatial page graphs: visibility edges, edge weights, node features, islands.

Two tokens are connected when they can see each other along an unobstructed
vertical or horizontal sight line, and each token keeps only its nearest
visible neighbor per direction (up/down/left/right).  Edge weights are the
per-page normalized gap distances: touching boxes weigh 1, the widest gap on
the page weighs 0.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import BBox, Page, Token, TokenLabel, dumps_json
from .reprs import ReprVocabulary

GRAPH_CACHE_FORMAT_VERSION = 1

#: Width of the fixed feature blocks: 9 geometric + 3 text stats + 1 image flag.
BASE_FEATURE_DIM = 13


@dataclass
class PageGraph:
    """Immutable-after-construction graph for one page.

    ``edges`` is an (E, 2) int array with u < v per row; ``weights`` aligns
    with it.  ``repr_dim``/``ext_dim`` record how the tail of each feature row
    splits, so feature vectors can be reassembled or padded downstream.
    """

    features: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    labels: tuple[TokenLabel, ...] | None = None
    repr_dim: int = 0
    ext_dim: int = 0
    page_no: int = 0
    page_width: float = 0.0
    page_height: float = 0.0
    _adjacency: list[list[tuple[int, float]]] | None = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.edges.shape[0] != self.weights.shape[0]:
            raise ValueError("edges and weights must align")
        if self.labels is not None:
            self.labels = tuple(self.labels)
            if len(self.labels) != self.n_nodes:
                raise ValueError("labels must parallel nodes")
        seen = set()
        for (u, v), w in zip(self.edges, self.weights):
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < v < self.n_nodes):
                raise ValueError(f"edge ({u},{v}) out of range or not normalized u<v")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"edge ({u},{v}) weight {w} outside [0,1]")

    @property
    def n_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def adjacency(self) -> list[list[tuple[int, float]]]:
        if self._adjacency is None:
            adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
            for (u, v), w in zip(self.edges, self.weights):
                adj[int(u)].append((int(v), float(w)))
                adj[int(v)].append((int(u), float(w)))
            self._adjacency = adj
        return self._adjacency

    def neighbors(self, node: int) -> list[tuple[int, float]]:
        return self.adjacency[node]

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])


# ---------------------------------------------------------------------------
# Visibility edges
# ---------------------------------------------------------------------------


def _has_sight_line(lo: float, hi: float, blockers: list[tuple[float, float]]) -> bool:
    """True when some x in the open interval (lo, hi) is covered by no blocker.

    Blockers are open intervals.  Merging only strictly-overlapping intervals
    keeps single-point gaps (two boxes that merely touch) see-through.
    """
    if not blockers:
        return True
    blockers = sorted(blockers)
    merged_lo, merged_hi = blockers[0]
    for s, e in blockers[1:]:
        if s < merged_hi:
            merged_hi = max(merged_hi, e)
        else:
            if merged_lo <= lo and merged_hi >= hi:
                return False
            merged_lo, merged_hi = s, e
    return not (merged_lo <= lo and merged_hi >= hi)


def _visible(boxes: Sequence[BBox], u: int, v: int, vertical: bool) -> bool:
    """Sight-line test between boxes u and v along one axis.

    For the vertical case the boxes must share a positive-width x interval;
    the open band between them is scanned for third boxes whose x coverage
    leaves no uncovered sight position.  Boxes that overlap along the axis
    (no band between them) are trivially visible.
    """
    a, b = boxes[u], boxes[v]
    if vertical:
        lo, hi = max(a.x1, b.x1), min(a.x2, b.x2)
        band_lo, band_hi = min(a.y2, b.y2), max(a.y1, b.y1)
    else:
        lo, hi = max(a.y1, b.y1), min(a.y2, b.y2)
        band_lo, band_hi = min(a.x2, b.x2), max(a.x1, b.x1)
    if hi <= lo:
        return False
    if band_hi <= band_lo:
        return True
    blockers: list[tuple[float, float]] = []
    for w, other in enumerate(boxes):
        if w == u or w == v:
            continue
        if vertical:
            span_lo, span_hi = other.x1, other.x2
            depth_lo, depth_hi = other.y1, other.y2
        else:
            span_lo, span_hi = other.y1, other.y2
            depth_lo, depth_hi = other.x1, other.x2
        if depth_lo < band_hi and depth_hi > band_lo and span_lo < hi and span_hi > lo:
            blockers.append((span_lo, span_hi))
    return _has_sight_line(lo, hi, blockers)


def _axis_gap(a: BBox, b: BBox, vertical: bool) -> float:
    if vertical:
        return max(a.y1, b.y1) - min(a.y2, b.y2)
    return max(a.x1, b.x1) - min(a.x2, b.x2)


def _comes_after(a: BBox, b: BBox, ia: int, ib: int, vertical: bool) -> bool:
    """Total order along an axis: b strictly after a (below / to the right)."""
    if vertical:
        ka, kb = (a.y1, a.y2, ia), (b.y1, b.y2, ib)
    else:
        ka, kb = (a.x1, a.x2, ia), (b.x1, b.x2, ib)
    return kb > ka


def build_visibility_edges(page: Page) -> list[tuple[int, int]]:
    """Visibility edges for a page: nearest visible neighbor per direction.

    For every token, candidates in each of the four directions are ordered by
    axis gap (overlapping boxes sort first via their negative gap) and the
    first candidate with a clear sight line becomes the neighbor for that
    direction.  The union over all tokens and directions, as undirected
    pairs, is returned sorted with u < v.
    """
    boxes = [t.bbox for t in page.tokens]
    n = len(boxes)
    edges: set[tuple[int, int]] = set()
    for u in range(n):
        for vertical in (True, False):
            forward: list[tuple[float, int]] = []
            backward: list[tuple[float, int]] = []
            for v in range(n):
                if v == u:
                    continue
                a, b = boxes[u], boxes[v]
                if vertical:
                    overlap = min(a.x2, b.x2) - max(a.x1, b.x1)
                else:
                    overlap = min(a.y2, b.y2) - max(a.y1, b.y1)
                if overlap <= 0:
                    continue
                gap = _axis_gap(a, b, vertical)
                if _comes_after(a, b, u, v, vertical):
                    forward.append((gap, v))
                else:
                    backward.append((gap, v))
            for candidates in (forward, backward):
                for _, v in sorted(candidates):
                    if _visible(boxes, u, v, vertical):
                        edges.add((min(u, v), max(u, v)))
                        break
    return sorted(edges)


def weight_edges(page: Page, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Weights per edge: 1 - gap / max page gap, gaps clamped to >= 0.

    Pairs that overlap in x get the vertical gap, remaining pairs the
    horizontal gap, mirroring how the edge was found.  When every gap is 0
    all weights are 1.
    """
    if len(edges) == 0:
        return np.zeros(0)
    boxes = [t.bbox for t in page.tokens]
    gaps = np.zeros(len(edges))
    for k, (u, v) in enumerate(edges):
        a, b = boxes[u], boxes[v]
        x_overlap = min(a.x2, b.x2) - max(a.x1, b.x1)
        gaps[k] = max(0.0, _axis_gap(a, b, vertical=x_overlap > 0))
    max_gap = gaps.max()
    if max_gap == 0.0:
        return np.ones(len(edges))
    return 1.0 - gaps / max_gap


# ---------------------------------------------------------------------------
# Node features
# ---------------------------------------------------------------------------


def text_stats(text: str) -> tuple[float, float, float]:
    """(letter, digit, symbol) fractions of a token's text; zeros when empty."""
    if not text:
        return (0.0, 0.0, 0.0)
    letters = sum(1 for c in text if c.isalpha())
    digits = sum(1 for c in text if c.isdigit())
    n = len(text)
    return (letters / n, digits / n, (n - letters - digits) / n)


def _geometric_features(token: Token, page: Page) -> list[float]:
    b = token.bbox
    w, h = page.width, page.height
    xc, yc = b.center
    return [
        b.x1 / w,
        b.y1 / h,
        b.x2 / w,
        b.y2 / h,
        b.width / w,
        b.height / h,
        xc / w,
        yc / h,
        b.area / (w * h),
    ]


def featurize(
    page: Page,
    labels: Sequence[TokenLabel] | None = None,
    vocab: ReprVocabulary | None = None,
    *,
    use_ext: bool = False,
) -> PageGraph:
    """Build the full PageGraph for a page.

    Feature rows are [geometric | text_stats | image_flag | repr | ext] with
    the repr block present only when a vocabulary is given and the ext block
    only when ``use_ext`` is set.  Image tokens get a zero repr block.  A
    tokens file that carries external embeddings on some tokens but not all
    is rejected.
    """
    n = len(page.tokens)
    with_ext = sum(1 for t in page.tokens if t.ext_embedding is not None)
    if 0 < with_ext < n:
        raise ValueError(
            f"page {page.page_no}: ext embeddings on {with_ext}/{n} tokens; "
            "mixed widths forbidden"
        )
    ext_dim = 0
    if use_ext:
        if with_ext != n or n == 0:
            raise ValueError(f"page {page.page_no}: ext features requested but absent")
        widths = {len(t.ext_embedding) for t in page.tokens}
        if len(widths) != 1:
            raise ValueError(f"page {page.page_no}: ext embedding widths differ: {sorted(widths)}")
        ext_dim = widths.pop()
    repr_dim = vocab.dim if vocab is not None else 0

    rows = np.zeros((n, BASE_FEATURE_DIM + repr_dim + ext_dim))
    for i, token in enumerate(page.tokens):
        row = _geometric_features(token, page)
        row.extend(text_stats(token.text))
        row.append(1.0 if token.is_image else 0.0)
        rows[i, :BASE_FEATURE_DIM] = row
        if vocab is not None and not token.is_image:
            rows[i, BASE_FEATURE_DIM : BASE_FEATURE_DIM + repr_dim] = vocab.lookup(token.text)
        if ext_dim:
            rows[i, BASE_FEATURE_DIM + repr_dim :] = token.ext_embedding

    edges = build_visibility_edges(page)
    weights = weight_edges(page, edges)
    return PageGraph(
        features=rows,
        edges=np.array(edges, dtype=int).reshape(-1, 2),
        weights=weights,
        labels=tuple(labels) if labels is not None else None,
        repr_dim=repr_dim,
        ext_dim=ext_dim,
        page_no=page.page_no,
        page_width=page.width,
        page_height=page.height,
    )


# ---------------------------------------------------------------------------
# Island pruning
# ---------------------------------------------------------------------------


def prune_islands(graph: PageGraph, k: int = 2) -> PageGraph:
    """Drop Text nodes farther than ``k`` hops from any differently-labeled node.

    Runs a multi-source BFS from every non-Text node; Text nodes whose
    distance exceeds ``k`` (including unreachable ones) are removed,
    surviving nodes are re-indexed and edge weights are kept as they were.
    Intended as a one-time training-set preprocessing step.
    """
    if graph.labels is None:
        raise ValueError("island pruning requires labels")
    n = graph.n_nodes
    dist = np.full(n, np.inf)
    queue: deque[int] = deque()
    for v, label in enumerate(graph.labels):
        if label is not TokenLabel.TEXT:
            dist[v] = 0
            queue.append(v)
    while queue:
        v = queue.popleft()
        for u, _ in graph.neighbors(v):
            if dist[u] == np.inf:
                dist[u] = dist[v] + 1
                queue.append(u)

    keep = [
        v
        for v, label in enumerate(graph.labels)
        if label is not TokenLabel.TEXT or dist[v] <= k
    ]
    remap = {old: new for new, old in enumerate(keep)}
    kept_edges = []
    kept_weights = []
    for (u, v), w in zip(graph.edges, graph.weights):
        if int(u) in remap and int(v) in remap:
            kept_edges.append((remap[int(u)], remap[int(v)]))
            kept_weights.append(float(w))
    return PageGraph(
        features=graph.features[keep],
        edges=np.array(kept_edges, dtype=int).reshape(-1, 2),
        weights=np.array(kept_weights),
        labels=tuple(graph.labels[v] for v in keep),
        repr_dim=graph.repr_dim,
        ext_dim=graph.ext_dim,
        page_no=graph.page_no,
        page_width=graph.page_width,
        page_height=graph.page_height,
    )


# ---------------------------------------------------------------------------
# Graph cache file
# ---------------------------------------------------------------------------


def save_graphs(doc_id: str, graphs: Sequence[PageGraph], path: str | Path) -> None:
    repr_dims = {g.repr_dim for g in graphs}
    ext_dims = {g.ext_dim for g in graphs}
    if len(repr_dims) > 1 or len(ext_dims) > 1:
        raise ValueError("all graphs in a cache must share repr/ext dims")
    data = {
        "format_version": GRAPH_CACHE_FORMAT_VERSION,
        "doc_id": doc_id,
        "repr_dim": repr_dims.pop() if repr_dims else 0,
        "ext_dim": ext_dims.pop() if ext_dims else 0,
        "pages": [
            {
                "page_no": g.page_no,
                "width": g.page_width,
                "height": g.page_height,
                "n_nodes": g.n_nodes,
                "feature_dim": g.feature_dim,
                "features": [float(x) for x in g.features.ravel()],
                "edges": [[int(u), int(v), float(w)] for (u, v), w in zip(g.edges, g.weights)],
                "labels": [l.value for l in g.labels] if g.labels is not None else None,
            }
            for g in graphs
        ],
    }
    Path(path).write_text(dumps_json(data), encoding="utf-8")


def load_graphs(path: str | Path) -> tuple[str, list[PageGraph]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != GRAPH_CACHE_FORMAT_VERSION:
        raise ValueError(f"unsupported graph cache version: {data.get('format_version')!r}")
    graphs = []
    for p in data["pages"]:
        n, d = int(p["n_nodes"]), int(p["feature_dim"])
        features = np.array(p["features"], dtype=float).reshape(n, d)
        triples = p["edges"]
        edges = np.array([[t[0], t[1]] for t in triples], dtype=int).reshape(-1, 2)
        weights = np.array([t[2] for t in triples], dtype=float)
        labels = (
            tuple(TokenLabel.from_name(name) for name in p["labels"])
            if p["labels"] is not None
            else None
        )
        graphs.append(
            PageGraph(
                features=features,
                edges=edges,
                weights=weights,
                labels=labels,
                repr_dim=int(data["repr_dim"]),
                ext_dim=int(data["ext_dim"]),
                page_no=int(p["page_no"]),
                page_width=float(p["width"]),
                page_height=float(p["height"]),
            )
        )
    return str(data["doc_id"]), graphs
