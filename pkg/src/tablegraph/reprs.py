"""Representation embeddings for table-cell text.

Token text is first normalized into a compact *representation*: letters
collapse to ``w``, digits to ``x``, runs of the same character deduplicate,
symbols survive as themselves ("Precision-Recall" -> "w-w", "12.5" -> "x.x").
The most frequent representations are clustered into prototype exemplars with
affinity propagation over their Levenshtein distance matrix, and an embedding
vector per prototype is trained with skip-gram negative sampling over
table-cell visit patterns.  Any token text can then be embedded by mapping it
to its (nearest) prototype.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EMBEDDINGS_FORMAT_VERSION = 1

_COLLAPSE_RUNS = re.compile(r"(.)\1+", re.DOTALL)


def word_to_repr(word: str) -> str:
    """Map a word to its representation string.

    Every Unicode letter becomes ``w``, every Unicode digit becomes ``x``,
    then each maximal run of identical characters collapses to a single
    occurrence.  The result never contains two consecutive identical
    characters and is idempotent under re-application.
    """
    if not word:
        raise ValueError("word must be non-empty")
    mapped = "".join(
        "w" if ch.isalpha() else "x" if ch.isdigit() else ch for ch in word
    )
    return _COLLAPSE_RUNS.sub(r"\1", mapped)


def rank_representations(cells: Iterable[str], limit: int) -> list[tuple[str, int]]:
    """Count representations over a stream of cell strings and keep the top ``limit``.

    Ties are broken lexicographically so the ranking is deterministic.  Empty
    cell strings (e.g. the blank corner of a header table) are skipped.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    counts: Counter[str] = Counter()
    for cell in cells:
        if not cell:
            continue
        counts[word_to_repr(cell)] += 1
    if not counts:
        raise ValueError("no cells")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < limit:
        logger.warning(
            "only %d distinct representations available (requested %d)",
            len(ranked),
            limit,
        )
    return ranked[:limit]


# ---------------------------------------------------------------------------
# Levenshtein distances
# ---------------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert/delete/substitute) between two strings."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            )
        previous = current
    return previous[-1]


def levenshtein_matrix(reprs: Sequence[str]) -> np.ndarray:
    """Symmetric distance matrix between all pairs of representation strings."""
    if not reprs:
        raise ValueError("representation list must be non-empty")
    n = len(reprs)
    dist = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            d = levenshtein(reprs[i], reprs[j])
            dist[i, j] = d
            dist[j, i] = d
    return dist


# ---------------------------------------------------------------------------
# Affinity propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApResult:
    exemplars: np.ndarray
    converged: bool
    n_iter: int


def affinity_propagation(
    dist: np.ndarray,
    *,
    damping: float = 0.7,
    max_iter: int = 500,
    stable_iter: int = 15,
) -> ApResult:
    """Pick exemplar indices from a distance matrix by affinity propagation.

    Similarity is the negated distance, the shared preference is the median
    off-diagonal similarity.  Messages are damped; the run converges when the
    exemplar set is unchanged for ``stable_iter`` consecutive iterations.  On
    non-convergence the current exemplars are returned with ``converged``
    False and a logged warning.
    """
    D = np.asarray(dist, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(D, D.T):
        raise ValueError("distance matrix must be symmetric")
    if not np.allclose(np.diagonal(D), 0.0):
        raise ValueError("distance matrix must have a zero diagonal")
    n = D.shape[0]
    if n == 1:
        return ApResult(np.array([0]), True, 0)

    S = -D
    off_diagonal = ~np.eye(n, dtype=bool)
    preference = np.median(S[off_diagonal])
    S = S.copy()
    np.fill_diagonal(S, preference)

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)
    exemplars = np.array([], dtype=int)
    stable = 0
    it = 0
    for it in range(1, max_iter + 1):
        # Responsibilities: r(i,k) = s(i,k) - max_{k' != k} [a(i,k') + s(i,k')]
        AS = A + S
        best = np.argmax(AS, axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = np.max(AS, axis=1)
        R_new = S - first[:, None]
        R_new[rows, best] = S[rows, best] - second
        R = damping * R + (1.0 - damping) * R_new

        # Availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        Rp = np.maximum(R, 0.0)
        np.fill_diagonal(Rp, np.diagonal(R))
        A_new = Rp.sum(axis=0)[None, :] - Rp
        diag = np.diagonal(A_new).copy()
        A_new = np.minimum(A_new, 0.0)
        np.fill_diagonal(A_new, diag)
        A = damping * A + (1.0 - damping) * A_new

        # A point is an exemplar when it would assign itself to itself.  An
        # empty set never counts as stable: early iterations legitimately
        # have no self-assignments while messages are still warming up.
        choice = np.argmax(A + R, axis=1)
        current = np.flatnonzero(choice == rows)
        if current.size > 0 and np.array_equal(current, exemplars):
            stable += 1
            if stable >= stable_iter:
                return ApResult(exemplars, True, it)
        else:
            stable = 0
            exemplars = current

    if exemplars.size == 0:
        # No self-assigning point after max_iter: fall back to the medoid.
        exemplars = np.array([int(np.argmin(D.sum(axis=1)))])
    logger.warning("affinity propagation did not converge after %d iterations", max_iter)
    return ApResult(exemplars, False, it)


# ---------------------------------------------------------------------------
# Table visit patterns
# ---------------------------------------------------------------------------

PATTERN_MODES = ("headers", "rhombus", "linear")


@dataclass(frozen=True)
class CellTable:
    """Rectangular grid of cell strings, header row/column included, 0-based."""

    grid: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        grid = tuple(tuple(row) for row in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ValueError("table must have at least one row")
        widths = {len(row) for row in grid}
        if len(widths) != 1:
            raise ValueError(f"table rows have mixed lengths: {sorted(widths)}")

    @property
    def n_rows(self) -> int:
        return len(self.grid)

    @property
    def n_cols(self) -> int:
        return len(self.grid[0])

    def cell(self, i: int, j: int) -> str:
        return self.grid[i][j]


@dataclass(frozen=True)
class PatternWindow:
    """One sliding-window visit: cell indices in pattern order.

    ``center_pos`` is the position of the target cell within ``cells`` after
    out-of-range positions were dropped (it is 2 whenever nothing was
    dropped before it).
    """

    center: tuple[int, int]
    cells: tuple[tuple[int, int], ...]
    center_pos: int


def _window_template(i: int, j: int, mode: str, rhombus_uses_diagonal: bool) -> list[tuple[int, int]]:
    if mode == "headers":
        return [(i, 0), (i, j - 1), (i, j), (i - 1, j), (0, j)]
    if mode == "linear":
        return [(i, j - 2), (i, j - 1), (i, j), (i, j + 1), (i, j + 2)]
    if mode == "rhombus":
        last = (i + 1, j + 1) if rhombus_uses_diagonal else (i, j + 1)
        return [(i, j - 1), (i - 1, j), (i, j), (i + 1, j), last]
    raise ValueError(f"unknown pattern mode: {mode!r} (expected one of {PATTERN_MODES})")


def extract_patterns(
    table: CellTable,
    mode: str,
    *,
    rhombus_uses_diagonal: bool = False,
) -> list[PatternWindow]:
    """Emit a 5-cell visit window for every interior cell of ``table``.

    Interior means row >= 1 and column >= 1, so the header row/column only
    ever appear as context.  Window positions that fall outside the grid are
    dropped.  The rhombus default is the plus-shape; the
    ``rhombus_uses_diagonal`` flag switches its last position to the
    down-right diagonal neighbor.
    """
    windows: list[PatternWindow] = []
    for i in range(1, table.n_rows):
        for j in range(1, table.n_cols):
            template = _window_template(i, j, mode, rhombus_uses_diagonal)
            kept = [
                (r, c)
                for r, c in template
                if 0 <= r < table.n_rows and 0 <= c < table.n_cols
            ]
            windows.append(
                PatternWindow(
                    center=(i, j),
                    cells=tuple(kept),
                    center_pos=kept.index((i, j)),
                )
            )
    return windows


# ---------------------------------------------------------------------------
# Vocabulary and lookup
# ---------------------------------------------------------------------------


def _nearest_index(repr_string: str, prototypes: Sequence[str]) -> int:
    """Index of the Levenshtein-nearest prototype; ties go to the lowest index."""
    best = 0
    best_d = None
    for idx, proto in enumerate(prototypes):
        d = levenshtein(repr_string, proto)
        if best_d is None or d < best_d:
            best, best_d = idx, d
            if d == 0:
                break
    return best


@dataclass
class ReprVocabulary:
    """Trained prototype set with one embedding row per prototype."""

    prototypes: tuple[str, ...]
    embeddings: np.ndarray
    frequency_rank: tuple[tuple[str, int], ...] = ()
    meta: dict = field(default_factory=dict)
    _cache: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.prototypes = tuple(self.prototypes)
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.frequency_rank = tuple((r, int(c)) for r, c in self.frequency_rank)
        if self.embeddings.shape[0] != len(self.prototypes):
            raise ValueError("one embedding row per prototype required")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings must be finite")
        self._cache = {p: i for i, p in enumerate(self.prototypes)}

    @property
    def size(self) -> int:
        return len(self.prototypes)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def prototype_index(self, repr_string: str) -> int:
        idx = self._cache.get(repr_string)
        if idx is None:
            idx = _nearest_index(repr_string, self.prototypes)
            self._cache[repr_string] = idx
        return idx

    def lookup(self, token_text: str) -> np.ndarray:
        """Embedding vector for a token's text; the zero vector for empty text."""
        if not token_text:
            return np.zeros(self.dim)
        row = self.prototype_index(word_to_repr(token_text))
        return self.embeddings[row].copy()


def save_vocabulary(vocab: ReprVocabulary, path: str | Path) -> None:
    """Write the embeddings file: one JSON header line, then the float32 matrix."""
    header = {
        "format_version": EMBEDDINGS_FORMAT_VERSION,
        "kind": "repr-embeddings",
        "count": vocab.size,
        "dim": vocab.dim,
        "prototypes": list(vocab.prototypes),
        "frequency_rank": [[r, c] for r, c in vocab.frequency_rank],
        "meta": vocab.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += vocab.embeddings.astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def load_vocabulary(path: str | Path) -> ReprVocabulary:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format_version") != EMBEDDINGS_FORMAT_VERSION:
        raise ValueError(f"unsupported embeddings file version: {header.get('format_version')!r}")
    count, dim = int(header["count"]), int(header["dim"])
    matrix = np.frombuffer(raw[newline + 1 :], dtype="<f4")
    if matrix.size != count * dim:
        raise ValueError(
            f"embeddings payload has {matrix.size} floats, header promises {count * dim}"
        )
    return ReprVocabulary(
        prototypes=tuple(header["prototypes"]),
        embeddings=matrix.reshape(count, dim).astype(float),
        frequency_rank=tuple((r, int(c)) for r, c in header["frequency_rank"]),
        meta=dict(header.get("meta", {})),
    )


TABLES_FORMAT_VERSION = 1


def save_tables(tables: Sequence[CellTable], path: str | Path) -> None:
    """Write a table corpus file: a list of rectangular string grids."""
    from .model import dumps_json

    data = {
        "format_version": TABLES_FORMAT_VERSION,
        "tables": [[list(row) for row in t.grid] for t in tables],
    }
    Path(path).write_text(dumps_json(data), encoding="utf-8")


def load_tables(path: str | Path) -> list[CellTable]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != TABLES_FORMAT_VERSION:
        raise ValueError(f"unsupported table corpus version: {data.get('format_version')!r}")
    return [CellTable(grid=tuple(tuple(row) for row in grid)) for grid in data["tables"]]


# ---------------------------------------------------------------------------
# Skip-gram negative sampling
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-x))


def sgns_pair_loss_grads(
    v_target: np.ndarray,
    u_context: np.ndarray,
    u_negatives: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Logistic loss and gradients for one (target, context, negatives) example.

    loss = -log sigma(v.u_ctx) - sum_n log sigma(-v.u_n).  Returns
    (loss, d/dv_target, d/du_context, d/du_negatives); the negative rows are
    per-sample gradients aligned with ``u_negatives``.
    """
    z_pos = float(v_target @ u_context)
    z_neg = u_negatives @ v_target if u_negatives.size else np.zeros(0)
    loss = float(np.logaddexp(0.0, -z_pos) + np.sum(np.logaddexp(0.0, z_neg)))
    coeff_pos = _sigmoid(z_pos) - 1.0
    coeff_neg = _sigmoid(z_neg)
    g_target = coeff_pos * u_context
    if u_negatives.size:
        g_target = g_target + coeff_neg @ u_negatives
    g_context = coeff_pos * v_target
    g_negatives = coeff_neg[:, None] * v_target[None, :] if u_negatives.size else np.zeros_like(u_negatives)
    return loss, g_target, g_context, g_negatives


def train_skipgram(
    tables: Sequence[CellTable],
    mode: str = "rhombus",
    *,
    dim: int = 80,
    epochs: int = 5,
    seed: int = 0,
    limit: int = 2000,
    negatives: int = 5,
    learning_rate: float = 0.025,
    rhombus_uses_diagonal: bool = False,
) -> ReprVocabulary:
    """Train prototype embeddings over a table corpus.

    Pipeline: rank representations, cluster the ranked set into prototypes,
    map every cell to its nearest prototype, then run skip-gram negative
    sampling over the visit windows with the window center as the target and
    the remaining positions as contexts.  Negatives are drawn from the
    unigram distribution raised to 0.75; the learning rate decays linearly
    over all updates.  Deterministic for a fixed seed.
    """
    if not tables:
        raise ValueError("empty table list")
    if mode not in PATTERN_MODES:
        raise ValueError(f"unknown pattern mode: {mode!r} (expected one of {PATTERN_MODES})")

    all_cells = [cell for table in tables for row in table.grid for cell in row]
    ranked = rank_representations(all_cells, limit)
    reprs = [r for r, _ in ranked]
    ap = affinity_propagation(levenshtein_matrix(reprs))
    prototypes = tuple(reprs[i] for i in ap.exemplars)

    proto_of: dict[str, int] = {}

    def resolve(cell: str) -> int:
        rep = word_to_repr(cell)
        idx = proto_of.get(rep)
        if idx is None:
            idx = _nearest_index(rep, prototypes)
            proto_of[rep] = idx
        return idx

    # Unigram counts over every non-empty cell, for the noise distribution.
    counts = np.zeros(len(prototypes))
    for cell in all_cells:
        if cell:
            counts[resolve(cell)] += 1

    pairs: list[tuple[int, int]] = []
    for table in tables:
        for window in extract_patterns(table, mode, rhombus_uses_diagonal=rhombus_uses_diagonal):
            center_cell = table.cell(*window.center)
            if not center_cell:
                continue
            target = resolve(center_cell)
            for pos, (r, c) in enumerate(window.cells):
                if pos == window.center_pos:
                    continue
                context_cell = table.cell(r, c)
                if not context_cell:
                    continue
                pairs.append((target, resolve(context_cell)))
    if not pairs:
        raise ValueError("no training pairs (tables have no usable interior cells)")

    noise = counts**0.75
    noise /= noise.sum()

    rng = np.random.default_rng(seed)
    n_proto = len(prototypes)
    w_in = (rng.random((n_proto, dim)) - 0.5) / dim
    w_out = np.zeros((n_proto, dim))

    total_steps = epochs * len(pairs)
    step = 0
    for _ in range(epochs):
        for target, context in pairs:
            lr = learning_rate * max(1.0 - step / total_steps, 1e-4)
            drawn = rng.choice(n_proto, size=negatives, p=noise)
            drawn = drawn[drawn != context]
            _, g_t, g_c, g_n = sgns_pair_loss_grads(w_in[target], w_out[context], w_out[drawn])
            w_in[target] -= lr * g_t
            w_out[context] -= lr * g_c
            if drawn.size:
                np.subtract.at(w_out, drawn, lr * g_n)
            step += 1

    return ReprVocabulary(
        prototypes=prototypes,
        embeddings=w_in,
        frequency_rank=tuple(ranked),
        meta={
            "mode": mode,
            "dim": dim,
            "epochs": epochs,
            "seed": seed,
            "limit": limit,
            "negatives": negatives,
            "learning_rate": learning_rate,
            "rhombus_uses_diagonal": rhombus_uses_diagonal,
            "ap_converged": bool(ap.converged),
        },
    )
