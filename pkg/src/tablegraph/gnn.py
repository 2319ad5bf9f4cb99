"""Weighted GraphSAGE-GCN node classifier.

Each layer aggregates edge-weighted neighbor states with a mean mailbox,
concatenates them with the node's own state, and applies a dense layer:
h_v = sigma(W . concat(h_v, sum_u w_uv h_u / |N(v)|) + b), ReLU on hidden
layers and softmax on the output.  Forward, backward, and Adam are written
directly on numpy arrays in double precision so gradients can be checked
against finite differences; pages train full-batch as one block-diagonal
sparse system.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .graph import PageGraph
from .model import LABEL_ORDER, TokenLabel

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

SIZING_MODES = ("base", "padding", "scaled")

#: Hidden width used by the base and padding strategies.
BASE_HIDDEN = 1000

#: Input width the padding strategy zero-extends feature vectors to.
PADDING_IN_DIM = 861


@dataclass(frozen=True)
class GnnConfig:
    """Architecture and training knobs; ``layers`` counts dense layers."""

    in_dim: int
    out_dim: int = len(LABEL_ORDER)
    layers: int = 4
    sizing: str = "scaled"
    hidden: int | None = None
    param_budget: int | None = 100_000
    pad_to: int = PADDING_IN_DIM
    learning_rate: float = 1e-3
    epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layers < 2:
            raise ValueError(f"need at least 2 layers, got {self.layers}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be positive")
        if self.sizing not in SIZING_MODES:
            raise ValueError(f"unknown sizing {self.sizing!r} (expected one of {SIZING_MODES})")


def scaled_hidden_dim(param_budget: int, layers: int, in_dim: int, out_dim: int) -> int:
    """Hidden width whose parameter-formula count stays within ``param_budget``.

    Solves (layers-2) h^2 + (in_dim+out_dim) h = param_budget for h and
    floors the positive root, so the resolved count never exceeds the budget
    but the next width up would.
    """
    a = layers - 2
    b = in_dim + out_dim
    if a == 0:
        h = param_budget // b
    else:
        h = int(math.floor((-b + math.sqrt(b * b + 4 * a * param_budget)) / (2 * a)))
    if h < 1:
        raise ValueError(
            f"parameter budget {param_budget} too small for layers={layers}, "
            f"in={in_dim}, out={out_dim}"
        )
    return h


def sizing_param_count(dims: Sequence[int]) -> int:
    """The sizing formula's count: sum of d_(k-1) * d_k, biases and the
    concat doubling excluded."""
    return int(sum(dims[k - 1] * dims[k] for k in range(1, len(dims))))


def resolve_sizing(config: GnnConfig) -> tuple[int, ...]:
    """Layer widths d_0..d_L for a config.

    base: hidden width 1000 throughout.  padding: like base but d_0 is the
    padded input width (features are zero-extended).  scaled: hidden width
    from the parameter budget via the floored quadratic root.
    """
    n_hidden = config.layers - 1
    if config.sizing == "base":
        hidden = config.hidden or BASE_HIDDEN
        d0 = config.in_dim
    elif config.sizing == "padding":
        hidden = config.hidden or BASE_HIDDEN
        if config.in_dim > config.pad_to:
            raise ValueError(
                f"in_dim {config.in_dim} exceeds padding target {config.pad_to}"
            )
        d0 = config.pad_to
    else:
        if config.param_budget is None:
            raise ValueError("scaled sizing needs a parameter budget")
        hidden = scaled_hidden_dim(
            config.param_budget, config.layers, config.in_dim, config.out_dim
        )
        d0 = config.in_dim
    return (d0, *([hidden] * n_hidden), config.out_dim)


@dataclass
class GnnModel:
    """Dense layer stack; W_k has shape (2*d_(k-1), d_k) for the concat."""

    config: GnnConfig
    dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        expect = len(self.dims) - 1
        if len(self.weights) != expect or len(self.biases) != expect:
            raise ValueError("one weight/bias pair per layer required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if w.shape != (2 * self.dims[k - 1], self.dims[k]):
                raise ValueError(
                    f"layer {k}: weight shape {w.shape}, "
                    f"expected {(2 * self.dims[k - 1], self.dims[k])}"
                )
            if b.shape != (self.dims[k],):
                raise ValueError(f"layer {k}: bias shape {b.shape}, expected {(self.dims[k],)}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def param_count(self, include_bias: bool = True) -> int:
        total = sum(w.size for w in self.weights)
        if include_bias:
            total += sum(b.size for b in self.biases)
        return int(total)


def init_model(config: GnnConfig) -> GnnModel:
    """Glorot-uniform weights, zero biases, deterministic per config seed."""
    dims = resolve_sizing(config)
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for k in range(1, len(dims)):
        fan_in, fan_out = 2 * dims[k - 1], dims[k]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return GnnModel(config=config, dims=dims, weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _aggregation_operator(graph: PageGraph) -> sparse.csr_matrix:
    """Sparse operator A with A[v,u] = w_uv / |N(v)|; rows of isolated nodes
    are all zero, so their neighbor summary is the zero vector."""
    n = graph.n_nodes
    deg = np.zeros(n)
    for (u, v), _ in zip(graph.edges, graph.weights):
        deg[u] += 1
        deg[v] += 1
    rows, cols, vals = [], [], []
    for (u, v), w in zip(graph.edges, graph.weights):
        rows.append(u)
        cols.append(v)
        vals.append(w / deg[u])
        rows.append(v)
        cols.append(u)
        vals.append(w / deg[v])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def neighbor_mean(graph: PageGraph, states: np.ndarray) -> np.ndarray:
    """One aggregation step on raw per-node states (no weights, no activation)."""
    return np.asarray(_aggregation_operator(graph) @ np.asarray(states, dtype=float))


def _pad_features(features: np.ndarray, d0: int) -> np.ndarray:
    n, width = features.shape
    if width == d0:
        return features
    if width > d0:
        raise ValueError(f"feature width {width} exceeds model input width {d0}")
    padded = np.zeros((n, d0))
    padded[:, :width] = features
    return padded


def check_feature_width(model: GnnModel, graph: PageGraph) -> None:
    expected = model.config.in_dim
    if graph.feature_dim != expected:
        raise ValueError(
            f"graph feature width {graph.feature_dim} does not match "
            f"model input width {expected}"
        )


def _forward_operator(
    model: GnnModel, operator: sparse.csr_matrix, features: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Returns (pre_activations z_1..z_L, states h_0..h_L)."""
    states = [_pad_features(features, model.dims[0])]
    pre: list[np.ndarray] = []
    for k, (w, b) in enumerate(zip(model.weights, model.biases), start=1):
        h_prev = states[-1]
        summary = operator @ h_prev
        z = np.concatenate([h_prev, summary], axis=1) @ w + b
        pre.append(z)
        states.append(np.maximum(z, 0.0) if k < model.n_layers else z)
    return pre, states


def forward(model: GnnModel, graph: PageGraph) -> np.ndarray:
    """Raw class scores per node (n x out_dim); softmax is applied downstream."""
    check_feature_width(model, graph)
    _, states = _forward_operator(model, _aggregation_operator(graph), graph.features)
    return states[-1]


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _loss_and_grads(
    model: GnnModel,
    operator: sparse.csr_matrix,
    features: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy over nodes and its gradients, by hand."""
    n = features.shape[0]
    pre, states = _forward_operator(model, operator, features)
    probs = softmax(states[-1])
    loss = float(-np.mean(np.log(probs[np.arange(n), targets] + 1e-300)))

    d_z = probs.copy()
    d_z[np.arange(n), targets] -= 1.0
    d_z /= n
    operator_t = operator.T.tocsr()
    grads_w: list[np.ndarray] = [np.empty(0)] * model.n_layers
    grads_b: list[np.ndarray] = [np.empty(0)] * model.n_layers
    for k in range(model.n_layers, 0, -1):
        h_prev = states[k - 1]
        summary = operator @ h_prev
        concat = np.concatenate([h_prev, summary], axis=1)
        grads_w[k - 1] = concat.T @ d_z
        grads_b[k - 1] = d_z.sum(axis=0)
        if k == 1:
            break
        d_concat = d_z @ model.weights[k - 1].T
        d_prev = d_concat[:, : model.dims[k - 1]]
        d_summary = d_concat[:, model.dims[k - 1] :]
        d_h = d_prev + operator_t @ d_summary
        d_z = d_h * (pre[k - 2] > 0.0)
    return loss, grads_w, grads_b


def _stack_graphs(
    model: GnnModel, graphs: Sequence[PageGraph]
) -> tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
    """Disjoint union of per-page systems: block-diagonal operator, stacked
    features and label indices."""
    for g in graphs:
        check_feature_width(model, g)
        if g.labels is None:
            raise ValueError("training graphs must carry labels")
    operator = sparse.block_diag(
        [_aggregation_operator(g) for g in graphs], format="csr"
    )
    features = np.vstack([g.features for g in graphs])
    targets = np.concatenate(
        [np.array([label.index for label in g.labels], dtype=int) for g in graphs]
    )
    return operator, features, targets


@dataclass
class TrainResult:
    model: GnnModel
    losses: list[float] = field(default_factory=list)
    val_accuracies: list[float] = field(default_factory=list)


def train(
    model: GnnModel,
    graphs: Sequence[PageGraph],
    val_graphs: Sequence[PageGraph] | None = None,
    *,
    epochs: int | None = None,
    learning_rate: float | None = None,
) -> TrainResult:
    """Full-batch Adam on mean cross-entropy; loss recorded per epoch.

    Runs are deterministic: initialization comes from the config seed and
    the optimization itself draws no randomness.
    """
    if not graphs:
        raise ValueError("no training graphs")
    epochs = model.config.epochs if epochs is None else epochs
    lr = model.config.learning_rate if learning_rate is None else learning_rate
    operator, features, targets = _stack_graphs(model, graphs)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]

    result = TrainResult(model=model)
    for step in range(1, epochs + 1):
        loss, grads_w, grads_b = _loss_and_grads(model, operator, features, targets)
        result.losses.append(loss)
        correction = math.sqrt(1.0 - beta2**step) / (1.0 - beta1**step)
        for k in range(model.n_layers):
            m_w[k] = beta1 * m_w[k] + (1 - beta1) * grads_w[k]
            v_w[k] = beta2 * v_w[k] + (1 - beta2) * grads_w[k] ** 2
            model.weights[k] -= lr * correction * m_w[k] / (np.sqrt(v_w[k]) + eps)
            m_b[k] = beta1 * m_b[k] + (1 - beta1) * grads_b[k]
            v_b[k] = beta2 * v_b[k] + (1 - beta2) * grads_b[k] ** 2
            model.biases[k] -= lr * correction * m_b[k] / (np.sqrt(v_b[k]) + eps)
        if val_graphs:
            result.val_accuracies.append(accuracy_on(model, val_graphs))
    return result


def training_loss(model: GnnModel, graphs: Sequence[PageGraph]) -> float:
    operator, features, targets = _stack_graphs(model, graphs)
    loss, _, _ = _loss_and_grads(model, operator, features, targets)
    return loss


def accuracy_on(model: GnnModel, graphs: Sequence[PageGraph]) -> float:
    """Node accuracy of argmax predictions over a labeled graph collection."""
    hit = total = 0
    for g in graphs:
        if g.labels is None:
            raise ValueError("accuracy needs labeled graphs")
        predicted, _ = infer(model, g)
        hit += sum(p is t for p, t in zip(predicted, g.labels))
        total += g.n_nodes
    return hit / total if total else 0.0


def infer(model: GnnModel, graph: PageGraph) -> tuple[list[TokenLabel], np.ndarray]:
    """Per-node label (argmax; ties resolve to the lowest class index) and
    the full softmax probability rows."""
    probs = softmax(forward(model, graph))
    picks = np.argmax(probs, axis=1)
    return [TokenLabel.from_index(int(i)) for i in picks], probs


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: GnnModel, path: str | Path) -> None:
    """One JSON header line, then per-layer float32 blocks (W then b)."""
    cfg = model.config
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "gnn-checkpoint",
        "dims": list(model.dims),
        "config": {
            "in_dim": cfg.in_dim,
            "out_dim": cfg.out_dim,
            "layers": cfg.layers,
            "sizing": cfg.sizing,
            "hidden": cfg.hidden,
            "param_budget": cfg.param_budget,
            "pad_to": cfg.pad_to,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    for w, b in zip(model.weights, model.biases):
        blob += w.astype("<f4").tobytes()
        blob += b.astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> GnnModel:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {header.get('format_version')!r}")
    config = GnnConfig(**header["config"])
    dims = tuple(int(d) for d in header["dims"])
    if dims != resolve_sizing(config):
        raise ValueError(
            f"checkpoint dims {dims} disagree with its config "
            f"(expected {resolve_sizing(config)})"
        )
    payload = np.frombuffer(raw[newline + 1 :], dtype="<f4")
    weights, biases = [], []
    offset = 0
    for k in range(1, len(dims)):
        w_size = 2 * dims[k - 1] * dims[k]
        weights.append(
            payload[offset : offset + w_size].astype(float).reshape(2 * dims[k - 1], dims[k])
        )
        offset += w_size
        biases.append(payload[offset : offset + dims[k]].astype(float))
        offset += dims[k]
    if offset != payload.size:
        raise ValueError(
            f"checkpoint payload has {payload.size} floats, header implies {offset}"
        )
    return GnnModel(config=config, dims=dims, weights=weights, biases=biases)
