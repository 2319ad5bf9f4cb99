import numpy as np
import pytest

from tablegraph.gnn import (
    BASE_HIDDEN,
    GnnConfig,
    GnnModel,
    accuracy_on,
    forward,
    infer,
    init_model,
    load_model,
    neighbor_mean,
    resolve_sizing,
    save_model,
    scaled_hidden_dim,
    sizing_param_count,
    softmax,
    train,
    training_loss,
)
from tablegraph.gnn import _loss_and_grads, _stack_graphs
from tablegraph.graph import PageGraph
from tablegraph.model import LABEL_ORDER, TokenLabel


def make_graph(n, dim, rng, labeled=True, n_extra=2):
    """Connected chain plus a few random chords, random features/weights."""
    edges = [(i, i + 1) for i in range(n - 1)]
    pool = [(i, j) for i in range(n) for j in range(i + 2, n)]
    rng.shuffle(pool)
    edges += pool[:n_extra]
    edges = sorted(set(edges))
    labels = (
        tuple(TokenLabel.from_index(int(rng.integers(0, 3))) for _ in range(n))
        if labeled
        else None
    )
    return PageGraph(
        features=rng.normal(size=(n, dim)),
        edges=np.array(edges, dtype=int).reshape(-1, 2),
        weights=rng.uniform(0.1, 1.0, size=len(edges)),
        labels=labels,
    )


def tiny_config(**kw):
    base = dict(in_dim=5, out_dim=4, layers=3, sizing="base", hidden=6, epochs=10, seed=3)
    base.update(kw)
    return GnnConfig(**base)


class TestSizing:
    def test_base_dims(self):
        cfg = GnnConfig(in_dim=93, sizing="base")
        assert resolve_sizing(cfg) == (93, 1000, 1000, 1000, 9)
        assert BASE_HIDDEN == 1000

    def test_padding_dims(self):
        cfg = GnnConfig(in_dim=93, sizing="padding")
        assert resolve_sizing(cfg) == (861, 1000, 1000, 1000, 9)

    def test_padding_rejects_wide_input(self):
        with pytest.raises(ValueError, match="padding target"):
            resolve_sizing(GnnConfig(in_dim=900, sizing="padding"))

    def test_scaled_hidden_reference_case(self):
        assert scaled_hidden_dim(100_000, 4, 13, 13) == 217

    def test_scaled_hidden_is_maximal_within_budget(self):
        h = scaled_hidden_dim(100_000, 4, 13, 13)
        assert sizing_param_count((13, h, h, h, 13)) <= 100_000
        assert sizing_param_count((13, h + 1, h + 1, h + 1, 13)) > 100_000

    def test_scaled_two_layer_linear_case(self):
        assert scaled_hidden_dim(1000, 2, 10, 10) == 50
        assert sizing_param_count((10, 50, 10)) == 1000

    def test_scaled_budget_too_small(self):
        with pytest.raises(ValueError, match="budget"):
            scaled_hidden_dim(5, 4, 100, 100)

    def test_default_config_dims(self):
        assert resolve_sizing(GnnConfig(in_dim=93)) == (93, 199, 199, 199, 9)

    def test_param_count_formula_excludes_concat_and_bias(self):
        # for actual models each layer holds 2*d_(k-1)*d_k weights plus bias
        assert sizing_param_count((5, 6, 4)) == 5 * 6 + 6 * 4

    def test_config_validation(self):
        with pytest.raises(ValueError, match="layers"):
            GnnConfig(in_dim=5, layers=1)
        with pytest.raises(ValueError, match="sizing"):
            GnnConfig(in_dim=5, sizing="huge")
        with pytest.raises(ValueError, match="positive"):
            GnnConfig(in_dim=0)
        with pytest.raises(ValueError, match="budget"):
            resolve_sizing(GnnConfig(in_dim=5, sizing="scaled", param_budget=None))

    def test_padded_input_matches_manual_zero_extension(self):
        rng = np.random.default_rng(0)
        graph = make_graph(4, 5, rng, labeled=False)
        pad_model = init_model(tiny_config(sizing="padding", pad_to=9))
        assert pad_model.dims[0] == 9
        wide = PageGraph(
            features=np.hstack([graph.features, np.zeros((4, 4))]),
            edges=graph.edges,
            weights=graph.weights,
        )
        base_model = init_model(tiny_config(in_dim=9, sizing="base", hidden=6))
        base_model.weights = [w.copy() for w in pad_model.weights]
        base_model.biases = [b.copy() for b in pad_model.biases]
        assert np.allclose(forward(pad_model, graph), forward(base_model, wide))


class TestModelShell:
    def test_weight_shapes_doubled_for_concat(self):
        model = init_model(tiny_config())
        assert model.dims == (5, 6, 6, 4)
        assert [w.shape for w in model.weights] == [(10, 6), (12, 6), (12, 4)]
        assert [b.shape for b in model.biases] == [(6,), (6,), (4,)]

    def test_param_count(self):
        model = init_model(tiny_config())
        assert model.param_count(include_bias=False) == 10 * 6 + 12 * 6 + 12 * 4
        assert model.param_count() == 10 * 6 + 12 * 6 + 12 * 4 + 6 + 6 + 4

    def test_init_deterministic_per_seed(self):
        a, b = init_model(tiny_config()), init_model(tiny_config())
        other = init_model(tiny_config(seed=4))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert not np.array_equal(a.weights[0], other.weights[0])

    def test_bad_shapes_rejected(self):
        model = init_model(tiny_config())
        with pytest.raises(ValueError, match="weight shape"):
            GnnModel(
                config=model.config,
                dims=model.dims,
                weights=[np.zeros((3, 3))] * 3,
                biases=model.biases,
            )


class TestAggregation:
    def test_hand_example(self):
        g = PageGraph(
            features=np.zeros((3, 1)),
            edges=np.array([[0, 1], [0, 2]]),
            weights=[1.0, 0.5],
        )
        states = np.array([[1.0], [1.0], [1.0]])
        out = neighbor_mean(g, states)
        # node 0: (1.0*1 + 0.5*1) / 2; node 1: 1.0*1 / 1; node 2: 0.5*1 / 1
        assert np.allclose(out, [[0.75], [1.0], [0.5]], atol=1e-6)

    def test_isolated_node_gets_zero_summary(self):
        g = PageGraph(
            features=np.zeros((3, 2)),
            edges=np.array([[0, 1]]),
            weights=[1.0],
        )
        out = neighbor_mean(g, np.ones((3, 2)))
        assert np.allclose(out[2], [0.0, 0.0])

    def test_unit_weights_reduce_to_neighbor_average(self):
        rng = np.random.default_rng(5)
        g = make_graph(8, 3, rng, labeled=False)
        uniform = PageGraph(
            features=g.features,
            edges=g.edges,
            weights=np.ones(len(g.edges)),
        )
        states = rng.normal(size=(8, 3))
        out = neighbor_mean(uniform, states)
        for v in range(8):
            nbrs = [u for u, _ in uniform.neighbors(v)]
            if nbrs:
                assert np.allclose(out[v], states[nbrs].mean(axis=0))
            else:
                assert np.allclose(out[v], 0.0)

    def test_linear_in_states(self):
        rng = np.random.default_rng(6)
        g = make_graph(6, 2, rng, labeled=False)
        states = rng.normal(size=(6, 2))
        assert np.allclose(neighbor_mean(g, 3.0 * states), 3.0 * neighbor_mean(g, states))


def dense_forward_oracle(model, graph):
    """Independent dense re-implementation of the layer stack."""
    n = graph.n_nodes
    agg = np.zeros((n, n))
    deg = np.zeros(n)
    for u, v in graph.edges:
        deg[u] += 1
        deg[v] += 1
    for (u, v), w in zip(graph.edges, graph.weights):
        agg[u, v] = w / deg[u]
        agg[v, u] = w / deg[v]
    h = graph.features
    if h.shape[1] < model.dims[0]:
        h = np.hstack([h, np.zeros((n, model.dims[0] - h.shape[1]))])
    for k, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        z = np.hstack([h, agg @ h]) @ weight + bias
        h = np.maximum(z, 0.0) if k < len(model.weights) - 1 else z
    return h


class TestForward:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        for n in (2, 5, 11):
            graph = make_graph(n, 5, rng, labeled=False)
            model = init_model(tiny_config())
            assert np.allclose(
                forward(model, graph), dense_forward_oracle(model, graph), atol=1e-6
            )

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(7)
        graph = make_graph(7, 5, rng, labeled=False)
        model = init_model(tiny_config())
        perm = rng.permutation(7)
        inverse = np.argsort(perm)
        mapped = sorted(
            (min(inverse[u], inverse[v]), max(inverse[u], inverse[v]), w)
            for (u, v), w in zip(graph.edges, graph.weights)
        )
        permuted = PageGraph(
            features=graph.features[perm],
            edges=np.array([[u, v] for u, v, _ in mapped]),
            weights=np.array([w for _, _, w in mapped]),
        )
        # permuted node i is original node perm[i]
        assert np.allclose(forward(model, permuted), forward(model, graph)[perm], atol=1e-9)

    def test_width_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        graph = make_graph(3, 7, rng, labeled=False)
        with pytest.raises(ValueError, match="width 7"):
            forward(init_model(tiny_config()), graph)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        probs = softmax(rng.normal(scale=20, size=(6, 9)))
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs > 0)


class TestGradients:
    def test_finite_difference_check(self):
        rng = np.random.default_rng(11)
        graph = make_graph(6, 5, rng)
        model = init_model(tiny_config())
        operator, features, targets = _stack_graphs(model, [graph])
        _, grads_w, grads_b = _loss_and_grads(model, operator, features, targets)
        eps = 1e-6
        worst = 0.0
        for k in range(model.n_layers):
            for arr, grad in ((model.weights[k], grads_w[k]), (model.biases[k], grads_b[k])):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    keep = arr[idx]
                    arr[idx] = keep + eps
                    up, _, _ = _loss_and_grads(model, operator, features, targets)
                    arr[idx] = keep - eps
                    down, _, _ = _loss_and_grads(model, operator, features, targets)
                    arr[idx] = keep
                    fd = (up - down) / (2 * eps)
                    scale = max(abs(fd), abs(grad[idx]), 1e-8)
                    worst = max(worst, abs(fd - grad[idx]) / scale)
        assert worst <= 1e-4

    def test_batched_loss_is_node_weighted_mean(self):
        rng = np.random.default_rng(12)
        g1 = make_graph(4, 5, rng)
        g2 = make_graph(9, 5, rng)
        model = init_model(tiny_config())
        combined = training_loss(model, [g1, g2])
        separate = (4 * training_loss(model, [g1]) + 9 * training_loss(model, [g2])) / 13
        assert combined == pytest.approx(separate, rel=1e-12)


class TestTraining:
    def test_loss_decreases(self):
        rng = np.random.default_rng(13)
        graphs = [make_graph(12, 5, rng) for _ in range(4)]
        model = init_model(tiny_config(epochs=40))
        result = train(model, graphs)
        assert len(result.losses) == 40
        assert result.losses[-1] < result.losses[0]
        upticks = sum(1 for a, b in zip(result.losses, result.losses[1:]) if b > a + 1e-9)
        assert upticks <= 8  # Adam may wiggle but the trend must hold

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        graphs = [make_graph(10, 5, rng) for _ in range(3)]
        r1 = train(init_model(tiny_config()), graphs)
        r2 = train(init_model(tiny_config()), graphs)
        assert r1.losses == r2.losses
        for w1, w2 in zip(r1.model.weights, r2.model.weights):
            assert np.array_equal(w1, w2)

    def test_val_accuracy_tracked(self):
        rng = np.random.default_rng(15)
        graphs = [make_graph(10, 5, rng) for _ in range(2)]
        result = train(init_model(tiny_config(epochs=5)), graphs, val_graphs=graphs[:1])
        assert len(result.val_accuracies) == 5
        assert all(0.0 <= a <= 1.0 for a in result.val_accuracies)

    def test_no_graphs_rejected(self):
        with pytest.raises(ValueError, match="no training graphs"):
            train(init_model(tiny_config()), [])

    def test_unlabeled_graphs_rejected(self):
        rng = np.random.default_rng(16)
        graph = make_graph(5, 5, rng, labeled=False)
        with pytest.raises(ValueError, match="label"):
            train(init_model(tiny_config()), [graph])

    def test_accuracy_on_perfectly_memorized(self):
        rng = np.random.default_rng(17)
        graph = make_graph(8, 5, rng)
        model = init_model(tiny_config(epochs=300, learning_rate=5e-3))
        train(model, [graph])
        assert accuracy_on(model, [graph]) == 1.0


class TestInfer:
    def test_prob_rows_and_labels_align(self):
        rng = np.random.default_rng(18)
        graph = make_graph(6, 5, rng, labeled=False)
        labels, probs = infer(init_model(tiny_config()), graph)
        assert len(labels) == 6
        assert probs.shape == (6, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)
        for row, label in zip(probs, labels):
            assert LABEL_ORDER[int(np.argmax(row))] is label

    def test_zeroed_model_ties_resolve_to_first_class(self):
        rng = np.random.default_rng(19)
        graph = make_graph(4, 5, rng, labeled=False)
        model = init_model(tiny_config())
        model.weights = [np.zeros_like(w) for w in model.weights]
        labels, probs = infer(model, graph)
        assert np.allclose(probs, 0.25)
        assert labels == [TokenLabel.TEXT] * 4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(20)
        graphs = [make_graph(8, 5, rng)]
        model = init_model(tiny_config(epochs=5))
        train(model, graphs)
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.config == model.config
        assert loaded.dims == model.dims
        for wa, wb in zip(model.weights, loaded.weights):
            assert np.allclose(wa, wb, atol=1e-5)  # float32 storage
        graph = make_graph(5, 5, rng, labeled=False)
        assert np.allclose(forward(model, graph), forward(loaded, graph), atol=1e-4)

    def test_save_is_deterministic(self, tmp_path):
        model = init_model(tiny_config())
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(model, a)
        save_model(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_tampered_dims_rejected(self, tmp_path):
        model = init_model(tiny_config())
        path = tmp_path / "m.ckpt"
        save_model(model, path)
        raw = path.read_bytes()
        head, _, tail = raw.partition(b"\n")
        bad = head.replace(b'"dims": [5, 6, 6, 4]', b'"dims": [5, 7, 7, 4]')
        assert bad != head
        path.write_bytes(bad + b"\n" + tail)
        with pytest.raises(ValueError, match="disagree"):
            load_model(path)

    def test_truncated_payload_rejected(self, tmp_path):
        model = init_model(tiny_config())
        path = tmp_path / "m.ckpt"
        save_model(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="payload"):
            load_model(path)

    def test_version_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b'{"format_version": 99}\n')
        with pytest.raises(ValueError, match="version"):
            load_model(path)
