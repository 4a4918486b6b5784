import math
from dataclasses import replace

import numpy as np
import pytest
from pydantic import ValidationError

from learning.gnn_model import (
    EdgeConvParams,
    ModelConfig,
    ModelParams,
    Normalizer,
    edge_conv_layer,
    encode_edges,
    encode_nodes,
    init_params,
    model_backward,
    model_forward,
)
from learning.graph_builder import GraphConfig, build_graph
from learning.neural_core import LAYER_NORM_EPS, MlpParams, grad_check, layer_norm
from utils.common_utils import ArgumentError, ConfigurationError


def random_graph(rng, n, k=3, history_depth=0, with_edge_attrs=False):
    positions = rng.normal(size=(n, 3))
    columns = [positions, rng.uniform(0.1, 1.0, size=(n, 1))]
    columns += [positions + 0.01 * rng.normal(size=(n, 3)) for _ in range(history_depth)]
    features = np.concatenate(columns, axis=1)
    labels = rng.normal(size=(n, 3))
    return build_graph(positions, features, labels, GraphConfig(k=k, with_edge_attrs=with_edge_attrs)), positions


def scalar_edge_conv(h, edges, weights, biases, gamma, beta):
    """Loop-by-loop evaluation of one EdgeConv layer with a two-layer Tanh message MLP."""
    n, width = len(h), len(h[0])
    aggregated = [[0.0] * width for _ in range(n)]
    for src, dst in sorted(edges, key=lambda edge: (edge[1], edge[0])):
        x = list(h[dst]) + [h[src][c] - h[dst][c] for c in range(width)]
        for weight, bias in zip(weights, biases):
            x = [math.tanh(sum(weight[r][c] * x[c] for c in range(len(x))) + bias[r]) for r in range(len(weight))]
        for c in range(width):
            aggregated[dst][c] += x[c]
    out = []
    for i in range(n):
        row = list(h[i]) + aggregated[i]
        mean = sum(row) / len(row)
        var = sum((v - mean) ** 2 for v in row) / len(row)
        out.append([(v - mean) / math.sqrt(var + LAYER_NORM_EPS) * gamma[c] + beta[c] for c, v in enumerate(row)])
    return out


@pytest.fixture
def toy_layer():
    weights = [
        np.array([[0.5, -0.3, 0.2, 0.1], [-0.4, 0.6, -0.1, 0.3]]),
        np.array([[0.7, -0.2], [0.25, 0.9]]),
    ]
    biases = [np.array([0.05, -0.1]), np.array([0.2, 0.0])]
    gamma = np.array([1.0, 0.5, -0.8, 1.2])
    beta = np.array([0.1, -0.2, 0.0, 0.3])
    return EdgeConvParams(MlpParams(weights, biases), gamma, beta)


@pytest.fixture
def toy_graph():
    h = np.array([[0.1, -0.2], [0.4, 0.3], [-0.5, 0.8], [0.9, -0.7], [0.0, 0.6]])
    # Node 4 receives no edges.
    edges = np.array([[1, 0], [2, 0], [0, 1], [3, 2], [4, 2], [2, 3], [0, 3]])
    return h, edges


def test_model_config_checks_dimensions():
    with pytest.raises(ValidationError):
        ModelConfig(d_out=2)
    with pytest.raises(ValidationError):
        ModelConfig(d_in=5, history_depth=0)
    assert ModelConfig(d_in=10, history_depth=2).d_in == 10


def test_width_chain():
    assert ModelConfig(d=8, L=3).widths() == [8, 16, 32, 64]
    assert ModelConfig(d=8, L=3, project_back=True).widths() == [8, 8, 8, 8]


def test_init_params_is_seeded():
    config = ModelConfig(d=8, seed=3)
    first, second = init_params(config).named_blocks(), init_params(config).named_blocks()
    assert first.keys() == second.keys()
    assert all(np.array_equal(first[name], second[name]) for name in first)


def test_output_head_maps_last_width_to_three():
    params = init_params(ModelConfig(d=8, L=2))
    assert params.W_out.shape == (3, 32)
    assert params.b_out.shape == (3,)


@pytest.mark.parametrize("d_in,d,L", [(4, 8, 2), (10, 4, 3), (7, 16, 1)])
def test_parameter_count_closed_form(d_in, d, L):
    params = init_params(ModelConfig(d_in=d_in, d=d, L=L))
    expected = (d_in * d + d) + (d * d + d)
    width = d
    for _ in range(L):
        expected += (2 * width * width + width) + (width * width + width) + 2 * (2 * width)
        width *= 2
    expected += 3 * width + 3
    assert params.parameter_count() == expected


def test_model_params_reject_wrong_widths():
    params = init_params(ModelConfig(d=8, L=2))
    with pytest.raises(ArgumentError):
        ModelParams(ModelConfig(d=8, L=1), params.node_encoder, params.layers[:1], params.W_out, params.b_out)


def test_encode_nodes_shape_zero_and_rows():
    rng = np.random.default_rng(0)
    params = init_params(ModelConfig(d=8))
    x = rng.normal(size=(6, 4))
    h, _ = encode_nodes(x, params)
    assert h.shape == (6, 8)
    rows = np.vstack([encode_nodes(x[i:i + 1], params)[0] for i in range(6)])
    np.testing.assert_allclose(h, rows, rtol=0, atol=1e-14)
    zero, _ = encode_nodes(x, params.zeros_like())
    assert np.array_equal(zero, np.zeros((6, 8)))
    with pytest.raises(ArgumentError):
        encode_nodes(np.zeros((6, 5)), params)


def test_encode_edges():
    with pytest.raises(ConfigurationError):
        encode_edges(np.ones((4, 1)), init_params(ModelConfig()))
    params = init_params(ModelConfig(d=8, use_edge_encoder=True))
    codes, _ = encode_edges(np.ones((5, 1)), params)
    assert codes.shape == (5, 8)
    zero, _ = encode_edges(np.zeros((5, 1)), params.zeros_like())
    assert np.array_equal(zero, np.zeros((5, 8)))


def test_edge_conv_matches_scalar_reference(toy_layer, toy_graph):
    h, edges = toy_graph
    out, _ = edge_conv_layer(h, edges, None, toy_layer)
    expected = scalar_edge_conv(h.tolist(), edges.tolist(),
                                [w.tolist() for w in toy_layer.message.weights],
                                [b.tolist() for b in toy_layer.message.biases],
                                toy_layer.gamma.tolist(), toy_layer.beta.tolist())
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_node_without_incoming_edges_sees_zero_message(toy_layer, toy_graph):
    h, edges = toy_graph
    out, _ = edge_conv_layer(h, edges, None, toy_layer)
    alone, _ = layer_norm(np.concatenate([h[4], np.zeros(2)])[np.newaxis], toy_layer.gamma, toy_layer.beta)
    np.testing.assert_allclose(out[4], alone[0], rtol=0, atol=1e-15)


def test_edge_conv_rejects_wrong_width(toy_layer, toy_graph):
    _, edges = toy_graph
    with pytest.raises(ArgumentError):
        edge_conv_layer(np.zeros((5, 3)), edges, None, toy_layer)


def test_forward_shape_and_determinism():
    rng = np.random.default_rng(1)
    graph, _ = random_graph(rng, 12)
    params = init_params(ModelConfig(d=8))
    first = model_forward(graph, params)
    assert first.shape == (12, 3)
    assert np.array_equal(first, model_forward(graph, params))


def test_forward_is_permutation_equivariant():
    rng = np.random.default_rng(2)
    params = init_params(ModelConfig(d=8, L=2))
    for _ in range(20):
        n = int(rng.integers(5, 30))
        graph, positions = random_graph(rng, n)
        perm = rng.permutation(n)
        permuted = build_graph(positions[perm], graph.node_features[perm], graph.labels[perm], GraphConfig(k=3))
        out = model_forward(graph, params)
        out_permuted = model_forward(permuted, params)
        assert np.max(np.abs(out_permuted - out[perm])) <= 1e-9


def test_edge_list_order_does_not_matter():
    rng = np.random.default_rng(3)
    graph, _ = random_graph(rng, 15)
    params = init_params(ModelConfig(d=8))
    shuffled = replace(graph, edges=graph.edges[rng.permutation(len(graph.edges))])
    assert np.max(np.abs(model_forward(shuffled, params) - model_forward(graph, params))) <= 1e-12


def test_edge_encoder_requires_edge_attributes():
    graph, _ = random_graph(np.random.default_rng(4), 6)
    with pytest.raises(ConfigurationError):
        model_forward(graph, init_params(ModelConfig(d=4, use_edge_encoder=True)))


def test_backward_at_exact_labels_is_zero():
    graph, _ = random_graph(np.random.default_rng(5), 8)
    params = init_params(ModelConfig(d=8))
    exact = replace(graph, labels=model_forward(graph, params))
    loss, grads = model_backward(exact, params)
    assert loss == 0.0
    assert all(np.all(block == 0.0) for block in grads.named_blocks().values())


def test_backward_with_negated_labels_is_well_formed():
    graph, _ = random_graph(np.random.default_rng(6), 8)
    params = init_params(ModelConfig(d=4))
    loss, grads = model_backward(graph, params, labels=-graph.labels)
    assert np.isfinite(loss)
    blocks, reference = grads.named_blocks(), params.named_blocks()
    assert blocks.keys() == reference.keys()
    for name, block in blocks.items():
        assert block.shape == reference[name].shape
        assert np.all(np.isfinite(block))


GRADIENT_CASES = [
    dict(n=4, d=4),
    dict(n=5, d=4),
    dict(n=6, d=4),
    dict(n=7, d=4),
    dict(n=8, d=8),
    dict(n=8, d=4, project_back=True),
    dict(n=6, d=8, project_back=True),
    dict(n=6, d=4, use_edge_encoder=True),
    dict(n=7, d=4, use_edge_encoder=True, project_back=True),
    dict(n=5, d=4, history_depth=1),
    dict(n=8, d=4, mlp_depth=3),
]


@pytest.mark.parametrize("case", GRADIENT_CASES)
def test_gradients_match_finite_differences(case):
    case = dict(case)
    rng = np.random.default_rng(case["n"] * 31 + case["d"])
    n = case.pop("n")
    history_depth = case.pop("history_depth", 0)
    config = ModelConfig(d_in=4 + 3 * history_depth, L=2, seed=n, **case)
    graph, _ = random_graph(rng, n, history_depth=history_depth, with_edge_attrs=config.use_edge_encoder)
    params = init_params(config)
    # A damped output head keeps third derivatives small for the central differences.
    params.W_out *= 0.05
    predictions = model_forward(graph, params)
    graph = replace(graph, labels=predictions + 1e-5 * rng.normal(size=predictions.shape))

    def f(blocks):
        loss, grads = model_backward(graph, params)
        return loss, grads.named_blocks()

    assert grad_check(f, params.named_blocks()) <= 1e-5


def test_gradients_through_a_fitted_normalizer():
    rng = np.random.default_rng(40)
    graph, _ = random_graph(rng, 6)
    normalizer = Normalizer(rng.normal(size=4), rng.uniform(0.5, 2.0, size=4), np.array([3.0]))
    params = init_params(ModelConfig(d=4, L=2, seed=2), normalizer)
    params.W_out *= 0.05
    predictions = model_forward(graph, params)
    graph = replace(graph, labels=predictions + 1e-5 * rng.normal(size=predictions.shape))

    def f(blocks):
        loss, grads = model_backward(graph, params)
        return loss, grads.named_blocks()

    assert grad_check(f, params.named_blocks()) <= 1e-5


def test_normalizer_fit():
    rng = np.random.default_rng(41)
    graphs = [random_graph(rng, 6)[0] for _ in range(3)]
    normalizer = Normalizer.fit(graphs)
    features = np.concatenate([graph.node_features for graph in graphs])
    labels = np.concatenate([graph.labels for graph in graphs])
    np.testing.assert_allclose(normalizer.input_mean, features.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(normalizer.input_scale, features.std(axis=0), rtol=1e-12)
    assert normalizer.label_scale == pytest.approx(math.sqrt(np.mean(labels ** 2)), rel=1e-12)
    with pytest.raises(ArgumentError):
        Normalizer.fit([])


def test_normalizer_keeps_unit_scale_for_constant_columns_and_zero_labels():
    graph, positions = random_graph(np.random.default_rng(42), 5)
    features = graph.node_features.copy()
    features[:, 3] = 0.7
    flat = build_graph(positions, features, np.zeros((5, 3)), GraphConfig(k=3))
    normalizer = Normalizer.fit([flat])
    assert normalizer.input_scale[3] == 1.0
    assert normalizer.label_scale == 1.0


def test_forward_applies_feature_and_label_scaling():
    rng = np.random.default_rng(43)
    graph, positions = random_graph(rng, 9)
    normalizer = Normalizer(rng.normal(size=4), rng.uniform(0.5, 2.0, size=4), np.array([1e-7]))
    config = ModelConfig(d=8, seed=5)
    scaled = init_params(config, normalizer)
    standardized = build_graph(positions, (graph.node_features - normalizer.input_mean) / normalizer.input_scale,
                               graph.labels, GraphConfig(k=3))
    expected = 1e-7 * model_forward(standardized, init_params(config))
    np.testing.assert_allclose(model_forward(graph, scaled), expected, rtol=1e-12, atol=0)


def test_model_params_reject_bad_normalizer():
    params = init_params(ModelConfig(d=4))
    with pytest.raises(ArgumentError):
        init_params(ModelConfig(d=4), Normalizer.identity(5))
    with pytest.raises(ArgumentError):
        init_params(ModelConfig(d=4), Normalizer(np.zeros(4), np.ones(4), np.array([0.0])))
    assert "normalizer.input_mean" in params.state_blocks()
    assert "normalizer.input_mean" not in params.named_blocks()
