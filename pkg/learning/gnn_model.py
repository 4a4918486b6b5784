"""
EdgeConv surrogate for per-particle accelerations.

    h0_i   = f_node((x_i - mu) / sigma)
    m_ij   = phi_l(concat(h_i, h_j - h_i [, z_ij]))
    m_i    = sum_{j in N(i)} m_ij
    h'_i   = LayerNorm(concat(h_i, m_i))            (optionally projected back to d)
    a_i    = s * (W_out h_L_i + b_out)

mu, sigma and s come from the Normalizer fitted on the training graphs.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from learning.graph_builder import FrameGraph
from learning.neural_core import (
    LayerNormCache,
    MlpCache,
    MlpParams,
    glorot_uniform,
    init_mlp,
    layer_norm,
    layer_norm_backward,
    mlp_backward,
    mlp_forward,
    mse_grad,
    mse_loss,
)
from utils.common_utils import ArgumentError, ConfigurationError

logger = logging.getLogger(__name__)

EDGE_ATTR_DIM = 1


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    d_in: int = Field(4, ge=1)
    d: int = Field(64, ge=1)
    L: int = Field(2, ge=1)
    d_out: int = 3
    use_edge_encoder: bool = False
    project_back: bool = False
    mlp_depth: int = Field(2, ge=1)
    history_depth: int | None = Field(None, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_dims(self):
        if self.d_out != 3:
            raise ValueError("d_out must be 3 (3D accelerations)")
        if self.history_depth is not None and self.d_in != 4 + 3 * self.history_depth:
            raise ValueError(
                f"d_in={self.d_in} is inconsistent with history_depth={self.history_depth} "
                f"(expected {4 + 3 * self.history_depth})"
            )
        return self

    def widths(self) -> list[int]:
        """Input width of every EdgeConv layer followed by the width fed to the output head."""
        chain = [self.d]
        for _ in range(self.L):
            chain.append(self.d if self.project_back else 2 * chain[-1])
        return chain


@dataclass
class EdgeConvParams:
    message: MlpParams
    gamma: np.ndarray
    beta: np.ndarray
    project_W: np.ndarray | None = None
    project_b: np.ndarray | None = None

    def named_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = self.message.named_blocks(f"{prefix}.message")
        blocks[f"{prefix}.norm.gamma"] = self.gamma
        blocks[f"{prefix}.norm.beta"] = self.beta
        if self.project_W is not None:
            blocks[f"{prefix}.project.W"] = self.project_W
            blocks[f"{prefix}.project.b"] = self.project_b
        return blocks

    def zeros_like(self) -> "EdgeConvParams":
        return EdgeConvParams(
            self.message.zeros_like(),
            np.zeros_like(self.gamma),
            np.zeros_like(self.beta),
            None if self.project_W is None else np.zeros_like(self.project_W),
            None if self.project_b is None else np.zeros_like(self.project_b),
        )


@dataclass
class Normalizer:
    """
    Fixed scaling around the network, fitted once on the training graphs and never trained.

    Node features enter as (x - input_mean) / input_scale and the output head is
    multiplied by output_scale, the RMS of the training labels.
    """
    input_mean: np.ndarray
    input_scale: np.ndarray
    output_scale: np.ndarray

    @classmethod
    def identity(cls, d_in: int) -> "Normalizer":
        return cls(np.zeros(d_in), np.ones(d_in), np.ones(1))

    @classmethod
    def fit(cls, graphs: list[FrameGraph]) -> "Normalizer":
        """
        Column mean and standard deviation of the node features and the label RMS.

        Constant feature columns and all-zero labels keep a scale of 1.

        Raises:
            ArgumentError: If there are no graphs to fit on.
        """
        if not graphs:
            raise ArgumentError("cannot fit a normalizer on zero graphs")
        features = np.concatenate([graph.node_features for graph in graphs])
        labels = np.concatenate([graph.labels for graph in graphs])
        std = features.std(axis=0)
        rms = float(np.sqrt(np.mean(labels ** 2)))
        return cls(
            features.mean(axis=0),
            np.where(std > 0.0, std, 1.0),
            np.array([rms if rms > 0.0 else 1.0]),
        )

    def named_blocks(self) -> dict[str, np.ndarray]:
        return {
            "normalizer.input_mean": self.input_mean,
            "normalizer.input_scale": self.input_scale,
            "normalizer.output_scale": self.output_scale,
        }

    def copy(self) -> "Normalizer":
        return Normalizer(self.input_mean.copy(), self.input_scale.copy(), self.output_scale.copy())

    @property
    def label_scale(self) -> float:
        return float(self.output_scale[0])


@dataclass
class ModelParams:
    """All learnable weights of the surrogate plus its architecture config and fixed normalizer."""
    config: ModelConfig
    node_encoder: MlpParams
    layers: list[EdgeConvParams]
    W_out: np.ndarray
    b_out: np.ndarray
    edge_encoder: MlpParams | None = None
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if self.normalizer is None:
            self.normalizer = Normalizer.identity(self.config.d_in)
        d_in = self.config.d_in
        if (self.normalizer.input_mean.shape != (d_in,) or self.normalizer.input_scale.shape != (d_in,)
                or self.normalizer.output_scale.shape != (1,)):
            raise ArgumentError(f"normalizer must hold {d_in} feature columns and one label scale")
        if np.any(self.normalizer.input_scale <= 0.0) or self.normalizer.output_scale[0] <= 0.0:
            raise ArgumentError("normalizer scales must be positive")
        widths = self.config.widths()
        if self.node_encoder.in_dim != self.config.d_in or self.node_encoder.out_dim != self.config.d:
            raise ArgumentError("node encoder does not map d_in -> d")
        if len(self.layers) != self.config.L:
            raise ArgumentError(f"expected {self.config.L} EdgeConv layers, got {len(self.layers)}")
        for index, layer in enumerate(self.layers):
            width = widths[index]
            extra = self.config.d if self.config.use_edge_encoder else 0
            if layer.message.in_dim != 2 * width + extra or layer.message.out_dim != width:
                raise ArgumentError(f"layer {index}: message MLP does not match width {width}")
            if layer.gamma.shape != (2 * width,) or layer.beta.shape != (2 * width,):
                raise ArgumentError(f"layer {index}: LayerNorm must be sized {2 * width}")
            if self.config.project_back != (layer.project_W is not None):
                raise ArgumentError(f"layer {index}: projection does not match project_back")
        if self.W_out.shape != (self.config.d_out, widths[-1]) or self.b_out.shape != (self.config.d_out,):
            raise ArgumentError(f"output head must map {widths[-1]} -> {self.config.d_out}")
        if self.config.use_edge_encoder != (self.edge_encoder is not None):
            raise ArgumentError("edge encoder presence does not match use_edge_encoder")

    def named_blocks(self) -> dict[str, np.ndarray]:
        """Parameter arrays by stable name. The arrays are the live parameters, not copies."""
        blocks = self.node_encoder.named_blocks("node_encoder")
        if self.edge_encoder is not None:
            blocks.update(self.edge_encoder.named_blocks("edge_encoder"))
        for index, layer in enumerate(self.layers):
            blocks.update(layer.named_blocks(f"layers.{index}"))
        blocks["output.W"] = self.W_out
        blocks["output.b"] = self.b_out
        return blocks

    def state_blocks(self) -> dict[str, np.ndarray]:
        """named_blocks() plus the normalizer: everything a checkpoint stores."""
        blocks = self.named_blocks()
        blocks.update(self.normalizer.named_blocks())
        return blocks

    def parameter_count(self) -> int:
        return sum(block.size for block in self.named_blocks().values())

    def zeros_like(self) -> "ModelParams":
        """Zeroed learnable blocks; the normalizer is copied, not zeroed."""
        return ModelParams(
            self.config,
            self.node_encoder.zeros_like(),
            [layer.zeros_like() for layer in self.layers],
            np.zeros_like(self.W_out),
            np.zeros_like(self.b_out),
            None if self.edge_encoder is None else self.edge_encoder.zeros_like(),
            self.normalizer.copy(),
        )

    def copy(self) -> "ModelParams":
        clone = self.zeros_like()
        source = self.named_blocks()
        for name, block in clone.named_blocks().items():
            block[...] = source[name]
        return clone


def init_params(config: ModelConfig, normalizer: Normalizer | None = None) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases, LayerNorm gamma=1 and beta=0. Identity normalizer by default."""
    rng = np.random.default_rng(config.seed)
    node_encoder = init_mlp(rng, [config.d_in] + [config.d] * config.mlp_depth)
    edge_encoder = None
    if config.use_edge_encoder:
        edge_encoder = init_mlp(rng, [EDGE_ATTR_DIM] + [config.d] * config.mlp_depth)

    widths = config.widths()
    layers = []
    for index in range(config.L):
        width = widths[index]
        message_in = 2 * width + (config.d if config.use_edge_encoder else 0)
        message = init_mlp(rng, [message_in] + [width] * config.mlp_depth)
        project_W = project_b = None
        if config.project_back:
            project_W = glorot_uniform(rng, config.d, 2 * width)
            project_b = np.zeros(config.d)
        layers.append(EdgeConvParams(message, np.ones(2 * width), np.zeros(2 * width), project_W, project_b))

    W_out = glorot_uniform(rng, config.d_out, widths[-1])
    b_out = np.zeros(config.d_out)
    return ModelParams(config, node_encoder, layers, W_out, b_out, edge_encoder, normalizer)


def encode_nodes(features: np.ndarray, params: ModelParams) -> tuple[np.ndarray, MlpCache]:
    """h0_i = f_node(x_i) on standardized features, Tanh-activated."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.config.d_in:
        raise ArgumentError(f"features must have {params.config.d_in} columns, got shape {features.shape}")
    normalizer = params.normalizer
    return mlp_forward((features - normalizer.input_mean) / normalizer.input_scale, params.node_encoder)


def encode_edges(edge_attrs: np.ndarray, params: ModelParams) -> tuple[np.ndarray, MlpCache]:
    """
    z_ij = f_edge(e_ij), Tanh-activated.

    Raises:
        ConfigurationError: If the model was built without an edge encoder.
    """
    if not params.config.use_edge_encoder or params.edge_encoder is None:
        raise ConfigurationError("edge encoder is disabled (use_edge_encoder=False)")
    edge_attrs = np.asarray(edge_attrs, dtype=np.float64).reshape(-1, EDGE_ATTR_DIM)
    return mlp_forward(edge_attrs, params.edge_encoder)


def canonical_edge_order(edges: np.ndarray) -> np.ndarray:
    """Permutation sorting edges by (destination, source)."""
    return np.lexsort((edges[:, 0], edges[:, 1]))


@dataclass
class EdgeConvCache:
    h: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    message: MlpCache
    norm: LayerNormCache
    normalized_out: np.ndarray | None = None


def edge_conv_layer(h: np.ndarray, edges: np.ndarray, edge_codes: np.ndarray | None,
                    layer: EdgeConvParams) -> tuple[np.ndarray, EdgeConvCache]:
    """
    One message-passing layer. Messages are summed per destination in ascending source order.

    Raises:
        ArgumentError: If h does not have the layer's input width.
    """
    width = layer.message.out_dim
    if h.ndim != 2 or h.shape[1] != width:
        raise ArgumentError(f"layer expects node width {width}, got shape {h.shape}")
    order = canonical_edge_order(edges)
    src = edges[order, 0]
    dst = edges[order, 1]

    h_i = h[dst]
    parts = [h_i, h[src] - h_i]
    if edge_codes is not None:
        parts.append(edge_codes[order])
    messages, message_cache = mlp_forward(np.concatenate(parts, axis=1), layer.message)

    aggregated = np.zeros((h.shape[0], width))
    np.add.at(aggregated, dst, messages)
    out, norm_cache = layer_norm(np.concatenate([h, aggregated], axis=1), layer.gamma, layer.beta)
    cache = EdgeConvCache(h, src, dst, message_cache, norm_cache)
    if layer.project_W is not None:
        cache.normalized_out = out
        out = out @ layer.project_W.T + layer.project_b
    return out, cache


def edge_conv_backward(grad_out: np.ndarray, layer: EdgeConvParams, cache: EdgeConvCache,
                       with_edge_codes: bool) -> tuple[np.ndarray, np.ndarray | None, EdgeConvParams]:
    """Returns (d h, d edge codes in canonical edge order or None, parameter gradients)."""
    grads = layer.zeros_like()
    if layer.project_W is not None:
        grads.project_W = grad_out.T @ cache.normalized_out
        grads.project_b = grad_out.sum(axis=0)
        grad_out = grad_out @ layer.project_W

    d_concat, grads.gamma, grads.beta = layer_norm_backward(grad_out, layer.gamma, cache.norm)
    width = cache.h.shape[1]
    d_h = d_concat[:, :width].copy()
    d_messages = d_concat[:, width:][cache.dst]

    d_inputs, grads.message = mlp_backward(d_messages, layer.message, cache.message)
    d_hi = d_inputs[:, :width]
    d_rel = d_inputs[:, width:2 * width]
    np.add.at(d_h, cache.dst, d_hi - d_rel)
    np.add.at(d_h, cache.src, d_rel)
    d_codes = d_inputs[:, 2 * width:] if with_edge_codes else None
    return d_h, d_codes, grads


@dataclass
class ForwardCache:
    node: MlpCache
    edge: MlpCache | None
    layers: list[EdgeConvCache] = field(default_factory=list)
    h_final: np.ndarray | None = None
    edge_order: np.ndarray | None = None


def _forward(graph: FrameGraph, params: ModelParams) -> tuple[np.ndarray, ForwardCache]:
    h, node_cache = encode_nodes(graph.node_features, params)
    edge_codes = edge_cache = None
    if params.config.use_edge_encoder:
        if graph.edge_attrs is None:
            raise ConfigurationError("model uses an edge encoder but the graph has no edge attributes")
        edge_codes, edge_cache = encode_edges(graph.edge_attrs, params)
    cache = ForwardCache(node_cache, edge_cache)
    edges = np.asarray(graph.edges, dtype=np.int64).reshape(-1, 2)
    for layer in params.layers:
        h, layer_cache = edge_conv_layer(h, edges, edge_codes, layer)
        cache.layers.append(layer_cache)
    cache.h_final = h
    cache.edge_order = canonical_edge_order(edges)
    return (h @ params.W_out.T + params.b_out) * params.normalizer.label_scale, cache


def model_forward(graph: FrameGraph, params: ModelParams) -> np.ndarray:
    """Predicted accelerations, shape (N, 3)."""
    predictions, _ = _forward(graph, params)
    return predictions


def model_backward(graph: FrameGraph, params: ModelParams,
                   labels: np.ndarray | None = None) -> tuple[float, ModelParams]:
    """
    MSE loss against `labels` (default: graph.labels) and its exact gradient.

    Returns:
        (loss, gradients shaped like params)
    """
    labels = graph.labels if labels is None else np.asarray(labels, dtype=np.float64)
    predictions, cache = _forward(graph, params)
    loss = mse_loss(predictions, labels)
    d_pred = mse_grad(predictions, labels) * params.normalizer.label_scale

    grads = params.zeros_like()
    grads.W_out = d_pred.T @ cache.h_final
    grads.b_out = d_pred.sum(axis=0)
    d_h = d_pred @ params.W_out

    use_codes = params.config.use_edge_encoder
    d_codes_total = None
    for index in range(len(params.layers) - 1, -1, -1):
        d_h, d_codes, grads.layers[index] = edge_conv_backward(
            d_h, params.layers[index], cache.layers[index], use_codes
        )
        if d_codes is not None:
            d_codes_total = d_codes if d_codes_total is None else d_codes_total + d_codes

    if use_codes:
        # Layer caches hold codes in canonical order; map back to graph edge order.
        d_codes_graph = np.empty_like(d_codes_total)
        d_codes_graph[cache.edge_order] = d_codes_total
        _, grads.edge_encoder = mlp_backward(d_codes_graph, params.edge_encoder, cache.edge)
    _, grads.node_encoder = mlp_backward(d_h, params.node_encoder, cache.node)
    return loss, grads
