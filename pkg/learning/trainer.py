"""
Mini-batch Adam training of the surrogate and held-out evaluation by scene.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from learning.gnn_model import ModelConfig, ModelParams, Normalizer, init_params, model_backward, model_forward
from learning.graph_builder import FrameGraph
from learning.neural_core import AdamState, adam_step, mse_loss
from utils.common_utils import ArgumentError, get_thread_count

logger = logging.getLogger(__name__)

EPOCH_LOG_HEADER = "epoch,mean_loss,seconds"


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(100, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps_adam: float = Field(1e-8, gt=0)
    seed: int = 0
    train_fraction: float = Field(0.9, gt=0, lt=1)
    threads: int | None = Field(None, ge=1)


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    test_losses: dict[str, float] = field(default_factory=dict)
    steps: int = 0

    def csv_lines(self) -> list[str]:
        lines = [EPOCH_LOG_HEADER]
        for epoch, (loss, seconds) in enumerate(zip(self.epoch_losses, self.epoch_seconds), start=1):
            lines.append(f"{epoch},{loss!r},{seconds:.6f}")
        return lines


def _check_graphs(graphs: list[FrameGraph], d_in: int) -> None:
    if not graphs:
        raise ArgumentError("training needs at least one graph")
    for index, graph in enumerate(graphs):
        if graph.node_features.shape[1] != d_in:
            raise ArgumentError(
                f"graph {index} has {graph.node_features.shape[1]} feature columns, model expects {d_in}"
            )


def _batch_gradient(params: ModelParams, batch: list[FrameGraph], pool: ThreadPoolExecutor | None,
                    objective_scale: float = 1.0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-graph loss of the batch and its averaged gradient, multiplied by `objective_scale`."""
    if pool is None:
        results = [model_backward(graph, params) for graph in batch]
    else:
        results = list(pool.map(lambda graph: model_backward(graph, params), batch))

    total = 0.0
    summed: dict[str, np.ndarray] | None = None
    # Reduce in batch order so the result does not depend on worker scheduling.
    for loss, grads in results:
        total += loss
        blocks = grads.named_blocks()
        if summed is None:
            summed = {name: block.copy() for name, block in blocks.items()}
        else:
            for name, block in blocks.items():
                summed[name] += block
    scale = objective_scale / len(batch)
    for block in summed.values():
        block *= scale
    return total / len(batch), summed


def train(graphs: list[FrameGraph], config: TrainConfig | None = None,
          model_config: ModelConfig | None = None,
          test_scenes: dict[str, list[FrameGraph]] | None = None,
          params: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    """
    Trains the surrogate on one graph per (scene, frame).

    Each epoch shuffles the graphs with a generator seeded by (seed, epoch),
    cuts them into batches of `batch_size`, and takes one Adam step per batch
    on the batch-averaged MSE in standardized label units (the physical MSE
    divided by the squared label scale). Fresh parameters get a Normalizer
    fitted on `graphs`; given parameters keep theirs. Reported losses are in
    physical units.

    Args:
        graphs: Training graphs. Only these contribute to gradients.
        config: Optimizer and loop settings.
        model_config: Architecture; d_in defaults to the graphs' feature width.
        test_scenes: Optional held-out graphs by scene, evaluated after the last epoch.
        params: Optional starting parameters (otherwise init_params(model_config)).

    Returns:
        (trained params, history)

    Raises:
        ArgumentError: On an empty graph list or inconsistent feature widths.
    """
    config = config or TrainConfig()
    if not graphs:
        raise ArgumentError("training needs at least one graph")
    if params is None:
        if model_config is None:
            model_config = ModelConfig(d_in=graphs[0].node_features.shape[1])
        _check_graphs(graphs, model_config.d_in)
        params = init_params(model_config, Normalizer.fit(graphs))
    _check_graphs(graphs, params.config.d_in)
    objective_scale = 1.0 / params.normalizer.label_scale ** 2

    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps_adam=config.eps_adam)
    history = TrainHistory()
    live = params.named_blocks()
    workers = config.threads if config.threads is not None else get_thread_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    logger.info(
        f"Training on {len(graphs)} graphs for {config.epochs} epochs "
        f"(batch_size={config.batch_size}, lr={config.lr}, parameters={params.parameter_count()}, "
        f"label_scale={params.normalizer.label_scale:.3e})"
    )
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = np.random.default_rng([config.seed, epoch]).permutation(len(graphs))
            batch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = [graphs[i] for i in order[start:start + config.batch_size]]
                loss, grads = _batch_gradient(params, batch, pool, objective_scale)
                adam_step(live, grads, state)
                batch_losses.append(loss)
            seconds = time.perf_counter() - started
            mean_loss = float(np.mean(batch_losses))
            history.epoch_losses.append(mean_loss)
            history.epoch_seconds.append(seconds)
            logger.info(f"{epoch},{mean_loss!r},{seconds:.6f}",
                        extra={"epoch": epoch, "loss": mean_loss, "seconds": seconds})
    finally:
        if pool is not None:
            pool.shutdown()

    history.steps = state.t
    if test_scenes:
        history.test_losses = evaluate_loss(params, test_scenes)
        for scene, loss in history.test_losses.items():
            logger.info(f"Test loss for scene {scene}: {loss:.6e}", extra={"scene": scene, "loss": loss})
    return params, history


def evaluate_loss(params: ModelParams, scenes: dict[str, list[FrameGraph]]) -> dict[str, float]:
    """
    Mean per-graph MSE within each scene. Parameters are not modified.

    Raises:
        ArgumentError: If a scene has no graphs.
    """
    losses = {}
    for scene, graphs in scenes.items():
        if not graphs:
            raise ArgumentError(f"scene {scene!r} has no graphs")
        per_graph = [mse_loss(model_forward(graph, params), graph.labels) for graph in graphs]
        losses[scene] = float(np.mean(per_graph))
    return losses


def stepwise_losses(params: ModelParams, scenes: dict[str, list[FrameGraph]]) -> dict[str, list[float]]:
    """Per-frame MSE series of each scene, in frame order."""
    series = {}
    for scene, graphs in scenes.items():
        if not graphs:
            raise ArgumentError(f"scene {scene!r} has no graphs")
        series[scene] = [mse_loss(model_forward(graph, params), graph.labels) for graph in graphs]
    return series
