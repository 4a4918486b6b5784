"""
Desk-scale end-to-end runs: learning, closed-loop rollout and timing behaviour.

Run with `pytest -m slow`; deselect with `-m "not slow"`.
"""

import math

import numpy as np
import pytest

from analyzers.rollout_analyzer import (
    SurrogateModel,
    benchmark_speedup,
    cumulative_errors,
    fit_loglog_slope,
    rollout,
    rollout_errors,
)
from learning.gnn_model import ModelConfig, init_params
from learning.graph_builder import GraphConfig
from learning.trainer import TrainConfig, evaluate_loss, train
from simulation.physics_core import ParticleSet, PhysicsParams, pairwise_accelerations, simulate
from simulation.scenarios import GalaxyParams, spiral_galaxy
from storage.dataset_store import frame_graphs, record_simulation

pytestmark = pytest.mark.slow

PHYSICS = PhysicsParams(steps=200)
GRAPHS = GraphConfig(k=8)
# Every 11th frame of a 220-frame run is held out, leaving 200 training frames.
HELD_OUT_EVERY = 11


def scene_frames(seed):
    physics = PhysicsParams(steps=220)
    trace = simulate(spiral_galaxy(25, GalaxyParams(), seed=seed), physics)
    graphs = frame_graphs(record_simulation(trace, 0, physics), GRAPHS)
    held_out = graphs[HELD_OUT_EVERY - 1::HELD_OUT_EVERY]
    training = [graph for t, graph in enumerate(graphs) if t % HELD_OUT_EVERY != HELD_OUT_EVERY - 1]
    return training, held_out


@pytest.fixture(scope="module")
def trained():
    model_config = ModelConfig()
    train_graphs, held_out = scene_frames(seed=1)
    params, history = train(train_graphs, TrainConfig(), model_config)
    # Same weights and normalizer as the starting point of the run above.
    untrained = init_params(model_config, params.normalizer)
    untrained_loss = evaluate_loss(untrained, {"train": train_graphs})["train"]
    return params, history, train_graphs, held_out, untrained_loss


def test_training_gains_three_orders_of_magnitude(trained):
    params, history, train_graphs, held_out, untrained_loss = trained
    assert len(train_graphs) == 200 and len(held_out) == 20
    assert history.epoch_losses[-1] <= history.epoch_losses[0]
    losses = evaluate_loss(params, {"train": train_graphs, "held-out": held_out})
    assert losses["train"] <= 1e-3 * untrained_loss
    assert losses["held-out"] <= 10.0 * losses["train"]


def test_trained_model_beats_predicting_zero(trained):
    params, _, train_graphs, held_out, _ = trained
    for graphs in (train_graphs, held_out):
        zero_loss = np.mean([np.mean(graph.labels ** 2) for graph in graphs])
        assert evaluate_loss(params, {"scene": graphs})["scene"] < 0.1 * zero_loss


def test_rollout_errors_start_at_zero_and_accumulate(trained):
    params = trained[0]
    initial = spiral_galaxy(25, GalaxyParams(), seed=3)
    pred = rollout(SurrogateModel(params, GRAPHS), initial, PHYSICS)
    errors = rollout_errors(pred, simulate(initial, PHYSICS))
    assert errors.shape == (201, 3)
    assert errors[0, 0] == 0.0 and errors[0, 1] == 0.0

    cumulative = cumulative_errors(errors)
    assert np.all(np.diff(cumulative, axis=0) >= 0.0)

    early, late = errors[10, 2], errors[200, 2]
    assert max(early, late) <= 10.0 * min(early, late)


def test_force_kernel_matches_double_loop_at_scale():
    rng = np.random.default_rng(100)
    for index in range(100):
        n = int(rng.integers(2, 201))
        eps = 0.0 if index % 2 else 0.05
        state = ParticleSet(rng.uniform(-1, 1, (n, 3)), np.zeros((n, 3)), rng.uniform(0.1, 1.0, n))
        expected = np.zeros((n, 3))
        positions, masses = state.positions.tolist(), state.masses.tolist()
        for i in range(n):
            for j in range(n):
                if i != j:
                    dx = [positions[j][c] - positions[i][c] for c in range(3)]
                    d2 = dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2 + eps * eps
                    factor = 4.5e-6 * masses[j] / (d2 * math.sqrt(d2))
                    expected[i] += [factor * component for component in dx]
        actual = pairwise_accelerations(state.positions, state.masses, 4.5e-6, eps)
        np.testing.assert_allclose(actual, expected, rtol=1e-12, atol=1e-12 * np.max(np.abs(expected)))


def test_surrogate_scales_better_than_direct_summation():
    sizes = [100, 250, 500, 1000]
    scenes = {f"n-{n}": spiral_galaxy(n, GalaxyParams(), seed=n) for n in sizes}
    model = SurrogateModel(init_params(ModelConfig()), GRAPHS)
    rows = benchmark_speedup(model, scenes, PhysicsParams(steps=3), repetitions=3)
    assert all(row.speedup > 0 for row in rows)
    classical = fit_loglog_slope(sizes, [row.t_classical for row in rows])
    surrogate = fit_loglog_slope(sizes, [row.t_surrogate for row in rows])
    assert classical >= 1.7
    assert surrogate <= 1.5
