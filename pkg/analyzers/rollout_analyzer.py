"""
Rollout Analyzer Module

Runs the leapfrog integrator with model-predicted accelerations, compares the
result with the direct-summation simulation step by step and times both.

Usage:
    analyzer = RolloutAnalyzer(SurrogateModel(params, graph_config), physics)
    report = analyzer.analyze({"seed-7": spiral_galaxy(25, seed=7)})
    write_errors_csv(report, "rollout.csv")
"""

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from learning.gnn_model import ModelParams, model_forward
from learning.graph_builder import GraphConfig, build_graph
from simulation.physics_core import ParticleSet, PhysicsParams, Trace, drift, half_kick, pairwise_accelerations, simulate
from storage.dataset_store import assemble_features
from utils.common_utils import ArgumentError, atomic_write_bytes, thread_count_override

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ("mse_pos", "mse_vel", "mse_acc")
MIN_REPETITIONS = 3
# Relative spread of classical timings above which the benchmark warns.
TIMING_SPREAD_WARNING = 0.2


class AccelerationModel(Protocol):
    """Anything that maps the current frame (plus past positions) to accelerations."""
    history_depth: int

    def predict(self, positions: np.ndarray, masses: np.ndarray, past: list[np.ndarray]) -> np.ndarray:
        ...


class SurrogateModel:
    """The trained network behind the AccelerationModel interface."""

    def __init__(self, params: ModelParams, graph_config: GraphConfig):
        config = params.config
        if config.history_depth is not None:
            history_depth = config.history_depth
        elif (config.d_in - 4) % 3 == 0 and config.d_in >= 4:
            history_depth = (config.d_in - 4) // 3
        else:
            raise ArgumentError(f"d_in={config.d_in} is not 4 + 3*h for any history depth h")
        if config.use_edge_encoder and not graph_config.with_edge_attrs:
            raise ArgumentError("model uses an edge encoder but graph_config builds graphs without edge attributes")
        self.params = params
        self.graph_config = graph_config
        self.history_depth = history_depth

    def predict(self, positions: np.ndarray, masses: np.ndarray, past: list[np.ndarray]) -> np.ndarray:
        features = assemble_features(positions, masses, past)
        graph = build_graph(positions, features, np.zeros_like(positions), self.graph_config)
        return model_forward(graph, self.params)


class ExactPhysicsModel:
    """Returns direct-summation accelerations; a rollout with it reproduces simulate()."""
    history_depth = 0

    def __init__(self, G: float, eps: float):
        self.G = G
        self.eps = eps

    def predict(self, positions: np.ndarray, masses: np.ndarray, past: list[np.ndarray]) -> np.ndarray:
        return pairwise_accelerations(positions, masses, self.G, self.eps)


def _as_model(model, graph_config: GraphConfig | None) -> AccelerationModel:
    if isinstance(model, ModelParams):
        if graph_config is None:
            raise ArgumentError("a graph_config is required to roll out raw model parameters")
        return SurrogateModel(model, graph_config)
    return model


def rollout(model, initial: ParticleSet, params: PhysicsParams,
            graph_config: GraphConfig | None = None, steps: int | None = None) -> Trace:
    """
    Kick-drift-kick integration with one model prediction per step.

    At each step the velocities are half-kicked with the current prediction,
    positions drift, the model predicts accelerations at the new positions
    (from a KNN graph rebuilt from scratch) and the velocities receive the
    second half-kick. History features come from the rollout's own frames;
    frames before the first are padded with the first frame, and the initial
    prediction sees the initial positions repeated.

    Args:
        model: ModelParams (wrapped with graph_config) or any AccelerationModel.
        initial: Starting state.
        params: dt, G, eps and the default step count.
        graph_config: KNN settings, required when model is ModelParams.
        steps: Number of steps, default params.steps.

    Returns:
        A Trace whose accelerations are the model's predictions.

    Raises:
        ArgumentError: On config mismatch or steps < 1.
    """
    model = _as_model(model, graph_config)
    total = params.steps if steps is None else steps
    if total < 1:
        raise ArgumentError(f"steps must be >= 1, got {total}")

    n = initial.n
    h = model.history_depth
    masses = initial.masses
    positions = np.empty((total, n, 3))
    velocities = np.empty((total, n, 3))
    accelerations = np.empty((total, n, 3))
    step_seconds = []

    initial_accel = np.asarray(model.predict(initial.positions, masses, [initial.positions] * h), dtype=np.float64)
    r, v, a = initial.positions, initial.velocities, initial_accel
    for t in range(total):
        started = time.perf_counter()
        v_half = half_kick(v, a, params.dt)
        r = drift(r, v_half, params.dt)
        positions[t] = r
        past = [positions[max(t - lag, 0)] for lag in range(1, h + 1)]
        a = np.asarray(model.predict(r, masses, past), dtype=np.float64)
        if a.shape != (n, 3):
            raise ArgumentError(f"model returned accelerations of shape {a.shape}, expected ({n}, 3)")
        v = half_kick(v_half, a, params.dt)
        velocities[t] = v
        accelerations[t] = a
        step_seconds.append(time.perf_counter() - started)

    logger.debug(f"Rolled out {total} steps for {n} bodies")
    return Trace(positions, velocities, accelerations, masses.copy(), initial, initial_accel, step_seconds)


def _per_step_mse(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    diff = pred - truth
    return np.mean((diff * diff).reshape(diff.shape[0], -1), axis=1)


def rollout_errors(pred: Trace, truth: Trace) -> np.ndarray:
    """
    Per-step MSE over all particles and components.

    Returns:
        (T + 1, 3) array with columns ERROR_COLUMNS. Row 0 compares the initial
        states and initial accelerations; row t compares frame t - 1.

    Raises:
        ArgumentError: If the traces differ in N or T.
    """
    if pred.positions.shape != truth.positions.shape:
        raise ArgumentError(f"trace shapes differ: {pred.positions.shape} vs {truth.positions.shape}")
    columns = []
    for first_pred, first_truth, frames_pred, frames_truth in (
        (pred.initial.positions, truth.initial.positions, pred.positions, truth.positions),
        (pred.initial.velocities, truth.initial.velocities, pred.velocities, truth.velocities),
        (pred.initial_accelerations, truth.initial_accelerations, pred.accelerations, truth.accelerations),
    ):
        stacked_pred = np.concatenate([first_pred[np.newaxis], frames_pred])
        stacked_truth = np.concatenate([first_truth[np.newaxis], frames_truth])
        columns.append(_per_step_mse(stacked_pred, stacked_truth))
    return np.stack(columns, axis=1)


def cumulative_errors(series: np.ndarray) -> np.ndarray:
    """Running sums of each error column."""
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] == 0:
        raise ArgumentError("cannot accumulate an empty series")
    return np.cumsum(series, axis=0)


def average_over_scenes(series_list: list[np.ndarray]) -> np.ndarray:
    """Per-step mean of equally long error series."""
    if not series_list:
        raise ArgumentError("no series to average")
    shapes = {np.shape(series) for series in series_list}
    if len(shapes) != 1:
        raise ArgumentError(f"series have different shapes: {sorted(shapes)}")
    return np.mean(np.stack(series_list), axis=0)


@dataclass
class SceneRollout:
    scene: str
    n: int
    errors: np.ndarray
    cumulative: np.ndarray
    surrogate_seconds: float
    reference_seconds: float
    steps: int

    @property
    def mean_step_seconds(self) -> tuple[float, float]:
        """(surrogate, reference) wall-clock per step."""
        return self.surrogate_seconds / self.steps, self.reference_seconds / self.steps


@dataclass
class RolloutReport:
    scenes: list[SceneRollout] = field(default_factory=list)

    @property
    def averaged(self) -> np.ndarray:
        return average_over_scenes([scene.errors for scene in self.scenes])

    @property
    def averaged_cumulative(self) -> np.ndarray:
        return cumulative_errors(self.averaged)

    @property
    def surrogate_seconds(self) -> float:
        return sum(scene.surrogate_seconds for scene in self.scenes)

    @property
    def reference_seconds(self) -> float:
        return sum(scene.reference_seconds for scene in self.scenes)


class RolloutAnalyzer:
    """
    Compares model rollouts with ground-truth simulations for a set of scenes.
    """

    def __init__(self, model: AccelerationModel, physics: PhysicsParams, steps: int | None = None):
        """
        Args:
            model: Acceleration model used inside the integrator.
            physics: Integration parameters for both runs.
            steps: Steps per scene, default physics.steps.
        """
        self.model = model
        self.physics = physics
        self.steps = physics.steps if steps is None else steps

    def run_scene(self, scene: str, initial: ParticleSet) -> SceneRollout:
        started = time.perf_counter()
        truth = simulate(initial, self.physics, self.steps)
        reference_seconds = time.perf_counter() - started

        started = time.perf_counter()
        pred = rollout(self.model, initial, self.physics, steps=self.steps)
        surrogate_seconds = time.perf_counter() - started

        errors = rollout_errors(pred, truth)
        result = SceneRollout(scene, initial.n, errors, cumulative_errors(errors),
                              surrogate_seconds, reference_seconds, self.steps)
        surrogate_step, reference_step = result.mean_step_seconds
        logger.info(
            f"Scene {scene}: final mse_pos={errors[-1, 0]:.3e} mse_vel={errors[-1, 1]:.3e} "
            f"mse_acc={errors[-1, 2]:.3e}; step time surrogate={surrogate_step:.3e}s reference={reference_step:.3e}s",
            extra={"scene": scene, "n": initial.n},
        )
        return result

    def analyze(self, scenes: dict[str, ParticleSet]) -> RolloutReport:
        if not scenes:
            raise ArgumentError("no scenes to analyze")
        report = RolloutReport()
        for scene, initial in scenes.items():
            report.scenes.append(self.run_scene(scene, initial))
        return report


@dataclass(frozen=True)
class BenchmarkRow:
    scene: str
    n: int
    t_classical: float
    t_surrogate: float

    @property
    def speedup(self) -> float:
        return self.t_classical / self.t_surrogate


def benchmark_speedup(model: AccelerationModel, scenes: dict[str, ParticleSet], params: PhysicsParams,
                      repetitions: int = MIN_REPETITIONS, steps: int | None = None,
                      threads: int = 1) -> list[BenchmarkRow]:
    """
    Median wall-clock of `steps` full steps for simulate() and rollout() on each scene.

    Both timed paths include everything their step loop does (graph building
    and feature assembly for the surrogate). Both run with the same worker cap.

    Raises:
        ArgumentError: If repetitions < 3.
    """
    if repetitions < MIN_REPETITIONS:
        raise ArgumentError(f"repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")
    total = params.steps if steps is None else steps
    rows = []
    with thread_count_override(threads):
        for scene, initial in scenes.items():
            classical, surrogate = [], []
            for _ in range(repetitions):
                started = time.perf_counter()
                truth = simulate(initial, params, total)
                classical.append(time.perf_counter() - started)

                started = time.perf_counter()
                pred = rollout(model, initial, params, steps=total)
                surrogate.append(time.perf_counter() - started)
                if pred.frame_count != truth.frame_count:
                    raise ArgumentError(f"timed traces differ in length for scene {scene}")

            median = float(np.median(classical))
            spread = (max(classical) - min(classical)) / median if median > 0 else 0.0
            if spread > TIMING_SPREAD_WARNING:
                logger.warning(f"Classical timings for scene {scene} vary by {spread:.0%} across repetitions")
            row = BenchmarkRow(scene, initial.n, median, float(np.median(surrogate)))
            logger.info(f"Scene {scene} (n={row.n}): classical={row.t_classical:.4f}s "
                        f"surrogate={row.t_surrogate:.4f}s speedup={row.speedup:.3f}",
                        extra={"scene": scene, "n": row.n, "speedup": row.speedup})
            rows.append(row)
    return rows


def fit_loglog_slope(ns, seconds) -> float:
    """Least-squares slope of log(seconds) against log(n)."""
    ns = np.asarray(ns, dtype=np.float64)
    seconds = np.asarray(seconds, dtype=np.float64)
    if ns.shape != seconds.shape or ns.size < 2:
        raise ArgumentError("need at least two (n, seconds) pairs of equal length")
    if np.any(ns <= 0) or np.any(seconds <= 0):
        raise ArgumentError("n and seconds must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(ns), np.log(seconds), 1)
    return float(slope)


def _write_rows(path: str | os.PathLike, header: list[str], rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))
    logger.info(f"Wrote {path}")


def _error_rows(report: RolloutReport, series_of) -> tuple[list[str], list]:
    header = ["step", *ERROR_COLUMNS]
    if len(report.scenes) == 1:
        series = series_of(report.scenes[0])
        return header, [[step, *map(float, row)] for step, row in enumerate(series)]
    rows = []
    for scene in report.scenes:
        rows.extend([step, *map(float, row), scene.scene] for step, row in enumerate(series_of(scene)))
    averaged = np.mean(np.stack([series_of(scene) for scene in report.scenes]), axis=0)
    rows.extend([step, *map(float, row), "mean"] for step, row in enumerate(averaged))
    return header + ["scene"], rows


def write_errors_csv(report: RolloutReport, path: str | os.PathLike) -> None:
    """`step,mse_pos,mse_vel,mse_acc`, plus a `scene` column (and `mean` rows) for several scenes."""
    header, rows = _error_rows(report, lambda scene: scene.errors)
    _write_rows(path, header, rows)


def write_cumulative_csv(report: RolloutReport, path: str | os.PathLike) -> None:
    header, rows = _error_rows(report, lambda scene: scene.cumulative)
    _write_rows(path, header, rows)


def write_benchmark_csv(rows: list[BenchmarkRow], path: str | os.PathLike) -> None:
    _write_rows(path, ["scene", "n", "t_classical_s", "t_surrogate_s", "speedup"],
                [[row.scene, row.n, row.t_classical, row.t_surrogate, row.speedup] for row in rows])
