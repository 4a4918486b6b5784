"""
Labelled scene datasets and their binary file format.

File layout (little-endian):
    header    = b"NBDS" | version u32 | G f64 | eps f64 | dt f64 | scene_count u32
    per scene = N u32 | T u32 | masses N*f64 | positions T*N*3*f64
                | velocities T*N*3*f64 | accelerations T*N*3*f64

Files hold raw trajectories; node features are materialized from them for a
chosen history depth.
"""

import csv
import io
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from learning.graph_builder import FrameGraph, GraphConfig, build_graph
from simulation.physics_core import PhysicsParams, Trace
from utils.common_utils import ArgumentError, FormatError, atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"NBDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIdddI")
_SCENE_HEADER = struct.Struct("<II")
_F64 = np.dtype("<f8")


class DatasetFormatError(FormatError):
    """Dataset file is malformed."""
    pass


@dataclass(frozen=True)
class SceneDataset:
    """
    One simulated scene: masses (N,) and per-frame positions, velocities and
    accelerations (T, N, 3). Accelerations are the regression labels.
    """
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    history_depth: int = 0
    physics: PhysicsParams | None = None

    def __post_init__(self):
        t, n = self.positions.shape[:2]
        for name in ("positions", "velocities", "accelerations"):
            if getattr(self, name).shape != (t, n, 3):
                raise ArgumentError(f"{name} must have shape ({t}, {n}, 3)")
        if self.masses.shape != (n,):
            raise ArgumentError(f"masses must have shape ({n},)")
        if not 0 <= self.history_depth < t:
            raise ArgumentError(f"history_depth must satisfy 0 <= h < T={t}, got {self.history_depth}")

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def d_in(self) -> int:
        return feature_width(self.history_depth)

    def features(self, t: int) -> np.ndarray:
        """Feature matrix of frame t: [position(t), mass, position(t-1), ..., position(t-h)]."""
        past = [self.positions[max(t - lag, 0)] for lag in range(1, self.history_depth + 1)]
        return assemble_features(self.positions[t], self.masses, past)

    def labels(self, t: int) -> np.ndarray:
        return self.accelerations[t]


def feature_width(history_depth: int) -> int:
    return 3 + 1 + 3 * history_depth


def assemble_features(current: np.ndarray, masses: np.ndarray, past: list[np.ndarray]) -> np.ndarray:
    """Row i is [current_i, mass_i, past[0]_i, past[1]_i, ...]."""
    blocks = [current, masses.reshape(-1, 1)] + list(past)
    return np.concatenate(blocks, axis=1)


def record_simulation(trace: Trace, history_depth: int = 0, physics: PhysicsParams | None = None) -> SceneDataset:
    """
    Turns a trace into a labelled scene; frames before the first are padded with the first frame.

    Raises:
        ArgumentError: If history_depth >= frame count or is negative.
    """
    if history_depth < 0 or history_depth >= trace.frame_count:
        raise ArgumentError(f"history_depth must satisfy 0 <= h < T={trace.frame_count}, got {history_depth}")
    return SceneDataset(
        masses=trace.masses.copy(),
        positions=trace.positions.copy(),
        velocities=trace.velocities.copy(),
        accelerations=trace.accelerations.copy(),
        history_depth=history_depth,
        physics=physics,
    )


@dataclass(frozen=True)
class DatasetFile:
    path: Path
    version: int
    scene_count: int
    G: float
    eps: float
    dt: float


def _common_physics(scenes: list[SceneDataset], physics: PhysicsParams | None) -> PhysicsParams:
    if physics is not None:
        return physics
    found = {scene.physics for scene in scenes if scene.physics is not None}
    if not found:
        return PhysicsParams()
    keys = {(p.G, p.eps, p.dt) for p in found}
    if len(keys) > 1:
        raise ArgumentError("scenes disagree on G, eps or dt; a dataset file holds one physics header")
    return next(iter(found))


def encode_dataset(scenes: list[SceneDataset], physics: PhysicsParams | None = None) -> bytes:
    physics = _common_physics(scenes, physics)
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, physics.G, physics.eps, physics.dt, len(scenes))]
    for scene in scenes:
        chunks.append(_SCENE_HEADER.pack(scene.n, scene.frame_count))
        for array in (scene.masses, scene.positions, scene.velocities, scene.accelerations):
            chunks.append(np.ascontiguousarray(array, dtype=_F64).tobytes())
    return b"".join(chunks)


def save_dataset(scenes: list[SceneDataset], path: str | os.PathLike,
                 physics: PhysicsParams | None = None) -> DatasetFile:
    """
    Writes scenes atomically.

    Args:
        scenes: Scenes to store.
        path: Destination file.
        physics: Header values; defaults to the scenes' own physics (which must agree).
    """
    physics = _common_physics(scenes, physics)
    atomic_write_bytes(path, encode_dataset(scenes, physics))
    logger.info(f"Saved {len(scenes)} scenes to {path}")
    return DatasetFile(Path(path), FORMAT_VERSION, len(scenes), physics.G, physics.eps, physics.dt)


def _read_header(payload: bytes, path: Path) -> DatasetFile:
    if len(payload) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header", len(payload))
    magic, version, G, eps, dt, scene_count = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}", 4)
    return DatasetFile(path, version, scene_count, G, eps, dt)


def _read_file(path: str | os.PathLike) -> tuple[Path, bytes]:
    path = Path(path)
    try:
        return path, path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise DatasetFormatError(f"{path}: cannot read file: {e}", 0) from e


def read_dataset_header(path: str | os.PathLike) -> DatasetFile:
    path, payload = _read_file(path)
    return _read_header(payload, path)


def decode_dataset(payload: bytes, path: Path, history_depth: int = 0) -> list[SceneDataset]:
    header = _read_header(payload, path)
    try:
        physics = PhysicsParams(G=header.G, eps=header.eps, dt=header.dt)
    except ValidationError as e:
        raise DatasetFormatError(f"{path}: invalid physics header: {e}", 8) from e
    offset = _HEADER.size
    scenes = []

    def take(count: int) -> np.ndarray:
        nonlocal offset
        size = count * _F64.itemsize
        if offset + size > len(payload):
            raise DatasetFormatError(f"{path}: truncated scene data", offset)
        array = np.frombuffer(payload, dtype=_F64, count=count, offset=offset).astype(np.float64)
        offset += size
        return array

    for index in range(header.scene_count):
        if offset + _SCENE_HEADER.size > len(payload):
            raise DatasetFormatError(f"{path}: truncated header of scene {index}", offset)
        n, t = _SCENE_HEADER.unpack_from(payload, offset)
        if n < 1 or t < 1:
            raise DatasetFormatError(f"{path}: scene {index} has N={n}, T={t}", offset)
        offset += _SCENE_HEADER.size
        masses = take(n)
        positions = take(t * n * 3).reshape(t, n, 3)
        velocities = take(t * n * 3).reshape(t, n, 3)
        accelerations = take(t * n * 3).reshape(t, n, 3)
        if history_depth >= t:
            raise ArgumentError(f"history_depth {history_depth} >= frame count {t} of scene {index}")
        scenes.append(SceneDataset(masses, positions, velocities, accelerations, history_depth, physics))

    if offset != len(payload):
        raise DatasetFormatError(f"{path}: {len(payload) - offset} trailing bytes", offset)
    return scenes


def load_dataset(path: str | os.PathLike, history_depth: int = 0) -> list[SceneDataset]:
    """
    Reads every scene of a dataset file.

    Raises:
        DatasetFormatError: On bad magic, version, truncation or trailing bytes.
        FileNotFoundError: If the file does not exist.
    """
    path, payload = _read_file(path)
    scenes = decode_dataset(payload, path, history_depth)
    logger.info(f"Loaded {len(scenes)} scenes from {path}")
    return scenes


def split_train_test(scenes: list, train_fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """
    Scene-level split: |train| = round(train_fraction * |scenes|), order shuffled by `seed`.

    Raises:
        ArgumentError: With fewer than 2 scenes or train_fraction outside (0, 1).
    """
    if len(scenes) < 2:
        raise ArgumentError(f"need at least 2 scenes to split, got {len(scenes)}")
    if not 0 < train_fraction < 1:
        raise ArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    train_count = int(round(train_fraction * len(scenes)))
    train_count = min(max(train_count, 1), len(scenes) - 1)
    order = np.random.default_rng(seed).permutation(len(scenes))
    train = [scenes[i] for i in sorted(order[:train_count])]
    test = [scenes[i] for i in sorted(order[train_count:])]
    return train, test


def frame_graphs(scene: SceneDataset, config: GraphConfig) -> list[FrameGraph]:
    """One KNN graph per frame of the scene, labelled with that frame's accelerations."""
    return [build_graph(scene.positions[t], scene.features(t), scene.labels(t), config)
            for t in range(scene.frame_count)]


TRAJECTORY_COLUMNS = ("step", "particle", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az")


def write_trajectory_csv(scene: SceneDataset, path: str | os.PathLike) -> Path:
    """Writes one row per (frame, particle); frame t is numbered step t + 1."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for t in range(scene.frame_count):
        for i in range(scene.n):
            writer.writerow([t + 1, i, *scene.positions[t, i].tolist(),
                             *scene.velocities[t, i].tolist(), *scene.accelerations[t, i].tolist()])
    target = atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))
    logger.info(f"Exported {scene.frame_count} frames of {scene.n} bodies to {target}")
    return target
