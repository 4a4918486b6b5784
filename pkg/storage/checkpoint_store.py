"""
Model checkpoints: architecture, graph and physics settings plus every parameter block
and the fitted normalizer.

File layout (little-endian):
    b"NBDM" | version u32
    config  = d_in u32 | d u32 | L u32 | d_out u32 | use_edge_encoder u8 | project_back u8
              | history_depth u32 | k u32 | G f64 | eps f64 | dt f64
    blocks  = count u32, then per block: name_len u16 | name utf-8 | rank u8 | dims u32[rank] | data f64
"""

import logging
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from learning.gnn_model import ModelConfig, ModelParams, init_params
from learning.graph_builder import GraphConfig
from simulation.physics_core import PhysicsParams
from utils.common_utils import ArgumentError, FormatError, atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"NBDM"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sI")
_CONFIG = struct.Struct("<IIIIBBIIddd")
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")
_F64 = np.dtype("<f8")
_NODE_ENCODER_WEIGHT = re.compile(r"^node_encoder\.W(\d+)$")


class CheckpointFormatError(FormatError):
    """Checkpoint file is malformed or inconsistent with its embedded config."""
    pass


@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    graph_config: GraphConfig
    physics: PhysicsParams

    @property
    def history_depth(self) -> int:
        return self.params.config.history_depth or 0


def encode_checkpoint(params: ModelParams, graph_config: GraphConfig, physics: PhysicsParams) -> bytes:
    config = params.config
    if config.use_edge_encoder and not graph_config.with_edge_attrs:
        raise ArgumentError("a model with an edge encoder needs graphs with edge attributes")
    history_depth = config.history_depth if config.history_depth is not None else (config.d_in - 4) // 3
    chunks = [
        _PREAMBLE.pack(MAGIC, FORMAT_VERSION),
        _CONFIG.pack(config.d_in, config.d, config.L, config.d_out, int(config.use_edge_encoder),
                     int(config.project_back), history_depth, graph_config.k,
                     physics.G, physics.eps, physics.dt),
    ]
    blocks = params.state_blocks()
    chunks.append(_COUNT.pack(len(blocks)))
    for name, block in blocks.items():
        encoded = name.encode("utf-8")
        chunks.append(_NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_RANK.pack(block.ndim))
        chunks.append(struct.pack(f"<{block.ndim}I", *block.shape))
        chunks.append(np.ascontiguousarray(block, dtype=_F64).tobytes())
    return b"".join(chunks)


def save_checkpoint(path: str | os.PathLike, params: ModelParams, graph_config: GraphConfig,
                    physics: PhysicsParams) -> Path:
    """Writes the checkpoint atomically and returns its path."""
    target = atomic_write_bytes(path, encode_checkpoint(params, graph_config, physics))
    logger.info(f"Saved checkpoint with {params.parameter_count()} parameters to {target}")
    return target


class _Reader:
    def __init__(self, payload: bytes, path: Path):
        self.payload = payload
        self.path = path
        self.offset = 0

    def unpack(self, layout: struct.Struct, what: str) -> tuple:
        if self.offset + layout.size > len(self.payload):
            raise CheckpointFormatError(f"{self.path}: truncated {what}", self.offset)
        values = layout.unpack_from(self.payload, self.offset)
        self.offset += layout.size
        return values

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointFormatError(f"{self.path}: truncated {what}", self.offset)
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk


def _infer_mlp_depth(names: list[str]) -> int:
    indices = [int(match.group(1)) for match in map(_NODE_ENCODER_WEIGHT.match, names) if match]
    return max(indices) + 1 if indices else 0


def decode_checkpoint(payload: bytes, path: Path) -> Checkpoint:
    reader = _Reader(payload, path)
    magic, version = reader.unpack(_PREAMBLE, "preamble")
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}", 4)

    config_offset = reader.offset
    (d_in, d, L, d_out, use_edge, project_back, history_depth, k, G, eps, dt) = reader.unpack(_CONFIG, "config block")
    (count,) = reader.unpack(_COUNT, "block count")

    blocks: dict[str, np.ndarray] = {}
    for index in range(count):
        block_offset = reader.offset
        (name_len,) = reader.unpack(_NAME_LEN, f"name length of block {index}")
        try:
            name = reader.take(name_len, f"name of block {index}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"{path}: block {index} name is not UTF-8", block_offset) from e
        (rank,) = reader.unpack(_RANK, f"rank of {name}")
        shape = reader.unpack(struct.Struct(f"<{rank}I"), f"dims of {name}")
        size = int(np.prod(shape, dtype=np.int64))
        data = reader.take(size * _F64.itemsize, f"data of {name}")
        if name in blocks:
            raise CheckpointFormatError(f"{path}: duplicate block {name!r}", block_offset)
        blocks[name] = np.frombuffer(data, dtype=_F64).astype(np.float64).reshape(shape)

    if reader.offset != len(payload):
        raise CheckpointFormatError(f"{path}: {len(payload) - reader.offset} trailing bytes", reader.offset)

    try:
        model_config = ModelConfig(
            d_in=d_in, d=d, L=L, d_out=d_out, use_edge_encoder=bool(use_edge),
            project_back=bool(project_back), mlp_depth=_infer_mlp_depth(list(blocks)),
            history_depth=history_depth,
        )
        graph_config = GraphConfig(k=k, with_edge_attrs=bool(use_edge))
        physics = PhysicsParams(G=G, eps=eps, dt=dt)
    except ValidationError as e:
        raise CheckpointFormatError(f"{path}: invalid config block: {e}", config_offset) from e

    # The seeded initialization provides the expected block names and shapes.
    params = init_params(model_config)
    expected = params.state_blocks()
    if set(expected) != set(blocks):
        missing = sorted(set(expected) - set(blocks))
        extra = sorted(set(blocks) - set(expected))
        raise CheckpointFormatError(f"{path}: block names disagree with config (missing={missing}, extra={extra})",
                                    config_offset)
    for name, target in expected.items():
        if target.shape != blocks[name].shape:
            raise CheckpointFormatError(
                f"{path}: block {name!r} has shape {blocks[name].shape}, config implies {target.shape}",
                config_offset,
            )
        target[...] = blocks[name]
    normalizer = params.normalizer
    if np.any(normalizer.input_scale <= 0.0) or normalizer.output_scale[0] <= 0.0:
        raise CheckpointFormatError(f"{path}: normalizer scales must be positive", config_offset)
    return Checkpoint(params, graph_config, physics)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """
    Reads a checkpoint written by save_checkpoint.

    Raises:
        CheckpointFormatError: On bad magic, version, truncation, or blocks that do not fit the config.
        FileNotFoundError: If the file does not exist.
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise CheckpointFormatError(f"{path}: cannot read file: {e}", 0) from e
    checkpoint = decode_checkpoint(payload, path)
    logger.info(f"Loaded checkpoint {path} (d={checkpoint.params.config.d}, L={checkpoint.params.config.L})")
    return checkpoint
