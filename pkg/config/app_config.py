# Application Configuration

# PROFILES maps a profile name to overrides of the RunConfig defaults.
#   - 'reference': the reference galaxy and integration parameters and the experiment shape
#                  (10 scenes for each of 3, 25, 50, 100, 250 and 500 bodies, 1000 steps).
#                  These are also the RunConfig defaults.
#   - 'desk':  a scaled-down run that finishes on a desktop CPU in minutes.
# Config files use the same keys as RunConfig, one `key = value` per line.

import logging
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator

from learning.gnn_model import ModelConfig
from learning.graph_builder import GraphConfig
from learning.trainer import TrainConfig
from simulation.physics_core import PhysicsParams
from simulation.scenarios import SCENARIOS, GalaxyParams
from utils.common_utils import UsageError

logger = logging.getLogger(__name__)

REFERENCE = "reference"
DECISION = "decision"

PROFILES = {
    "reference": {
        "dt": 1e-4,
        "G": 4.5e-6,
        "total_mass": 1.0,
        "radial_scale": 3.0,
        "vertical_scale": 0.3,
        "bh_fraction": 0.01,
        "arms": 2,
        "steps": 1000,
        "scene_sizes": [3, 25, 50, 100, 250, 500],
        "scenes_per_size": 10,
    },
    "desk": {
        "steps": 200,
        "n": 25,
        "scene_sizes": [25],
        "scenes_per_size": 2,
        "epochs": 100,
    },
}


def get_profile(name: str) -> dict | None:
    """Retrieves the overrides of a named profile."""
    return PROFILES.get(name)


def _key(default, provenance: str, description: str, **constraints):
    return Field(default, description=description, json_schema_extra={"provenance": provenance}, **constraints)


class RunConfig(BaseModel):
    """Every tunable of a command-line run."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = _key(1e-4, REFERENCE, "leapfrog time step", gt=0)
    G: float = _key(4.5e-6, REFERENCE, "gravitational constant", gt=0)
    eps: float = _key(0.05, DECISION, "Plummer softening length", ge=0)
    steps: int = _key(1000, REFERENCE, "leapfrog steps per scene", ge=1)
    scenario: str = _key("spiral", DECISION, f"initial condition generator, one of {', '.join(SCENARIOS)}")
    n: int = _key(25, DECISION, "bodies per scene for simulate, rollout and bench", ge=1)
    seed: int = _key(0, DECISION, "base seed for scenes, initialization and shuffling")
    total_mass: float = _key(1.0, REFERENCE, "total galaxy mass", gt=0)
    radial_scale: float = _key(3.0, REFERENCE, "exponential disc radial scale", gt=0)
    vertical_scale: float = _key(0.3, REFERENCE, "disc vertical scale", gt=0)
    bh_fraction: float = _key(0.01, REFERENCE, "central black hole mass fraction", gt=0, lt=1)
    arms: int = _key(2, REFERENCE, "number of spiral arms", ge=1)
    disc_count: int = _key(2, DECISION, "discs in the multi-disc scenario", ge=2)
    separation: float = _key(20.0, DECISION, "distance between multi-disc centres", gt=0)
    scene_sizes: list[int] = _key([3, 25, 50, 100, 250, 500], REFERENCE, "body counts generated by gen-dataset and timed by bench")
    scenes_per_size: int = _key(10, REFERENCE, "scenes per body count in gen-dataset", ge=1)
    k: int = _key(8, DECISION, "nearest neighbours per node", ge=1)
    history_depth: int = _key(0, DECISION, "previous positions appended to node features", ge=0)
    with_edge_attrs: bool = _key(False, DECISION, "attach distances to edges and train an edge encoder")
    d: int = _key(64, DECISION, "latent width", ge=1)
    L: int = _key(2, DECISION, "EdgeConv layers", ge=1)
    project_back: bool = _key(False, DECISION, "project every layer output back to width d")
    mlp_depth: int = _key(2, DECISION, "linear layers per MLP", ge=1)
    epochs: int = _key(100, DECISION, "training epochs", ge=1)
    batch_size: int = _key(8, DECISION, "graphs per optimizer step", ge=1)
    lr: float = _key(1e-3, DECISION, "Adam learning rate", gt=0)
    train_fraction: float = _key(0.9, REFERENCE, "share of scenes used for training", gt=0, lt=1)
    repetitions: int = _key(3, DECISION, "timing repetitions per scene in bench", ge=3)

    @field_validator("scene_sizes", mode="before")
    @classmethod
    def _split_sizes(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("scene_sizes")
    @classmethod
    def _positive_sizes(cls, value):
        if not value or any(size < 1 for size in value):
            raise ValueError("scene_sizes must be a non-empty list of positive integers")
        return value

    @field_validator("scenario")
    @classmethod
    def _known_scenario(cls, value):
        if value not in SCENARIOS:
            raise ValueError(f"unknown scenario {value!r}, expected one of {', '.join(SCENARIOS)}")
        return value

    def physics_params(self) -> PhysicsParams:
        return PhysicsParams(dt=self.dt, G=self.G, eps=self.eps, steps=self.steps)

    def galaxy_params(self) -> GalaxyParams:
        return GalaxyParams(total_mass=self.total_mass, radial_scale=self.radial_scale,
                            vertical_scale=self.vertical_scale, bh_mass_fraction=self.bh_fraction,
                            arms=self.arms, G=self.G, eps=self.eps)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(k=self.k, with_edge_attrs=self.with_edge_attrs)

    def architecture(self) -> ModelConfig:
        return ModelConfig(d_in=4 + 3 * self.history_depth, d=self.d, L=self.L,
                           use_edge_encoder=self.with_edge_attrs, project_back=self.project_back,
                           mlp_depth=self.mlp_depth, history_depth=self.history_depth, seed=self.seed)

    def train_config(self, threads: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                           train_fraction=self.train_fraction, threads=threads)


def describe_keys() -> list[str]:
    """One help line per RunConfig key: name, default, provenance and description."""
    lines = []
    for name, info in RunConfig.model_fields.items():
        provenance = (info.json_schema_extra or {}).get("provenance", DECISION)
        default = info.default
        if isinstance(default, list):
            default = ",".join(str(item) for item in default)
        lines.append(f"  {name} = {default}  [{provenance}] {info.description}")
    return lines


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    """
    Parses a UTF-8 `key = value` file. `#` starts a comment; blank lines are ignored.

    Raises:
        UsageError: If the file is missing, a line has no '=', or a key repeats.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e

    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{number}: empty key")
        if key in values:
            raise UsageError(f"{path}:{number}: duplicate key {key!r}")
        values[key] = value
    logger.debug(f"Read {len(values)} keys from {path}")
    return values


def build_run_config(file_values: dict | None = None, overrides: dict | None = None,
                     profile: str | None = None) -> RunConfig:
    """
    Merges RunConfig defaults < profile < config file < command-line overrides.

    Raises:
        UsageError: On an unknown profile or key.
        pydantic.ValidationError: If a value violates its constraint.
    """
    merged: dict = {}
    if profile is not None:
        profile_values = get_profile(profile)
        if profile_values is None:
            raise UsageError(f"unknown profile {profile!r}, expected one of {', '.join(PROFILES)}")
        merged.update(profile_values)
    for source in (file_values or {}, overrides or {}):
        unknown = sorted(set(source) - set(RunConfig.model_fields))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        merged.update(source)
    return RunConfig(**merged)
