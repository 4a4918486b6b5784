from pathlib import Path

import pytest
from pydantic import ValidationError

from config.app_config import (
    DECISION,
    PROFILES,
    REFERENCE,
    RunConfig,
    build_run_config,
    describe_keys,
    get_profile,
    load_config_file,
)
from utils.common_utils import UsageError

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"


@pytest.fixture
def config_file(tmp_path):
    def write(text):
        path = tmp_path / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path
    return write


def test_defaults_are_the_reference_values():
    config = RunConfig()
    assert (config.dt, config.G, config.eps) == (1e-4, 4.5e-6, 0.05)
    assert (config.total_mass, config.radial_scale, config.vertical_scale) == (1.0, 3.0, 0.3)
    assert (config.bh_fraction, config.arms) == (0.01, 2)
    assert config.scene_sizes == [3, 25, 50, 100, 250, 500]
    assert config.scenes_per_size == 10


def test_reference_profile_matches_defaults():
    assert build_run_config(profile="reference") == RunConfig()


def test_profiles():
    assert set(PROFILES) == {"reference", "desk"}
    assert get_profile("desk")["steps"] == 200
    assert get_profile("missing") is None
    with pytest.raises(UsageError):
        build_run_config(profile="missing")


def test_precedence_profile_file_flags():
    config = build_run_config({"steps": "50", "n": "7"}, {"n": "9"}, profile="desk")
    assert config.steps == 50
    assert config.n == 9
    assert config.scene_sizes == [25]


def test_string_values_are_coerced():
    config = build_run_config({"scene_sizes": "3, 25,50", "with_edge_attrs": "true", "lr": "0.01"})
    assert config.scene_sizes == [3, 25, 50]
    assert config.with_edge_attrs is True
    assert config.lr == 0.01


def test_unknown_keys_are_usage_errors():
    with pytest.raises(UsageError, match="bogus"):
        build_run_config({"bogus": "1"})
    with pytest.raises(UsageError):
        build_run_config(overrides={"Steps": "1"})


@pytest.mark.parametrize("values", [
    {"steps": "0"},
    {"dt": "-1"},
    {"eps": "-0.1"},
    {"scenario": "ring"},
    {"scene_sizes": "3,0"},
    {"repetitions": "2"},
    {"steps": "many"},
])
def test_invalid_values_fail_validation(values):
    with pytest.raises(ValidationError):
        build_run_config(values)


def test_derived_parameter_records():
    config = build_run_config({"history_depth": "2", "d": "16", "with_edge_attrs": "true", "steps": "12"})
    assert config.physics_params().steps == 12
    assert config.graph_config().with_edge_attrs is True
    architecture = config.architecture()
    assert architecture.d_in == 10
    assert architecture.use_edge_encoder is True
    assert config.galaxy_params().bh_mass_fraction == config.bh_fraction
    assert config.train_config(threads=2).threads == 2


def test_load_config_file(config_file):
    path = config_file("# comment\n\nsteps = 20   # trailing\nscenario=disc\n")
    assert load_config_file(path) == {"steps": "20", "scenario": "disc"}


def test_config_file_errors(config_file, tmp_path):
    with pytest.raises(UsageError, match=":2:"):
        load_config_file(config_file("steps = 1\nsteps = 2\n"))
    with pytest.raises(UsageError):
        load_config_file(config_file("steps 1\n"))
    with pytest.raises(UsageError):
        load_config_file(config_file(" = 3\n"))
    with pytest.raises(UsageError):
        load_config_file(tmp_path / "absent.cfg")


def test_shipped_config_files_parse():
    for name in ("reference", "desk"):
        build_run_config(load_config_file(CONFIG_DIR / f"{name}.cfg"))


def test_every_key_is_described():
    lines = describe_keys()
    assert len(lines) == len(RunConfig.model_fields)
    assert any(line.strip().startswith("dt = 0.0001") and f"[{REFERENCE}]" in line for line in lines)
    assert any(line.strip().startswith("k = 8") and f"[{DECISION}]" in line for line in lines)
