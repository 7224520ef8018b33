from pathlib import Path
from typing import Any

import pytest
from pydantic import ValidationError

from tactile.config_schema import (
    ExperimentConfig,
    ModelConfig,
    SurfaceConfig,
    SurfaceKind,
    TankConfig,
    TrainConfig,
    config_hash,
    load_config,
    load_surface_config,
)
from tactile.exceptions import ConfigError
from tactile.surface import SurfaceModel

REPO_ROOT = Path(__file__).resolve().parents[2]


def test_valid_config() -> None:
    raw_config: dict[str, Any] = {
        "name": "unit",
        "seed": 3,
        "log_format": "json",
        "tank": {"epsilon": 0.2, "high_energy": 100.0},
        "skills": {"count": 2, "patterns": ["line", "arc"]},
    }
    config = ExperimentConfig(**raw_config)
    assert config.seed == 3
    assert config.log_format == "json"
    assert config.tank.epsilon == 0.2
    assert [p.value for p in config.skills.patterns] == ["line", "arc"]
    assert config.surface("curved").kind == SurfaceKind.CURVED


def test_default_values() -> None:
    config = ExperimentConfig()
    assert config.log_format == "text"
    assert config.dynamics.dt == 0.001
    assert config.controller.stiffness[:3] == [1000.0, 1000.0, 1000.0]
    assert config.model.receptive_field == 43
    assert config.training.epochs == 20
    assert set(config.surfaces) == {"curved", "planar", "inclined", "planar_gap"}
    assert config.surfaces["planar_gap"].has_gap


def test_invalid_log_format() -> None:
    with pytest.raises(ValidationError) as excinfo:
        ExperimentConfig(log_format="xml")
    assert "log_format" in str(excinfo.value)


def test_invalid_friction() -> None:
    with pytest.raises(ValidationError) as excinfo:
        SurfaceConfig(mu=1.5)
    assert "mu" in str(excinfo.value)


def test_vector_must_have_six_entries() -> None:
    with pytest.raises(ValidationError):
        ExperimentConfig(controller={"stiffness": [1.0, 2.0]})


def test_negative_gain_rejected() -> None:
    with pytest.raises(ValidationError):
        ExperimentConfig(controller={"damping": [1.0, 1.0, -1.0, 1.0, 1.0, 1.0]})


def test_unordered_gap_rejected() -> None:
    with pytest.raises(ValidationError):
        SurfaceConfig(gap_u_min=0.2, gap_u_max=0.1)


def test_unknown_surface_reference() -> None:
    with pytest.raises(ValidationError) as excinfo:
        ExperimentConfig(heatmap={"surface": "moon"})
    assert "heatmap.surface" in str(excinfo.value)


def test_safety_surface_needs_gap() -> None:
    with pytest.raises(ValidationError) as excinfo:
        ExperimentConfig(safety={"surface": "planar"})
    assert "gap" in str(excinfo.value)


def test_receptive_field_larger_than_window() -> None:
    with pytest.raises(ValidationError):
        ModelConfig(window=20, kernel_size=4, dilations=[1, 2, 4])


def test_split_must_sum_to_one() -> None:
    with pytest.raises(ValidationError):
        TrainConfig(split=[0.5, 0.2, 0.2])


def test_rearm_threshold_defaults_to_twice_epsilon() -> None:
    assert TankConfig(epsilon=0.1).rearm_threshold == pytest.approx(0.2)
    assert TankConfig(epsilon=0.1, epsilon_on=0.15).rearm_threshold == 0.15
    with pytest.raises(ValidationError):
        TankConfig(epsilon=0.1, epsilon_on=0.05)


def test_missing_estimate_file(tmp_path: Any) -> None:
    with pytest.raises(ValidationError):
        ExperimentConfig(estimate={"skill_files": [str(tmp_path / "absent.csv")]})


def test_load_config(tmp_path: Any) -> None:
    path = tmp_path / "experiment.yml"
    path.write_text("seed: 11\ntank:\n  epsilon: 0.3\n")
    config = load_config(path)
    assert config.seed == 11
    assert config.tank.epsilon == 0.3


def test_load_config_empty_file_gives_defaults(tmp_path: Any) -> None:
    path = tmp_path / "empty.yml"
    path.write_text("")
    assert load_config(path) == ExperimentConfig()


def test_load_config_errors(tmp_path: Any) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yml")

    not_a_mapping = tmp_path / "list.yml"
    not_a_mapping.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(not_a_mapping)

    invalid = tmp_path / "invalid.yml"
    invalid.write_text("seed: -1\n")
    with pytest.raises(ConfigError):
        load_config(invalid)


def test_shipped_configs_are_valid() -> None:
    config = load_config(REPO_ROOT / "config" / "experiment.yml")
    assert config.skills.surface == "curved"
    for path in sorted((REPO_ROOT / "config" / "surfaces").glob("*.yml")):
        surface = load_surface_config(path)
        assert 0 < surface.mu <= 1


def test_config_hash_is_stable() -> None:
    assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
    assert config_hash(ExperimentConfig()) != config_hash(ExperimentConfig(seed=1))
    assert len(config_hash(ExperimentConfig())) == 64


def test_surface_files_extend_named_surfaces(tmp_path: Any) -> None:
    (tmp_path / "surfaces").mkdir()
    (tmp_path / "surfaces" / "bowl.yml").write_text("kind: curved\nmu: 0.3\n")
    path = tmp_path / "config.yml"
    path.write_text("surface_files:\n  bowl: surfaces/bowl.yml\ntransfer:\n  surfaces: [bowl]\n")
    config = load_config(path)
    assert config.surface("bowl").mu == 0.3
    assert config.surface("bowl").kind == SurfaceKind.CURVED
    assert "planar_gap" in config.surfaces

    path.write_text("surface_files:\n  bowl: surfaces/missing.yml\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_surface_file_with_gap(tmp_path: Any) -> None:
    (tmp_path / "board.yml").write_text("kind: planar\nmu: 0.3\ngap_u_min: 0.1\ngap_depth: 0.05\n")
    path = tmp_path / "config.yml"
    path.write_text("surface_files:\n  board: board.yml\nsafety:\n  surface: board\n")
    surface = SurfaceModel(load_config(path).surface("board"), name="board")
    assert surface.mu == 0.3
    assert surface.in_gap(0.2, 0.0)
    assert not surface.in_gap(0.0, 0.0)

    (tmp_path / "board.yml").write_text("kind: planar\nmu: 0\n")
    with pytest.raises(ConfigError):
        load_config(path)
