"""Tests for the configuration helper module."""

import json

import pytest

from src.config import (
    DEFAULT_SAMPLES,
    MIN_SAMPLES,
    OUTPUT_DIR_ENV,
    ConfigError,
    LabConfig,
    RunConfig,
    validate_seed,
)


def test_missing_file_uses_defaults(tmp_path):
    config = LabConfig(str(tmp_path / "gfx_lab.json"))
    assert config.output_dir == "results"
    assert config.threads == 1
    assert config.log_level == "INFO"
    assert config.last_error is None
    assert config.warnings == []


def test_save_is_atomic_and_round_trips(tmp_path):
    cfg_path = tmp_path / "nested" / "gfx_lab.json"
    config = LabConfig(str(cfg_path))
    config.seed = 42
    config.threads = 8
    config.log_json = True
    config.save_config()

    with open(cfg_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    assert data["seed"] == 42
    assert data["threads"] == 8
    assert not list(cfg_path.parent.glob("*.tmp"))

    reloaded = LabConfig(str(cfg_path))
    assert reloaded.as_dict() == config.as_dict()


def test_environment_overrides_output_dir(tmp_path, monkeypatch):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text(json.dumps({"output_dir": "from-file"}), encoding="utf-8")
    monkeypatch.setenv(OUTPUT_DIR_ENV, "from-env")
    assert LabConfig(str(cfg_path)).output_dir == "from-env"


def test_invalid_json_sets_error(tmp_path):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text("{invalid", encoding="utf-8")

    config = LabConfig(str(cfg_path))
    assert isinstance(config.last_error, ConfigError)
    assert config.seed == 20240611


def test_non_object_file_sets_error(tmp_path):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text("[1, 2]", encoding="utf-8")
    assert isinstance(LabConfig(str(cfg_path)).last_error, ConfigError)


def test_invalid_seed_records_error(tmp_path):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text(json.dumps({"seed": "not-a-seed"}), encoding="utf-8")
    config = LabConfig(str(cfg_path))
    assert isinstance(config.last_error, ConfigError)
    assert "seed" in str(config.last_error)


def test_soft_problems_become_warnings(tmp_path):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text(
        json.dumps({"threads": 0, "log_level": "chatty", "colour": "red"}), encoding="utf-8"
    )
    config = LabConfig(str(cfg_path))
    assert config.last_error is None
    assert config.threads == 1
    assert config.log_level == "INFO"
    assert len(config.warnings) == 3
    assert any("colour" in warning for warning in config.warnings)


def test_hex_seed_and_log_level_in_file(tmp_path):
    cfg_path = tmp_path / "gfx_lab.json"
    cfg_path.write_text(json.dumps({"seed": "0x2a", "log_level": "debug"}), encoding="utf-8")
    config = LabConfig(str(cfg_path))
    assert config.seed == 42
    assert config.log_level == "DEBUG"
    assert config.log_level_number == 10


@pytest.mark.parametrize(
    "seed, expected",
    [(0, 0), ("17", 17), (" 0xff ", 255), (2**64 - 1, 2**64 - 1)],
)
def test_validate_seed_accepts(seed, expected):
    assert validate_seed(seed) == expected


@pytest.mark.parametrize("seed", ["", "abc", -1, 2**64, True, 1.5])
def test_validate_seed_rejects(seed):
    with pytest.raises(ValueError):
        validate_seed(seed)


def test_sample_tables_cover_the_same_commands():
    assert set(MIN_SAMPLES) == set(DEFAULT_SAMPLES)
    for name, default in DEFAULT_SAMPLES.items():
        assert default >= MIN_SAMPLES[name]


def test_run_config_defaults_validate():
    cfg = RunConfig("verify-martingale").validate()
    assert cfg.samples == DEFAULT_SAMPLES["verify-martingale"]
    assert cfg.weight_exponent == 3.0
    assert cfg.as_dict()["N"] == cfg.samples


def test_run_config_overrides():
    cfg = RunConfig("verify-spine", N=5000).with_overrides(omega=2.5, d=4, x=(1.0, 0.0, 0.0))
    assert cfg.validate().weight_exponent == 2.5
    assert cfg.samples == 5000


def test_unknown_subcommand_rejected():
    with pytest.raises(ConfigError, match="Unknown sub-command"):
        RunConfig("verify-everything").validate()


@pytest.mark.parametrize(
    "changes, fragment",
    [
        ({"N": 10}, "minimum"),
        ({"d": 2, "x": (1.0,)}, "d must be"),
        ({"x": (1.0, 0.0, 0.0)}, "components"),
        ({"x": (0.0, 0.0)}, "non-zero"),
        ({"levels": (0.3, -1.0)}, "levels"),
        ({"alpha": 2.0}, "alpha"),
        ({"omega": 0.0}, "omega"),
        ({"size_floor": 1.5}, "size_floor"),
        ({"bracket": (3.0, 1.0)}, "bracket"),
        ({"format": "xml"}, "format"),
        ({"threads": 0}, "threads"),
    ],
)
def test_run_config_rejects_bad_parameters(changes, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig("verify-martingale", **changes).validate()


def test_run_config_collects_every_problem():
    with pytest.raises(ConfigError) as excinfo:
        RunConfig("verify-martingale", alpha=3.0, threads=0).validate()
    message = str(excinfo.value)
    assert "alpha" in message and "threads" in message


def test_kappa_accepts_zero_endpoint():
    RunConfig("kappa", x=(0.0, 0.0)).validate()
