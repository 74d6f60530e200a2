"""Tests for configuration loading."""

from pathlib import Path

import pytest

from src.config import Settings, get_settings, load_settings
from src.errors import ConfigurationError, MissingArtifactError, SchemaVersionError
from src.models import FeatureMUs, Variant

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "config" / "default.yaml"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep stray TETHERNET_* variables out of the tests."""
    monkeypatch.delenv("TETHERNET_CONFIG", raising=False)
    monkeypatch.delenv("TETHERNET_NET__MESH", raising=False)


def test_defaults_without_file():
    """Built-in defaults match the reference system."""
    settings = load_settings()
    assert settings.net.mesh == 23
    assert settings.net.variant == Variant.FOUR_MU
    assert settings.net.mu_count == 4
    assert settings.controller.thrust_limit_per_axis == 5.1
    assert settings.capture.cqi_threshold == 2.5
    assert settings.capture.locked_threshold(Variant.EIGHT_MU) == 6
    assert settings.surrogate.learning_rate == 1e-5
    assert settings.surrogate.deployment_mesh == 7
    assert settings.capture.closing_max_tension == 50.0
    assert settings.net.damping == 2.0


def test_default_yaml_matches_builtin_defaults():
    """The shipped config file documents exactly the built-in defaults."""
    from_file = load_settings(DEFAULT_CONFIG)
    assert from_file.model_dump() == Settings().model_dump()


def test_yaml_overrides(tmp_path):
    """Values in the file replace defaults; missing keys keep theirs."""
    path = tmp_path / "run.yaml"
    path.write_text("schema_version: 1\nnet:\n  mesh: 7\n  variant: eight-mu\n")
    settings = load_settings(path)
    assert settings.net.mesh == 7
    assert settings.net.mu_count == 8
    assert settings.net.side_length == 20.8


def test_config_path_from_environment(tmp_path, monkeypatch):
    """TETHERNET_CONFIG names the file when no path is given."""
    path = tmp_path / "env.yaml"
    path.write_text("net:\n  mesh: 5\n")
    monkeypatch.setenv("TETHERNET_CONFIG", str(path))
    assert load_settings().net.mesh == 5


def test_nested_environment_override(monkeypatch):
    """Nested fields can be set from the environment."""
    monkeypatch.setenv("TETHERNET_NET__MESH", "9")
    assert load_settings().net.mesh == 9


def test_missing_file_raises(tmp_path):
    """A config path that does not exist is a missing artifact."""
    with pytest.raises(MissingArtifactError):
        load_settings(tmp_path / "absent.yaml")


def test_unknown_schema_version(tmp_path):
    """Files from a newer schema are rejected."""
    path = tmp_path / "future.yaml"
    path.write_text("schema_version: 2\n")
    with pytest.raises(SchemaVersionError):
        load_settings(path)


@pytest.mark.parametrize("body", [
    "net:\n  mesh: 2\n",
    "contact:\n  friction_coefficient: 3.0\n",
    "controller:\n  thrust_limit_per_axis: 0\n",
    "surrogate:\n  optimizer: rmsprop\n",
    "net:\n  debris_axis: [0, 0, 0]\n",
    "net:\n  closing_loop_size: 13\n",
    "surrogate:\n  deployment_mesh: 2\n",
])
def test_invalid_values(tmp_path, body):
    """Out-of-range values become configuration errors."""
    path = tmp_path / "bad.yaml"
    path.write_text(body)
    with pytest.raises(ConfigurationError):
        load_settings(path)


def test_non_mapping_file(tmp_path):
    """A YAML list at the top level is not a config."""
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        load_settings(path)


def test_variant_dependent_defaults():
    """Feature MUs and fuel weight follow the variant unless set."""
    settings = Settings()
    assert settings.surrogate.feature_mus(Variant.FOUR_MU) == FeatureMUs.NONE
    assert settings.surrogate.feature_mus(Variant.EIGHT_MU) == FeatureMUs.CORNERS
    assert settings.policy.fuel_weight_for(Variant.FOUR_MU) == 1.0
    assert settings.policy.fuel_weight_for(Variant.EIGHT_MU) == 1.5


def test_with_variant_copies():
    """with_variant leaves the original settings untouched."""
    settings = Settings()
    eight = settings.with_variant(Variant.EIGHT_MU)
    assert eight.net.variant == Variant.EIGHT_MU
    assert settings.net.variant == Variant.FOUR_MU


def test_get_settings_is_cached():
    """The accessor loads once and hands back the same instance."""
    get_settings.cache_clear()
    try:
        assert get_settings() is get_settings()
        assert get_settings().net.mesh == 23
    finally:
        get_settings.cache_clear()
