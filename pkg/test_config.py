#!/usr/bin/env python3
"""
Tests for environment settings and config file loading.
"""

import os
import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / 'src'))

from volumetric_change.config import Settings, load_config_file, load_settings
from volumetric_change.errors import ConfigError

ENV_KEYS = ["VOLCHANGE_PATCH", "VOLCHANGE_OVERLAP", "VOLCHANGE_JOBS", "VOLCHANGE_SEED",
            "VOLCHANGE_IOU_THRESHOLD", "VOLCHANGE_MAX_GAP", "VOLCHANGE_LABELED_FRACTION",
            "VOLCHANGE_LOG_LEVEL"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


def test_defaults(tmp_path):
    settings = load_settings(str(tmp_path / "missing.env"))
    assert settings == Settings()
    assert (settings.patch, settings.overlap, settings.jobs) == (1024, 64, 1)
    assert settings.max_gap == 604800.0


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("VOLCHANGE_JOBS", "4")
    monkeypatch.setenv("VOLCHANGE_LOG_LEVEL", "debug")
    monkeypatch.setenv("VOLCHANGE_IOU_THRESHOLD", " 0.5 ")
    settings = load_settings(str(tmp_path / "missing.env"))
    assert settings.jobs == 4
    assert settings.log_level == "DEBUG"
    assert settings.iou_threshold == 0.5


def test_dotenv_file(tmp_path):
    env_file = tmp_path / ".env"
    env_file.write_text("VOLCHANGE_SEED=42\nVOLCHANGE_PATCH=512\n")
    try:
        settings = load_settings(str(env_file))
    finally:
        # load_dotenv writes straight into os.environ
        os.environ.pop("VOLCHANGE_SEED", None)
        os.environ.pop("VOLCHANGE_PATCH", None)
    assert (settings.seed, settings.patch) == (42, 512)


@pytest.mark.parametrize("key,value", [
    ("VOLCHANGE_JOBS", "many"),
    ("VOLCHANGE_LOG_LEVEL", "LOUD"),
    ("VOLCHANGE_MAX_GAP", "a week"),
])
def test_invalid_environment(monkeypatch, tmp_path, key, value):
    monkeypatch.setenv(key, value)
    with pytest.raises(ConfigError):
        load_settings(str(tmp_path / "missing.env"))


def test_load_config_file(tmp_path):
    path = tmp_path / "synth.yaml"
    path.write_text("width: 64\nevent_area_range: [10, 50]\n")
    assert load_config_file(path) == {"width": 64, "event_area_range": [10, 50]}

    json_path = tmp_path / "synth.json"
    json_path.write_text('{"seed": 3}')
    assert load_config_file(json_path) == {"seed": 3}

    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config_file(empty) == {}


def test_load_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config_file(listing)
    broken = tmp_path / "broken.yaml"
    broken.write_text("width: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config_file(broken)
