from __future__ import annotations

import os
from pathlib import Path

from heatlab.config import load_settings


def test_defaults(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for var in ("HEATLAB_THREADS", "HEATLAB_LOG_LEVEL", "HEATLAB_OUT_DIR", "HEATLAB_DENSE_LIMIT"):
        monkeypatch.delenv(var, raising=False)

    settings = load_settings()
    assert settings.threads == 1
    assert settings.log_level == "INFO"
    assert settings.out_dir == (tmp_path / "heatlab-out").resolve()
    assert settings.dense_limit == 4096


def test_env_overrides_and_bad_values(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HEATLAB_THREADS", "4")
    monkeypatch.setenv("HEATLAB_LOG_LEVEL", "debug")
    monkeypatch.setenv("HEATLAB_OUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("HEATLAB_DENSE_LIMIT", "not-a-number")

    settings = load_settings()
    assert settings.threads == 4
    assert settings.log_level == "DEBUG"
    assert settings.out_dir == (tmp_path / "runs").resolve()
    assert settings.dense_limit == 4096


def test_dotenv_does_not_override_process_env(tmp_path: Path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HEATLAB_THREADS", "2")
    # registered first so teardown also drops the value the .env loader sets
    monkeypatch.setenv("HEATLAB_DENSE_LIMIT", "0")
    monkeypatch.delenv("HEATLAB_DENSE_LIMIT")
    (tmp_path / ".env").write_text(
        "# local\nexport HEATLAB_THREADS=8\nHEATLAB_DENSE_LIMIT='128'\nUNRELATED_HEATLAB_TEST_VAR=1\n", encoding="utf-8"
    )

    settings = load_settings()
    assert settings.threads == 2
    assert settings.dense_limit == 128
    assert "UNRELATED_HEATLAB_TEST_VAR" not in os.environ
