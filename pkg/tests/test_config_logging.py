from __future__ import annotations
import logging

from rlab.core.config import Settings
from rlab.core.errors import ConfigError, DataError, RLabError, UsageError
from rlab.core.logging import get_logger, level_from_env, setup_logging


def test_settings_fall_back_to_defaults_and_persist(tmp_path):
    path = tmp_path / "settings.ini"
    settings = Settings(path)
    assert settings.get("decode/beam_size") == 5
    assert settings.get("decode/block_trigrams") is True
    settings.set("decode/beam_size", 3)
    settings.set("decode/block_trigrams", False)

    reread = Settings(path)
    assert reread.get("decode/beam_size") == 3
    assert reread.get("decode/block_trigrams") is False
    group = reread.group("decode")
    assert group["beam_size"] == 3 and group["alpha"] == 0.95


def test_level_from_env(monkeypatch):
    monkeypatch.setenv("RLAB_LOG", "debug")
    assert level_from_env() == logging.DEBUG
    monkeypatch.setenv("RLAB_LOG", "chatty")
    assert level_from_env() == logging.INFO


def test_log_lines_are_key_value(tmp_path):
    log_file = tmp_path / "logs" / "rlab.log"
    setup_logging(logging.INFO, log_file=log_file)
    get_logger("rlab.test").info("event=probe value=%d", 7)
    for handler in logging.getLogger().handlers:
        handler.flush()
    line = log_file.read_text(encoding="utf-8").strip().splitlines()[-1]
    assert "level=INFO" in line and "logger=rlab.test" in line and line.endswith("event=probe value=7")
    setup_logging(logging.WARNING, log_file=None)


def test_error_hierarchy():
    for cls in (DataError, ConfigError, UsageError):
        assert issubclass(cls, RLabError)
    assert issubclass(RLabError, ValueError)


def test_package_version_comes_from_app_config():
    import app_config
    import rlab
    assert rlab.VERSION == app_config.APP_VERSION
    assert app_config.version_string().startswith(app_config.APP_VERSION)
