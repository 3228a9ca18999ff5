# rlab/core/config.py
from __future__ import annotations
from pathlib import Path
from typing import Any
from PySide6.QtCore import QSettings
from app_config import apply_qsettings_org, DEFAULTS, SETTINGS_FILE


def _coerce(value: Any, default: Any) -> Any:
    """INI-backed QSettings hands values back as strings; cast to the default's type."""
    if value is None:
        return default
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(float(value))
    if isinstance(default, float):
        return float(value)
    return value


class Settings:
    """
    Thin wrapper over QSettings with defaults and simple dict-like get/set.
    Uses an INI file under the app data dir so runs are reproducible from one place.
    """
    def __init__(self, path: Path | None = None):
        apply_qsettings_org()
        self.path = Path(path or SETTINGS_FILE)
        self._qs = QSettings(str(self.path), QSettings.Format.IniFormat)

    def get(self, key: str, default: Any = None) -> Any:
        if default is None:
            group, _, name = key.partition("/")
            default = DEFAULTS.get(group, {}).get(name)
        return _coerce(self._qs.value(key, default), default)

    def set(self, key: str, value: Any) -> None:
        self._qs.setValue(key, value)
        self._qs.sync()

    def group(self, group: str) -> dict[str, Any]:
        """All keys of one DEFAULTS group with user overrides applied."""
        return {k: self.get(f"{group}/{k}", v) for k, v in DEFAULTS.get(group, {}).items()}


def get_settings(path: Path | None = None) -> Settings:
    return Settings(path)
