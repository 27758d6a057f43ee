"""Settings precedence and logging setup for mosco-lab."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.logging import RichHandler

from mosco_lab.errors import ConfigError

try:
    import tomllib  # type: ignore[import-not-found,import-untyped]
except ImportError:
    import tomli as tomllib  # type: ignore

ENV_PREFIX = "MOSCO_LAB_"
LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class LabSettings:
    """Resolves run settings through the precedence chain.

    defaults < ``[tool.mosco-lab]`` in ./pyproject.toml < ``MOSCO_LAB_*`` env vars
    < explicit overrides (CLI flags).
    """

    def __init__(self, overrides: dict[str, Any] | None = None, *, project_dir: Path | None = None) -> None:
        self.project_dir = project_dir or Path.cwd()
        self._config: dict[str, Any] = {}
        self._load_defaults()
        self._load_project_config()
        self._load_env_vars()
        for key, value in (overrides or {}).items():
            if value is not None:
                self._config[key] = value

    def _load_defaults(self) -> None:
        self._config = {
            "log": "warn",
            "threads": 1,
            "out": "mosco-out",
        }

    def _load_project_config(self) -> None:
        """Load from pyproject.toml [tool.mosco-lab]"""
        path = self.project_dir / "pyproject.toml"
        if path.exists():
            try:
                with open(path, "rb") as f:
                    data = tomllib.load(f)
                    self._config.update(data.get("tool", {}).get("mosco-lab", {}))
            except (OSError, tomllib.TOMLDecodeError):
                pass

    def _load_env_vars(self) -> None:
        """Load from MOSCO_LAB_* environment variables."""
        for key, value in os.environ.items():
            if not key.startswith(ENV_PREFIX):
                continue
            config_key = key[len(ENV_PREFIX):].lower()
            if value.lower() in ("true", "yes"):
                self._config[config_key] = True
            elif value.lower() in ("false", "no"):
                self._config[config_key] = False
            else:
                self._config[config_key] = value

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(key, default)

    @property
    def log_level(self) -> int:
        raw = str(self.get("log", "warn")).strip().lower()
        return LOG_LEVELS.get(raw, logging.WARNING)

    @property
    def threads(self) -> int:
        try:
            raw = int(self.get("threads", 1))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"threads must be an integer, got {self.get('threads')!r}.", field="threads") from exc
        if raw <= 0:
            return os.cpu_count() or 1
        return raw


def configure_logging(level: int) -> None:
    """Route package logs to stderr through rich."""

    root = logging.getLogger("mosco_lab")
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
