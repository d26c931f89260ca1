from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import os
import tomllib
from typing import Any

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    outcome: str
    tolerance: float
    ci_level: float
    protective_policy: str
    recode_protective: bool
    allow_missing_terms: bool
    max_iterations: int
    score_tolerance: float
    min_cell_events: int
    output_format: str
    log_level: str


DEFAULT_CONFIG = Config(
    outcome="outcome",
    tolerance=0.0,
    ci_level=0.95,
    protective_policy="warn",
    recode_protective=True,
    allow_missing_terms=False,
    max_iterations=50,
    score_tolerance=1e-8,
    min_cell_events=5,
    output_format="table",
    log_level="WARNING",
)

CONFIG_KEYS = set(DEFAULT_CONFIG.__dict__.keys())

PROTECTIVE_POLICIES = ("warn", "error", "ignore")
OUTPUT_FORMATS = ("json", "table")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

_INT_KEYS = {"max_iterations", "min_cell_events"}
_FLOAT_KEYS = {"tolerance", "ci_level", "score_tolerance"}
_BOOL_KEYS = {"recode_protective", "allow_missing_terms"}


def load_config(project_dir: Path, overrides: dict[str, Any] | None = None) -> Config:
    data: dict[str, Any] = {}
    data.update(_read_global_config())
    project_toml = project_dir / "multiway.toml"
    if project_toml.exists():
        data.update(_read_toml(project_toml))
    data.update(_read_env())
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return _apply_config(DEFAULT_CONFIG, data)


def global_config_path() -> Path:
    xdg_home = os.getenv("XDG_CONFIG_HOME")
    if xdg_home:
        base = Path(xdg_home)
    else:
        try:
            base = Path.home() / ".config"
        except Exception as exc:
            raise ConfigError(
                "Unable to resolve a config directory. Set XDG_CONFIG_HOME."
            ) from exc
    return base / "multiway" / "config.toml"


def _read_global_config() -> dict[str, Any]:
    path = global_config_path()
    if not path.exists():
        return {}
    return _read_toml(path)


def _read_toml(path: Path) -> dict[str, Any]:
    try:
        contents = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"Failed to read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Invalid TOML in {path}: {exc}") from exc
    return contents


def _read_env() -> dict[str, Any]:
    data: dict[str, Any] = {}
    for key in CONFIG_KEYS:
        value = os.getenv(f"MULTIWAY_{key.upper()}")
        if value is not None:
            data[key] = value
    return data


def _apply_config(config: Config, data: dict[str, Any]) -> Config:
    values = config.__dict__.copy()
    for key, raw_value in data.items():
        if key not in values:
            continue
        values[key] = _coerce_value(key, raw_value)
    return Config(**values)


def _coerce_value(key: str, value: Any) -> Any:
    if key in _INT_KEYS:
        try:
            number = int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be an integer") from exc
        if number < 0:
            raise ConfigError(f"{key} must be non-negative")
        return number
    if key in _FLOAT_KEYS:
        try:
            number = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number") from exc
        if key == "ci_level" and not 0.0 < number < 1.0:
            raise ConfigError("ci_level must lie strictly between 0 and 1")
        if key != "ci_level" and number < 0:
            raise ConfigError(f"{key} must be non-negative")
        return number
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            normalized = value.strip().lower()
            if normalized in {"1", "true", "yes", "on"}:
                return True
            if normalized in {"0", "false", "no", "off"}:
                return False
        raise ConfigError(f"{key} must be a boolean")
    text = str(value).strip()
    if key == "protective_policy":
        text = text.lower()
        if text not in PROTECTIVE_POLICIES:
            raise ConfigError(
                f"protective_policy must be one of {', '.join(PROTECTIVE_POLICIES)}"
            )
    elif key == "output_format":
        text = text.lower()
        if text not in OUTPUT_FORMATS:
            raise ConfigError(f"output_format must be one of {', '.join(OUTPUT_FORMATS)}")
    elif key == "log_level":
        text = text.upper()
        if text not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {', '.join(LOG_LEVELS)}")
    elif key == "outcome" and not text:
        raise ConfigError("outcome must be a non-empty column name")
    return text
