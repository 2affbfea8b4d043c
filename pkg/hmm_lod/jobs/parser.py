import json
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from hmm_lod.models import ExperimentConfig, StudyKind


class ConfigError(ValueError):
    """Missing, unreadable or invalid experiment configuration."""

    pass


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_config(
    raw: Dict[str, Any], study: StudyKind, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """
    Validate a raw config dictionary for `study`.

    The study named by the subcommand wins over a `study` key in the file;
    `overrides` (CLI flags) are merged on top, nested dicts key by key.

    Raises:
        ConfigError: if validation fails
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    data = _merge(raw, {k: v for k, v in (overrides or {}).items() if v is not None})
    data["study"] = StudyKind(study).value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(
    path: Optional[Path],
    study: StudyKind,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Read a JSON config file (or start from defaults when path is None)."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(raw, study, overrides)
