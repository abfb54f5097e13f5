"""
Run configuration loading, command-line overrides, environment settings and logging setup
"""
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from models import RunConfig
from services.audio_io import write_json
from services.errors import ConfigurationError

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved_config.json"


class Settings:
    """Process-level settings from the environment (and a .env file)"""

    def __init__(self):
        load_dotenv()
        self.log_level = os.getenv("DEREVERB_LOG_LEVEL", "INFO").upper()
        self.checkpoint_dir = os.getenv("DEREVERB_CHECKPOINT_DIR", "checkpoints")
        rate = os.getenv("DEREVERB_SAMPLE_RATE")
        try:
            self.sample_rate = int(rate) if rate else None
        except ValueError:
            raise ConfigurationError(f"DEREVERB_SAMPLE_RATE must be an integer, got {rate!r}")


def get_settings() -> Settings:
    return Settings()


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """
    Apply "section.key=value" overrides to a config dict

    Values are parsed as JSON and fall back to plain strings.

    Raises:
        ConfigurationError: Malformed override
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"Override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigurationError(f"Override has an empty key: {item!r}")
        node = data
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Override {item!r} descends into non-section {key!r}")
            node = child
        node[keys[-1]] = _parse_value(raw)
    return data


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (),
                    settings: Optional[Settings] = None) -> RunConfig:
    """
    Build the RunConfig: defaults, environment sample rate, config file, then overrides

    Raises:
        ConfigurationError: Unreadable file, unknown keys or invalid values
    """
    data: Dict[str, Any] = {}
    if settings is not None and settings.sample_rate:
        data = {"stft": {"sample_rate": settings.sample_rate}}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                file_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(file_data, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")
        for section, values in file_data.items():
            if isinstance(values, dict) and isinstance(data.get(section), dict):
                data[section] = {**data[section], **values}
            else:
                data[section] = values
    apply_overrides(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def update_config(cfg: RunConfig, updates: Dict[str, Any]) -> RunConfig:
    """Re-validate cfg with dotted-key updates; None values are ignored"""
    items = [f"{k}={json.dumps(v)}" for k, v in updates.items() if v is not None]
    if not items:
        return cfg
    data = apply_overrides(cfg.model_dump(mode="json"), items)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def write_resolved_config(cfg: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Write the fully resolved configuration next to a command's outputs"""
    return write_json(Path(out_dir) / RESOLVED_CONFIG_NAME, cfg.model_dump(mode="json"))


class JsonLinesFormatter(logging.Formatter):
    """One JSON object per record; a "progress" extra is merged into the object"""

    def format(self, record: logging.LogRecord) -> str:
        payload = {"level": record.levelname, "logger": record.name, "message": record.getMessage()}
        progress = getattr(record, "progress", None)
        if isinstance(progress, dict):
            payload.update(progress)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


def configure_logging(level: str = "INFO", json_lines: bool = False) -> None:
    """Route all logging to stderr, as plain text or JSON lines"""
    handler = logging.StreamHandler(sys.stderr)
    if json_lines:
        handler.setFormatter(JsonLinesFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    try:
        root.setLevel(level.upper())
    except ValueError:
        raise ConfigurationError(f"Unknown log level: {level}")
