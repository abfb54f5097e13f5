"""
Storage service for predictor checkpoints
"""
import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from models import ReverseMode
from services.audio_io import write_text
from services.errors import AudioDataError, ConfigurationError
from services.predictor import PARAM_NAMES, GainPredictor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".ckpt.json"


@dataclass
class Checkpoint:
    """Raw and EMA weights of one trained predictor"""
    trained: GainPredictor
    ema: GainPredictor
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def mode(self) -> ReverseMode:
        return self.trained.mode


def encode_array(arr: np.ndarray) -> Dict[str, Any]:
    """Little-endian float64 bytes, base64-encoded, with the shape"""
    raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(raw).decode("ascii")}


def decode_array(payload: Dict[str, Any]) -> np.ndarray:
    if payload.get("dtype") != "<f8":
        raise AudioDataError(f"Unsupported checkpoint array dtype: {payload.get('dtype')}")
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(payload["shape"]).astype(np.float64)


def _encode_params(p: GainPredictor) -> Dict[str, Any]:
    return {name: encode_array(p.params[name]) for name in PARAM_NAMES}


def checkpoint_to_dict(ckpt: Checkpoint) -> Dict[str, Any]:
    t = ckpt.trained
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "gain_predictor",
        "T": t.num_steps,
        "F": t.num_bins,
        "mode": t.mode.value,
        "share_channels": t.share_channels,
        "params": _encode_params(t),
        "ema_params": _encode_params(ckpt.ema),
        "metadata": ckpt.metadata,
    }


def checkpoint_from_dict(payload: Dict[str, Any]) -> Checkpoint:
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise AudioDataError(f"Unsupported checkpoint format_version: {version}")
    try:
        mode = ReverseMode(payload["mode"])
        share = bool(payload["share_channels"])
        trained = GainPredictor({k: decode_array(v) for k, v in payload["params"].items()}, mode, share)
        ema = GainPredictor({k: decode_array(v) for k, v in payload["ema_params"].items()}, mode, share)
    except (KeyError, TypeError, ValueError) as e:
        raise AudioDataError(f"Malformed checkpoint: {e}") from e
    if (trained.num_steps, trained.num_bins) != (payload.get("T"), payload.get("F")):
        raise AudioDataError("Checkpoint header disagrees with its parameter shapes")
    return Checkpoint(trained=trained, ema=ema, metadata=payload.get("metadata", {}))


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    """Write a checkpoint atomically; identical weights give identical bytes"""
    path = Path(path)
    write_text(path, json.dumps(checkpoint_to_dict(ckpt), indent=1, sort_keys=True) + "\n")
    logger.info(f"Saved {ckpt.mode.value} checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path], expected_mode: Optional[ReverseMode] = None) -> Checkpoint:
    """
    Load a checkpoint

    Raises:
        AudioDataError: Missing or malformed file
        ConfigurationError: Stored mode differs from expected_mode
    """
    path = Path(path)
    if not path.is_file():
        raise AudioDataError(f"Checkpoint not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise AudioDataError(f"Checkpoint {path} is not valid JSON: {e}") from e
    ckpt = checkpoint_from_dict(payload)
    if expected_mode is not None and ckpt.mode != ReverseMode(expected_mode):
        raise ConfigurationError(
            f"Checkpoint {path} was trained in {ckpt.mode.value} mode, requested {ReverseMode(expected_mode).value}"
        )
    return ckpt


class CheckpointStorage:
    """Named checkpoints inside one directory, used by the HTTP service"""

    def __init__(self, checkpoint_dir: str = "checkpoints"):
        self.checkpoint_dir = Path(checkpoint_dir)

    def path_for(self, name: str) -> Path:
        if not name or "/" in name or "\\" in name or name.startswith("."):
            raise ConfigurationError(f"Invalid checkpoint name: {name!r}")
        stem = name[: -len(CHECKPOINT_SUFFIX)] if name.endswith(CHECKPOINT_SUFFIX) else name
        return self.checkpoint_dir / f"{stem}{CHECKPOINT_SUFFIX}"

    def list_checkpoints(self) -> List[str]:
        if not self.checkpoint_dir.is_dir():
            return []
        return sorted(p.name[: -len(CHECKPOINT_SUFFIX)] for p in self.checkpoint_dir.glob(f"*{CHECKPOINT_SUFFIX}"))

    def load(self, name: str, expected_mode: Optional[ReverseMode] = None) -> Checkpoint:
        return load_checkpoint(self.path_for(name), expected_mode)

    def save(self, name: str, ckpt: Checkpoint) -> Path:
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        return save_checkpoint(self.path_for(name), ckpt)
