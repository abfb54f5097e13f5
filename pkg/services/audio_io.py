"""
WAV input/output and atomic file writes
"""
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import soundfile as sf

from models import Waveform
from services.errors import AudioDataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_audio(path: PathLike) -> tuple[np.ndarray, int]:
    """
    Read any WAV file as float64, shape (channels, N)

    Raises:
        AudioDataError: If the file is missing or cannot be decoded
    """
    path = Path(path)
    if not path.is_file():
        raise AudioDataError(f"Audio file not found: {path}")
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise AudioDataError(f"Cannot read audio file {path}: {e}") from e
    if data.shape[0] == 0:
        raise AudioDataError(f"Audio file is empty: {path}")
    return np.ascontiguousarray(data.T), int(sample_rate)


def read_waveform(path: PathLike, expected_rate: Optional[int] = None,
                  allow_mono: bool = False) -> Waveform:
    """
    Read a stereo WAV file into a Waveform

    Args:
        path: WAV file (16/24-bit integer or 32-bit float)
        expected_rate: Pipeline sample rate; other rates are rejected
        allow_mono: Duplicate a mono file onto both channels instead of failing

    Returns:
        Waveform with float64 samples

    Raises:
        AudioDataError: Unreadable file, wrong channel count or sample-rate mismatch
    """
    data, sample_rate = read_audio(path)
    if expected_rate is not None and sample_rate != expected_rate:
        raise AudioDataError(
            f"Sample rate mismatch in {path}: {sample_rate} Hz, pipeline runs at {expected_rate} Hz"
        )
    if data.shape[0] == 1 and allow_mono:
        data = np.repeat(data, 2, axis=0)
    if data.shape[0] != 2:
        raise AudioDataError(f"Expected a stereo file, {path} has {data.shape[0]} channel(s)")
    try:
        return Waveform(samples=data, sample_rate=sample_rate)
    except ValueError as e:
        raise AudioDataError(f"Invalid audio in {path}: {e}") from e


def _atomic_target(path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    os.close(fd)
    return tmp


def write_waveform(path: PathLike, w: Waveform) -> Path:
    """Write a Waveform as 32-bit float WAV via temp file + rename"""
    path = Path(path)
    tmp = _atomic_target(path)
    try:
        sf.write(tmp, np.asarray(w.samples, dtype=np.float32).T, w.sample_rate,
                 subtype="FLOAT", format="WAV")
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug(f"Wrote {path} ({w.num_samples} samples @ {w.sample_rate} Hz)")
    return path


def write_text(path: PathLike, text: str) -> Path:
    """Atomically write a UTF-8 text file"""
    path = Path(path)
    tmp = _atomic_target(path)
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    """Atomically write JSON with sorted keys, so reruns produce identical bytes"""
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def decode_waveform(payload: bytes, expected_rate: Optional[int] = None, name: str = "upload") -> Waveform:
    """Decode WAV bytes (e.g. an HTTP upload) into a stereo Waveform"""
    if not payload:
        raise AudioDataError(f"{name} is empty")
    try:
        data, sample_rate = sf.read(io.BytesIO(payload), dtype="float64", always_2d=True)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise AudioDataError(f"Cannot decode {name}: {e}") from e
    if expected_rate is not None and sample_rate != expected_rate:
        raise AudioDataError(f"{name} is {sample_rate} Hz, pipeline runs at {expected_rate} Hz")
    if data.shape[1] != 2:
        raise AudioDataError(f"{name} must be stereo, got {data.shape[1]} channel(s)")
    try:
        return Waveform(samples=data.T, sample_rate=int(sample_rate))
    except ValueError as e:
        raise AudioDataError(f"Invalid audio in {name}: {e}") from e


def encode_waveform(w: Waveform) -> bytes:
    """32-bit float WAV bytes"""
    buf = io.BytesIO()
    sf.write(buf, np.asarray(w.samples, dtype=np.float32).T, w.sample_rate, subtype="FLOAT", format="WAV")
    return buf.getvalue()
