"""
Dereverberation of whole waveforms by tiling into excerpt-length spectrograms
"""
import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np

from models import ReverseMode, StftConfig, Waveform
from services.diffusion import Predictor, oracle_predictor, reverse_sample
from services.errors import AudioDataError
from services.schedule import Schedule
from services.stft import istft_inverse, stft_forward

logger = logging.getLogger(__name__)


def tiles(samples: np.ndarray, tile_len: int) -> List[np.ndarray]:
    """Non-overlapping tiles of tile_len samples, the last one zero-padded"""
    n = samples.shape[1]
    count = max(1, math.ceil(n / tile_len))
    padded = np.zeros((samples.shape[0], count * tile_len))
    padded[:, :n] = samples
    return [padded[:, i * tile_len:(i + 1) * tile_len] for i in range(count)]


def dereverb_waveform(
    w: Waveform,
    predictor: Predictor,
    s: Schedule,
    mode: ReverseMode,
    cfg: StftConfig,
    reference: Optional[Waveform] = None,
    return_trajectory: bool = False,
) -> Union[Waveform, Tuple[Waveform, List[Waveform]]]:
    """
    Run the reverse process on every segment-length tile of w and concatenate

    Args:
        w: Reverberant stereo input of any length
        predictor: Predictor used on every tile (ignored when reference is given)
        s: Schedule
        mode: Reverse parameterization matching the predictor
        cfg: STFT and segment settings
        reference: Clean signal; switches to the exact oracle predictor per tile
        return_trajectory: Also return the T+1 stitched intermediate waveforms

    Returns:
        Estimate with the input length, or (estimate, trajectory) when requested
    """
    if w.sample_rate != cfg.sample_rate:
        raise AudioDataError(f"Input is {w.sample_rate} Hz, pipeline runs at {cfg.sample_rate} Hz")
    if reference is not None and reference.samples.shape != w.samples.shape:
        raise AudioDataError(f"Reference shape {reference.samples.shape} differs from input {w.samples.shape}")
    seg = cfg.segment_samples
    n = w.num_samples
    wet_tiles = tiles(w.samples, seg)
    ref_tiles = tiles(reference.samples, seg) if reference is not None else None

    out_tiles: List[np.ndarray] = []
    traj_tiles: List[List[np.ndarray]] = []
    for i, tile in enumerate(wet_tiles):
        y = stft_forward(Waveform(samples=tile, sample_rate=w.sample_rate), cfg)
        p = predictor
        if ref_tiles is not None:
            x0 = stft_forward(Waveform(samples=ref_tiles[i], sample_rate=w.sample_rate), cfg)
            p = oracle_predictor(x0, y, s, mode)
        result = reverse_sample(y, p, s, mode, return_trajectory=return_trajectory)
        if return_trajectory:
            estimate, states = result
            traj_tiles.append([istft_inverse(st, cfg, seg).samples for st in states])
        else:
            estimate = result
        out_tiles.append(istft_inverse(estimate, cfg, seg).samples)
        logger.debug(f"Tile {i + 1}/{len(wet_tiles)} done")

    out = Waveform(samples=np.concatenate(out_tiles, axis=1)[:, :n], sample_rate=w.sample_rate)
    if not return_trajectory:
        return out
    trajectory = [
        Waveform(samples=np.concatenate([t[step] for t in traj_tiles], axis=1)[:, :n], sample_rate=w.sample_rate)
        for step in range(s.num_steps + 1)
    ]
    return out, trajectory
