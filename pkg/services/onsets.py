"""
Spectral-flux onset detection and onset F-measure
"""
import logging
import math
from typing import List, Sequence

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import find_peaks

from models import MetricConfig, Waveform
from services.stft import stft_channel

logger = logging.getLogger(__name__)


def onset_strength(w: Waveform, cfg: MetricConfig) -> np.ndarray:
    """Half-wave-rectified log-magnitude flux per frame; frame 0 is compared with silence"""
    mono = np.mean(w.samples, axis=0)
    mag = np.abs(stft_channel(mono, cfg.onset_fft, cfg.onset_hop))
    logmag = np.log1p(cfg.onset_log_gain * mag)
    prev = np.concatenate([np.zeros((logmag.shape[0], 1)), logmag[:, :-1]], axis=1)
    return np.sum(np.maximum(logmag - prev, 0.0), axis=0)


def detect_onsets(w: Waveform, cfg: MetricConfig) -> List[float]:
    """
    Onset times in seconds, at frame centers

    Peaks of the spectral flux above a moving-median threshold plus
    onset_delta times the flux maximum, at least onset_min_gap_ms apart.
    Silence gives an empty list.
    """
    flux = onset_strength(w, cfg)
    peak = float(np.max(flux)) if flux.size else 0.0
    if peak <= 0.0:
        return []
    size = 2 * cfg.onset_median_frames + 1
    threshold = median_filter(flux, size=size, mode="nearest") + cfg.onset_delta * peak
    gap_frames = max(1, int(math.ceil(cfg.onset_min_gap_ms * 1e-3 * w.sample_rate / cfg.onset_hop)))
    # Zero padding lets the first and last frames qualify as peaks
    padded = np.concatenate([[0.0], flux, [0.0]])
    height = np.concatenate([[np.inf], threshold, [np.inf]])
    peaks, _ = find_peaks(padded, height=height, distance=gap_frames)
    frames = peaks - 1
    frames = frames[flux[frames] > 0.0]
    return [float(k * cfg.onset_hop / w.sample_rate) for k in frames]


def match_onsets(estimated: Sequence[float], reference: Sequence[float], tolerance_s: float) -> int:
    """Greedy one-to-one matching in time order; returns the number of matched pairs"""
    est = sorted(estimated)
    ref = sorted(reference)
    used = [False] * len(est)
    matched = 0
    j0 = 0
    for r in ref:
        while j0 < len(est) and est[j0] < r - tolerance_s:
            j0 += 1
        for j in range(j0, len(est)):
            if est[j] > r + tolerance_s:
                break
            if not used[j]:
                used[j] = True
                matched += 1
                break
    return matched


def onset_f_measure(estimated: Sequence[float], reference: Sequence[float], tolerance_s: float) -> float:
    """F = 2 * matches / (n_estimated + n_reference)"""
    total = len(estimated) + len(reference)
    if total == 0:
        return 1.0
    return 2.0 * match_onsets(estimated, reference, tolerance_s) / total
