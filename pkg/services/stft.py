"""
Stereo waveform <-> RI-stacked spectrogram conversion, and excerpt segmentation
"""
import logging
from typing import List, Literal, Optional

import librosa
import numpy as np

from models import SpectroTensor, StftConfig, Waveform
from services.errors import AudioDataError, ConfigurationError

logger = logging.getLogger(__name__)

# Periodic Hann (fftbins=True) in both directions
WINDOW = "hann"


def num_frames(num_samples: int, hop: int) -> int:
    """Frame count under centered reflect padding"""
    return 1 + num_samples // hop


def stft_channel(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """
    Complex STFT of one channel with periodic Hann frames centered at k*hop

    Args:
        x: 1-D signal
        fft_size: FFT/window length
        hop: Hop size

    Returns:
        Complex array of shape (fft_size // 2 + 1, 1 + len(x) // hop)
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    pad_mode = "reflect" if x.shape[0] > fft_size // 2 else "constant"
    return librosa.stft(x, n_fft=fft_size, hop_length=hop, window=WINDOW, center=True,
                        pad_mode=pad_mode, dtype=np.complex128)


def istft_channel(spec: np.ndarray, fft_size: int, hop: int, out_len: int) -> np.ndarray:
    """Inverse of stft_channel, truncated or zero-padded to out_len"""
    return librosa.istft(np.ascontiguousarray(spec, dtype=np.complex128), hop_length=hop, n_fft=fft_size,
                         window=WINDOW, center=True, length=out_len, dtype=np.float64)


def istft_channel_adjoint(grad: np.ndarray, fft_size: int, hop: int, frame_count: int) -> np.ndarray:
    """
    Adjoint of istft_channel with respect to the real and imaginary parts

    Maps a gradient on the output waveform to gradients on Re and Im of the
    spectrogram, returned as one complex array (real part = d/dRe, imaginary
    part = d/dIm), shape (fft_size // 2 + 1, frame_count). Uses the same
    window and squared-window normalization as librosa.istft.
    """
    window = librosa.filters.get_window(WINDOW, fft_size, fftbins=True)
    pad = fft_size // 2
    total = (frame_count - 1) * hop + fft_size
    wss = librosa.filters.window_sumsquare(window=WINDOW, n_frames=frame_count, hop_length=hop,
                                           n_fft=fft_size, dtype=np.float64)
    embedded = np.zeros(total)
    n = min(grad.shape[0], total - pad)
    embedded[pad:pad + n] = grad[:n]
    nz = wss > librosa.util.tiny(wss)
    embedded[nz] /= wss[nz]
    embedded[~nz] = 0.0
    frames = librosa.util.frame(embedded, frame_length=fft_size, hop_length=hop, axis=0)[:frame_count] * window
    # Adjoint of irfft: each interior bin appears twice in the real inverse
    spec = np.fft.rfft(frames, axis=-1) / fft_size
    spec[:, 1:-1] *= 2.0
    return spec.T


def _check_config(s: SpectroTensor, cfg: StftConfig) -> None:
    if s.fft_size != cfg.fft_size or s.hop != cfg.hop:
        raise ConfigurationError(
            f"Spectrogram was produced with fft_size={s.fft_size}, hop={s.hop}; "
            f"configuration expects fft_size={cfg.fft_size}, hop={cfg.hop}"
        )
    if s.data.shape[1] != cfg.num_bins:
        raise ConfigurationError(f"Spectrogram has {s.data.shape[1]} bins, expected {cfg.num_bins}")


def stft_forward(w: Waveform, cfg: StftConfig) -> SpectroTensor:
    """
    Stereo STFT stacked as [Re L, Im L, Re R, Im R]

    Raises:
        AudioDataError: Input shorter than one FFT frame
    """
    if w.num_samples < cfg.fft_size:
        raise AudioDataError(f"Input has {w.num_samples} samples, fewer than fft_size={cfg.fft_size}")
    left = stft_channel(w.samples[0], cfg.fft_size, cfg.hop)
    right = stft_channel(w.samples[1], cfg.fft_size, cfg.hop)
    data = np.stack([left.real, left.imag, right.real, right.imag])
    return SpectroTensor(data=data, fft_size=cfg.fft_size, hop=cfg.hop, sample_rate=w.sample_rate)


def istft_inverse(s: SpectroTensor, cfg: StftConfig, out_len: int) -> Waveform:
    """Inverse STFT of both channels, trimmed or zero-padded to out_len samples"""
    _check_config(s, cfg)
    if out_len <= 0:
        raise ConfigurationError(f"out_len must be positive, got {out_len}")
    d = s.data
    left = istft_channel(d[0] + 1j * d[1], cfg.fft_size, cfg.hop, out_len)
    right = istft_channel(d[2] + 1j * d[3], cfg.fft_size, cfg.hop, out_len)
    return Waveform(samples=np.stack([left, right]), sample_rate=s.sample_rate)


def istft_data(data: np.ndarray, fft_size: int, hop: int, out_len: int) -> np.ndarray:
    """Array-level inverse used in inner loops: (4, F, K) -> (2, out_len)"""
    return np.stack([
        istft_channel(data[0] + 1j * data[1], fft_size, hop, out_len),
        istft_channel(data[2] + 1j * data[3], fft_size, hop, out_len),
    ])


def istft_data_adjoint(grad: np.ndarray, fft_size: int, hop: int, frame_count: int) -> np.ndarray:
    """Array-level adjoint of istft_data: (2, N) -> (4, F, K)"""
    left = istft_channel_adjoint(grad[0], fft_size, hop, frame_count)
    right = istft_channel_adjoint(grad[1], fft_size, hop, frame_count)
    return np.stack([left.real, left.imag, right.real, right.imag])


def segment_offsets(num_samples: int, cfg: StftConfig,
                    mode: Literal["deterministic", "random"] = "deterministic",
                    seed: Optional[int] = None) -> List[int]:
    """
    Start offsets of the excerpts segment() would cut

    Deterministic mode tiles the input without overlap; random mode draws the
    same number of offsets uniformly from the valid range, sorted.
    """
    seg = cfg.segment_samples
    if num_samples < seg:
        raise AudioDataError(
            f"Input has {num_samples} samples, shorter than one {cfg.segment_seconds} s segment ({seg} samples)"
        )
    count = num_samples // seg
    if mode == "deterministic":
        return [i * seg for i in range(count)]
    if mode == "random":
        rng = np.random.default_rng(seed)
        return sorted(int(o) for o in rng.integers(0, num_samples - seg + 1, size=count))
    raise ConfigurationError(f"Unknown segmentation mode: {mode}")


def segment(w: Waveform, cfg: StftConfig,
            mode: Literal["deterministic", "random"] = "deterministic",
            seed: Optional[int] = None) -> List[Waveform]:
    """Cut w into segment_seconds excerpts"""
    seg = cfg.segment_samples
    offsets = segment_offsets(w.num_samples, cfg, mode=mode, seed=seed)
    return [Waveform(samples=w.samples[:, o:o + seg], sample_rate=w.sample_rate) for o in offsets]
