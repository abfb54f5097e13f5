"""
Shared fixtures and signal builders for the test suite
"""
import numpy as np
import pytest

from models import SpectroTensor, Waveform

SR = 44100


def noise_waveform(seconds: float = 2.0, seed: int = 0, scale: float = 0.1, sample_rate: int = SR) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    return Waveform(samples=scale * rng.standard_normal((2, n)), sample_rate=sample_rate)


def click_waveform(times, seconds: float = 2.0, decay_s: float = 0.01, seed: int = 0,
                   sample_rate: int = SR) -> Waveform:
    """Stereo decaying noise bursts starting at the given times"""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    x = np.zeros((2, n))
    length = int(8 * decay_s * sample_rate)
    env = np.exp(-np.arange(length) / (decay_s * sample_rate))
    for t in times:
        start = int(round(t * sample_rate))
        seg = min(length, n - start)
        burst = rng.standard_normal(seg) * env[:seg]
        x[0, start:start + seg] += burst
        x[1, start:start + seg] += 0.8 * burst
    return Waveform(samples=0.5 * x / np.max(np.abs(x)), sample_rate=sample_rate)


def random_spectro(seed: int = 0, fft_size: int = 16, frames: int = 5) -> SpectroTensor:
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((4, fft_size // 2 + 1, frames))
    return SpectroTensor(data=data, fft_size=fft_size, hop=fft_size // 4)


@pytest.fixture
def clicks() -> Waveform:
    return click_waveform([0.1, 0.45, 0.8, 1.2, 1.55])
