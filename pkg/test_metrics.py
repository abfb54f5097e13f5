"""
Tests for the evaluation metrics
"""
import math

import numpy as np
import pytest

from conftest import click_waveform, noise_waveform
from models import MetricConfig, RirProvenance, RirSample, Waveform
from services.errors import AudioDataError
from services.evaluation import aggregate, evaluate_all
from services.metrics import (
    env_corr, esr, mel_filterbank, msd, mstft_mag_mae, mstft_phase_mae, nmi, onset_f_improvement, si_sdr, tter_dev,
)
from services.onsets import detect_onsets, onset_f_measure
from services.rir import render_wet

CFG = MetricConfig()
SR = 44100


def reverberant(w: Waveform, t60: float = 0.5, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(seed)
    t = np.arange(int(0.6 * SR)) / SR
    taps = rng.standard_normal(t.size) * 10.0 ** (-3.0 * t / t60)
    taps[0] = 5.0
    return render_wet(w, RirSample(taps=taps, provenance=RirProvenance(kind="measured")))


def test_identity_row(clicks):
    y = reverberant(clicks)
    row = evaluate_all(clicks, clicks, y, CFG, example_id="same")
    assert row.example_id == "same"
    assert row.mstft_mag == 0.0
    assert row.mstft_phase == 0.0
    assert row.esr == 0.0
    assert row.msd == 0.0
    assert row.tter == 0.0
    assert row.si_sdr == 60.0
    assert row.nmi == pytest.approx(1.0, abs=1e-9)
    assert row.env == pytest.approx(1.0, abs=1e-9)
    ref_onsets = detect_onsets(clicks, CFG)
    f_rev = onset_f_measure(detect_onsets(y, CFG), ref_onsets, 0.05)
    assert row.onfi == pytest.approx(1.0 - f_rev)


def test_reverberant_row_has_no_improvement(clicks):
    y = reverberant(clicks)
    row = evaluate_all(y, clicks, y, CFG)
    assert row.si_sdri == 0.0
    assert row.onfi == 0.0


def test_esr_cases():
    x = noise_waveform(seed=1)
    zero = Waveform(samples=np.zeros_like(x.samples))
    assert esr(zero, x) == pytest.approx(1.0, abs=1e-6)
    assert esr(Waveform(samples=2 * x.samples), x) == pytest.approx(1.0, abs=1e-6)
    assert esr(x, x) == 0.0


def test_phase_of_polarity_flip_is_pi():
    x = noise_waveform(seed=2)
    flipped = Waveform(samples=-x.samples)
    assert mstft_phase_mae(flipped, x, CFG) == pytest.approx(math.pi, abs=1e-9)
    assert mstft_mag_mae(flipped, x, CFG) == pytest.approx(0.0, abs=1e-9)


def test_si_sdr_scale_invariance_and_orthogonal_noise():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, SR))
    x -= x.mean(axis=1, keepdims=True)
    ref = Waveform(samples=x)
    assert si_sdr(Waveform(samples=3.7 * x), ref) == 60.0

    e = rng.standard_normal((2, SR))
    e -= e.mean(axis=1, keepdims=True)
    flat_x, flat_e = x.ravel(), e.ravel()
    flat_e -= np.dot(flat_e, flat_x) / np.dot(flat_x, flat_x) * flat_x
    flat_e *= math.sqrt(np.dot(flat_x, flat_x) / 100.0 / np.dot(flat_e, flat_e))
    noisy = Waveform(samples=x + flat_e.reshape(2, -1))
    assert si_sdr(noisy, ref) == pytest.approx(20.0, abs=0.1)


def test_si_sdr_rejects_silent_reference():
    x = noise_waveform(seed=4)
    with pytest.raises(AudioDataError):
        si_sdr(x, Waveform(samples=np.zeros_like(x.samples)))


def test_nmi_bounds():
    a, b = noise_waveform(seed=5), noise_waveform(seed=6)
    assert nmi(a, b, CFG) < 0.05
    assert nmi(a, a, CFG) == pytest.approx(1.0, abs=1e-9)
    assert nmi(Waveform(samples=np.zeros_like(a.samples)), a, CFG) == 0.0


def test_msd_separates_modulation_rates():
    t = np.arange(2 * SR) / SR
    carrier = noise_waveform(seed=7).samples
    ref = Waveform(samples=carrier * (1 + 0.9 * np.sin(2 * np.pi * 8 * t)))
    other = Waveform(samples=carrier * (1 + 0.9 * np.sin(2 * np.pi * 4 * t)))
    delayed = np.zeros_like(ref.samples)
    delayed[:, 44:] = ref.samples[:, :-44]
    far = msd(other, ref, CFG)
    assert msd(ref, ref, CFG) == 0.0
    assert far > 0.0
    assert msd(Waveform(samples=delayed), ref, CFG) < far


def test_mel_bands_are_unit_peak_triangles():
    bank = mel_filterbank(16, 44100, SR, 20.0)
    assert bank.shape == (16, 22051)
    assert bank.dtype == np.float64
    np.testing.assert_allclose(bank.max(axis=1), 1.0, atol=0.05)
    centers = np.argmax(bank, axis=1)
    assert np.all(np.diff(centers) > 0)
    assert np.all(np.diff(np.diff(centers)) >= 0)
    assert np.all(bank[:, :20] == 0.0)


def test_msd_needs_half_a_second():
    short = noise_waveform(seconds=0.25, seed=8)
    with pytest.raises(AudioDataError):
        msd(short, short, CFG)


def test_envelope_correlation():
    x = noise_waveform(seed=9)
    ramp = np.linspace(0.0, 1.0, x.num_samples)
    rising = Waveform(samples=x.samples * ramp)
    falling = Waveform(samples=x.samples * ramp[::-1])
    assert env_corr(Waveform(samples=2.0 * rising.samples + 0.1), rising, CFG) == pytest.approx(1.0, abs=1e-9)
    assert env_corr(falling, rising, CFG) < -0.9
    with pytest.raises(AudioDataError):
        env_corr(Waveform(samples=np.zeros_like(x.samples)), rising, CFG)


def click_with_tail(times, tail_gain: float, seconds: float = 2.0) -> Waveform:
    rng = np.random.default_rng(10)
    n = int(seconds * SR)
    x = np.zeros((2, n))
    burst_len = int(0.003 * SR)
    burst = rng.standard_normal(burst_len) * np.exp(-np.arange(burst_len) / (0.0005 * SR))
    tail_start, tail_end = int(0.030 * SR), int(0.170 * SR)
    tail_t = np.arange(tail_end - tail_start) / SR
    tail = 0.05 * rng.standard_normal(tail_t.size) * np.exp(-tail_t / 0.04)
    for t in times:
        c = int(round(t * SR))
        x[:, c:c + burst_len] += burst
        x[:, c + tail_start:c + tail_end] += tail_gain * tail
    return Waveform(samples=x)


def test_tter_of_amplified_tails():
    times = [0.2, 0.6, 1.0, 1.4]
    ref = click_with_tail(times, 1.0)
    est = click_with_tail(times, math.sqrt(10.0))
    assert tter_dev(est, ref, CFG, onsets=times) == pytest.approx(10.0, abs=0.2)
    assert tter_dev(Waveform(samples=0.5 * ref.samples), ref, CFG, onsets=times) < 1e-3
    assert tter_dev(ref, ref, CFG, onsets=times) == 0.0


def test_tter_and_onfi_need_reference_onsets():
    silent = Waveform(samples=np.zeros((2, 2 * SR)))
    x = noise_waveform(seed=11)
    with pytest.raises(AudioDataError):
        tter_dev(x, silent, CFG)
    with pytest.raises(AudioDataError):
        onset_f_improvement(x, x, silent, CFG)
    with pytest.raises(AudioDataError):
        tter_dev(x, x, CFG, onsets=[1.95])


def test_length_mismatch_is_rejected():
    with pytest.raises(AudioDataError):
        esr(noise_waveform(seconds=1.0), noise_waveform(seconds=2.0))


def test_aggregate_mean_and_std():
    x = click_waveform([0.3, 0.9, 1.5])
    rows = [evaluate_all(x, x, reverberant(x, seed=s), CFG, example_id=str(s)) for s in range(2)]
    aggs = aggregate(rows)
    for name in ("esr", "si_sdri", "onfi"):
        values = [getattr(r, name) for r in rows]
        assert aggs[name].mean == pytest.approx(np.mean(values))
        assert aggs[name].std == pytest.approx(np.std(values))
