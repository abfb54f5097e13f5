"""
Signal-based and percussion-oriented perceptual metrics

Every function compares an estimate with a reference (and, where noted, the
reverberant input) given as stereo Waveforms of equal length and rate.
Spectral and perceptual metrics are computed per channel and averaged;
SI-SDR and ESR work on the concatenated channels.
"""
import logging
from typing import Optional

import librosa
import numpy as np
from scipy.signal import get_window, hilbert
from numpy.lib.stride_tricks import sliding_window_view

from models import MetricConfig, Waveform
from services.errors import AudioDataError
from services.onsets import detect_onsets, onset_f_measure
from services.stft import stft_channel

logger = logging.getLogger(__name__)


def _check_pair(est: Waveform, ref: Waveform) -> None:
    if est.samples.shape != ref.samples.shape:
        raise AudioDataError(f"Length mismatch: estimate {est.samples.shape} vs reference {ref.samples.shape}")
    if est.sample_rate != ref.sample_rate:
        raise AudioDataError(f"Sample-rate mismatch: {est.sample_rate} vs {ref.sample_rate} Hz")


def _check_length(w: Waveform, minimum: int, what: str) -> None:
    if w.num_samples < minimum:
        raise AudioDataError(f"{what} needs at least {minimum} samples, got {w.num_samples}")


# ---------------------------------------------------------------------------
# Low-level metrics
# ---------------------------------------------------------------------------

def mstft_mag_mae(est: Waveform, ref: Waveform, cfg: MetricConfig) -> float:
    """Multi-resolution STFT log-magnitude MAE"""
    _check_pair(est, ref)
    _check_length(ref, max(cfg.mstft_ffts), "Multi-resolution STFT")
    per_res = []
    for n_fft, hop in zip(cfg.mstft_ffts, cfg.mstft_hops):
        errs = []
        for c in range(2):
            a = np.log(np.abs(stft_channel(est.samples[c], n_fft, hop)) + cfg.eps)
            b = np.log(np.abs(stft_channel(ref.samples[c], n_fft, hop)) + cfg.eps)
            errs.append(np.mean(np.abs(a - b)))
        per_res.append(np.mean(errs))
    return float(np.mean(per_res))


def mstft_phase_mae(est: Waveform, ref: Waveform, cfg: MetricConfig) -> float:
    """Multi-resolution mean absolute wrapped phase difference, in radians"""
    _check_pair(est, ref)
    _check_length(ref, max(cfg.mstft_ffts), "Multi-resolution STFT")
    per_res = []
    for n_fft, hop in zip(cfg.mstft_ffts, cfg.mstft_hops):
        errs = []
        for c in range(2):
            a = stft_channel(est.samples[c], n_fft, hop)
            b = stft_channel(ref.samples[c], n_fft, hop)
            diff = np.abs(np.angle(a * np.conj(b)))
            if cfg.phase_exclude_silent:
                keep = (np.abs(a) >= cfg.eps) | (np.abs(b) >= cfg.eps)
                diff = diff[keep]
            errs.append(float(np.mean(diff)) if diff.size else 0.0)
        per_res.append(np.mean(errs))
    return float(np.mean(per_res))


def esr(est: Waveform, ref: Waveform, eps: float = 1e-8) -> float:
    """Error-to-signal ratio over both channels"""
    _check_pair(est, ref)
    err = np.sum((est.samples - ref.samples) ** 2)
    return float(err / (np.sum(ref.samples ** 2) + eps))


def si_sdr(est: Waveform, ref: Waveform, eps: float = 1e-8, cap_db: float = 60.0) -> float:
    """
    Scale-invariant SDR in dB over the concatenated, per-channel zero-mean signals

    Values are clipped to [-cap_db, cap_db]; a vanishing residual gives +cap_db.

    Raises:
        AudioDataError: Silent reference
    """
    _check_pair(est, ref)
    x_hat = (est.samples - est.samples.mean(axis=1, keepdims=True)).ravel()
    x = (ref.samples - ref.samples.mean(axis=1, keepdims=True)).ravel()
    ref_energy = float(np.dot(x, x))
    if ref_energy < eps:
        raise AudioDataError("SI-SDR is undefined for a silent reference")
    alpha = float(np.dot(x_hat, x)) / ref_energy
    target = alpha * x
    residual = x_hat - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy == 0.0:
        return float(cap_db)
    if target_energy == 0.0:
        return float(-cap_db)
    value = 10.0 * np.log10(target_energy / residual_energy)
    return float(np.clip(value, -cap_db, cap_db))


def si_sdri(est: Waveform, ref: Waveform, reverberant: Waveform, eps: float = 1e-8, cap_db: float = 60.0) -> float:
    """SI-SDR improvement of the estimate over the reverberant input"""
    return si_sdr(est, ref, eps, cap_db) - si_sdr(reverberant, ref, eps, cap_db)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(est: Waveform, ref: Waveform, cfg: MetricConfig) -> float:
    """
    Normalized mutual information I(U;V) / sqrt(H(U) H(V)) of log-magnitude spectrograms

    Plug-in estimate from an nmi_bins x nmi_bins joint histogram; a constant
    spectrogram has zero entropy and gives 0.
    """
    _check_pair(est, ref)
    values = []
    for c in range(2):
        u = np.log(np.abs(stft_channel(est.samples[c], cfg.nmi_fft, cfg.nmi_hop)) + cfg.eps).ravel()
        v = np.log(np.abs(stft_channel(ref.samples[c], cfg.nmi_fft, cfg.nmi_hop)) + cfg.eps).ravel()
        joint, _, _ = np.histogram2d(u, v, bins=cfg.nmi_bins)
        p = joint / joint.sum()
        pu = p.sum(axis=1)
        pv = p.sum(axis=0)
        hu, hv = _entropy(pu), _entropy(pv)
        if hu <= 0.0 or hv <= 0.0:
            values.append(0.0)
            continue
        nz = p > 0
        mi = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pu, pv)[nz])))
        values.append(float(np.clip(mi / np.sqrt(hu * hv), 0.0, 1.0)))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Perceptual metrics
# ---------------------------------------------------------------------------

def mel_filterbank(num_bands: int, num_samples: int, sample_rate: int, fmin: float) -> np.ndarray:
    """Unnormalized HTK-mel triangles on the rfft grid, shape (num_bands, num_samples // 2 + 1)"""
    return librosa.filters.mel(sr=sample_rate, n_fft=num_samples, n_mels=num_bands, fmin=fmin,
                               fmax=sample_rate / 2.0, htk=True, norm=None, dtype=np.float64)


def modulation_spectra(x: np.ndarray, sample_rate: int, cfg: MetricConfig) -> np.ndarray:
    """Log-magnitude modulation spectra of the subband Hilbert envelopes, shape (bands, mod bins)"""
    n = x.shape[0]
    spectrum = np.fft.rfft(x)
    bank = mel_filterbank(cfg.msd_subbands, n, sample_rate, cfg.msd_fmin_hz)
    mod_freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    keep = (mod_freqs > 0) & (mod_freqs <= cfg.msd_mod_max_hz)
    window = get_window("hann", n, fftbins=True)
    out = np.empty((cfg.msd_subbands, int(keep.sum())))
    for b in range(cfg.msd_subbands):
        band = np.fft.irfft(spectrum * bank[b], n=n)
        env = np.abs(hilbert(band))
        mod = np.abs(np.fft.rfft((env - env.mean()) * window))
        out[b] = np.log(mod[keep] + cfg.eps)
    return out


def msd(est: Waveform, ref: Waveform, cfg: MetricConfig) -> float:
    """Modulation spectrum distance: MAE of subband log modulation spectra up to msd_mod_max_hz"""
    _check_pair(est, ref)
    _check_length(ref, int(round(cfg.msd_min_seconds * ref.sample_rate)), "Modulation spectrum distance")
    errs = []
    for c in range(2):
        a = modulation_spectra(est.samples[c], est.sample_rate, cfg)
        b = modulation_spectra(ref.samples[c], ref.sample_rate, cfg)
        if a.size == 0:
            raise AudioDataError("Signal too short to resolve any modulation frequency")
        errs.append(np.mean(np.abs(a - b)))
    return float(np.mean(errs))


def rms_envelope(w: Waveform, frame: int, hop: int) -> np.ndarray:
    """Frame RMS of the DC-free mono downmix"""
    x = w.samples - w.samples.mean(axis=1, keepdims=True)
    mono = x.mean(axis=0)
    frames = sliding_window_view(mono, frame)[::hop]
    return np.sqrt(np.mean(frames ** 2, axis=1))


def env_corr(est: Waveform, ref: Waveform, cfg: MetricConfig) -> float:
    """
    Pearson correlation of RMS envelopes

    Raises:
        AudioDataError: Input shorter than one frame, or a constant envelope
    """
    _check_pair(est, ref)
    _check_length(ref, cfg.env_frame, "Envelope correlation")
    a = rms_envelope(est, cfg.env_frame, cfg.env_hop)
    b = rms_envelope(ref, cfg.env_frame, cfg.env_hop)
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise AudioDataError("Envelope correlation is undefined for a constant envelope")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def transient_tail_ratio(x: np.ndarray, start: int, transient: int, tail: int, eps: float) -> float:
    """10 log10 of transient-window energy over tail-window energy"""
    e_tr = float(np.sum(x[start:start + transient] ** 2))
    e_tail = float(np.sum(x[start + transient:start + transient + tail] ** 2))
    return 10.0 * np.log10((e_tr + eps) / (e_tail + eps))


def tter_dev(est: Waveform, ref: Waveform, cfg: MetricConfig, onsets: Optional[list] = None) -> float:
    """
    Mean absolute transient-to-tail energy ratio deviation in dB, at the reference onsets

    Raises:
        AudioDataError: No reference onset with a complete tail window
    """
    _check_pair(est, ref)
    onsets = detect_onsets(ref, cfg) if onsets is None else onsets
    if not onsets:
        raise AudioDataError("No onsets detected in the reference")
    sr = ref.sample_rate
    tr = int(round(cfg.tter_transient_ms * 1e-3 * sr))
    tail = int(round(cfg.tter_tail_ms * 1e-3 * sr))
    starts = [int(round(t * sr)) for t in onsets]
    starts = [s for s in starts if s + tr + tail <= ref.num_samples]
    if not starts:
        raise AudioDataError("Every reference onset is too close to the end for a complete tail window")
    per_channel = []
    for c in range(2):
        devs = [abs(transient_tail_ratio(est.samples[c], s, tr, tail, cfg.eps)
                    - transient_tail_ratio(ref.samples[c], s, tr, tail, cfg.eps)) for s in starts]
        per_channel.append(np.mean(devs))
    return float(np.mean(per_channel))


def onset_f_improvement(est: Waveform, reverberant: Waveform, ref: Waveform, cfg: MetricConfig,
                        onsets: Optional[list] = None) -> float:
    """
    Onset F-measure of the estimate minus that of the reverberant input, against reference onsets

    Raises:
        AudioDataError: No onsets in the reference
    """
    _check_pair(est, ref)
    _check_pair(reverberant, ref)
    reference = detect_onsets(ref, cfg) if onsets is None else onsets
    if not reference:
        raise AudioDataError("No onsets detected in the reference")
    tol = cfg.onset_tolerance_ms * 1e-3
    f_est = onset_f_measure(detect_onsets(est, cfg), reference, tol)
    f_rev = onset_f_measure(detect_onsets(reverberant, cfg), reference, tol)
    return f_est - f_rev
