"""
Training objective: spectral L1 terms for both reverse modes plus the waveform L1 term
"""
from typing import NamedTuple, Tuple, Union

import numpy as np

from models import LossWeights, ReverseMode, SpectroTensor, StftConfig, Waveform
from services.errors import ConfigurationError
from services.stft import istft_data, istft_data_adjoint

Tensorish = Union[SpectroTensor, Waveform, np.ndarray]


class LossBreakdown(NamedTuple):
    total: float
    spec: float
    aud: float


def _arr(v: Tensorish) -> np.ndarray:
    if isinstance(v, SpectroTensor):
        return v.data
    if isinstance(v, Waveform):
        return v.samples
    return np.asarray(v, dtype=np.float64)


def l1(a: Tensorish, b: Tensorish) -> float:
    """Mean absolute difference"""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"Shape mismatch in L1: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def v_target(x_prev: Tensorish, x_t: Tensorish, g_t: float) -> np.ndarray:
    """Normalized update (x_prev - x_t) / g_t"""
    if not g_t > 0:
        raise ConfigurationError(f"Step size must be positive, got {g_t}")
    x_prev, x_t = _arr(x_prev), _arr(x_t)
    if x_prev.shape != x_t.shape:
        raise ConfigurationError(f"Shape mismatch: {x_prev.shape} vs {x_t.shape}")
    return (x_prev - x_t) / g_t


def predicted_state(mode: ReverseMode, pred: Tensorish, x_t: Tensorish, g_t: float) -> np.ndarray:
    """x_{t-1} implied by a prediction in either mode"""
    if ReverseMode(mode) == ReverseMode.DIRECT:
        return _arr(pred)
    return _arr(x_t) + g_t * _arr(pred)


def spec_loss(mode: ReverseMode, pred: Tensorish, x_prev: Tensorish, x_t: Tensorish,
              g_t: float, w: LossWeights) -> float:
    """
    Spectral term of the objective

    Direct: L1(pred, x_prev).
    Delta: delta_weight * L1(pred, v_t) + state_weight * L1(x_t + g_t * pred, x_prev).
    """
    if ReverseMode(mode) == ReverseMode.DIRECT:
        return l1(pred, x_prev)
    v = v_target(x_prev, x_t, g_t)
    return (w.delta_weight * l1(pred, v)
            + w.state_weight * l1(predicted_state(mode, pred, x_t, g_t), x_prev))


def audio_loss(pred_state: Tensorish, target_state: Tensorish, cfg: StftConfig, out_len: int) -> float:
    """L1 between the inverse-STFT waveforms of two states"""
    p, q = _arr(pred_state), _arr(target_state)
    if p.shape != q.shape:
        raise ConfigurationError(f"Shape mismatch: {p.shape} vs {q.shape}")
    if p.shape[1] != cfg.num_bins:
        raise ConfigurationError(f"State has {p.shape[1]} bins, expected {cfg.num_bins}")
    return l1(istft_data(p, cfg.fft_size, cfg.hop, out_len), istft_data(q, cfg.fft_size, cfg.hop, out_len))


def total_loss(mode: ReverseMode, pred: Tensorish, x_prev: Tensorish, x_t: Tensorish, g_t: float,
               w: LossWeights, cfg: StftConfig, out_len: int) -> LossBreakdown:
    """total = spec + lambda_aud * aud, audio term computed on the (t-1) states"""
    spec = spec_loss(mode, pred, x_prev, x_t, g_t, w)
    aud = audio_loss(predicted_state(mode, pred, x_t, g_t), x_prev, cfg, out_len)
    return LossBreakdown(spec + w.lambda_aud * aud, spec, aud)


def total_loss_grad(mode: ReverseMode, pred: np.ndarray, x_prev: np.ndarray, x_t: np.ndarray, g_t: float,
                    w: LossWeights, cfg: StftConfig, out_len: int) -> Tuple[LossBreakdown, np.ndarray]:
    """
    Loss and its (sub)gradient with respect to the prediction

    The L1 subgradient at a zero residual is taken as 0.

    Returns:
        (LossBreakdown, gradient array shaped like pred)
    """
    mode = ReverseMode(mode)
    pred, x_prev, x_t = _arr(pred), _arr(x_prev), _arr(x_t)
    n = pred.size

    if mode == ReverseMode.DIRECT:
        state = pred
        r = pred - x_prev
        spec = float(np.mean(np.abs(r)))
        grad = np.sign(r) / n
        state_scale = 1.0
    else:
        v = v_target(x_prev, x_t, g_t)
        state = x_t + g_t * pred
        r_v = pred - v
        r_s = state - x_prev
        spec = w.delta_weight * float(np.mean(np.abs(r_v))) + w.state_weight * float(np.mean(np.abs(r_s)))
        grad = (w.delta_weight * np.sign(r_v) + w.state_weight * g_t * np.sign(r_s)) / n
        state_scale = g_t

    wave_res = (istft_data(state, cfg.fft_size, cfg.hop, out_len)
                - istft_data(x_prev, cfg.fft_size, cfg.hop, out_len))
    aud = float(np.mean(np.abs(wave_res)))
    if w.lambda_aud:
        back = istft_data_adjoint(np.sign(wave_res) / wave_res.size, cfg.fft_size, cfg.hop, pred.shape[2])
        grad = grad + w.lambda_aud * state_scale * back

    return LossBreakdown(spec + w.lambda_aud * aud, spec, aud), grad
