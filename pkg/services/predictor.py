"""
Reference predictor: per-step, per-frequency complex affine map trained with
analytic gradients, Adam and an exponential moving average of the weights
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import EpochRecord, LossWeights, ReverseMode, SpectroTensor, StftConfig, TrainConfig
from services.diffusion import forward_mix_data
from services.errors import AudioDataError, ConfigurationError, NumericalInstabilityError
from services.losses import LossBreakdown, total_loss_grad
from services.schedule import Schedule, step_size

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w_re", "w_im", "b_re", "b_im")

Params = Dict[str, np.ndarray]


class GainPredictor:
    """
    Complex gain W_t[f] and bias b_t[f] per step and frequency bin

    output(f, k) = W_t[f] * X(f, k) + b_t[f], in the complex plane, for each
    stereo channel. Parameter arrays have shape (T, C, F) where C is 1 when
    the left and right channels share parameters and 2 otherwise.
    """

    def __init__(self, params: Params, mode: ReverseMode, share_channels: bool = True):
        shapes = {params[name].shape for name in PARAM_NAMES}
        if len(shapes) != 1:
            raise ConfigurationError(f"Inconsistent parameter shapes: {sorted(shapes)}")
        shape = shapes.pop()
        channels = 1 if share_channels else 2
        if len(shape) != 3 or shape[1] != channels:
            raise ConfigurationError(f"Parameter shape {shape} does not fit share_channels={share_channels}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(params[name])):
                raise NumericalInstabilityError(f"Parameter {name} contains non-finite values")
        self.params: Params = {name: np.asarray(params[name], dtype=np.float64) for name in PARAM_NAMES}
        self.mode = ReverseMode(mode)
        self.share_channels = share_channels
        self.num_steps = shape[0]
        self.num_bins = shape[2]

    @classmethod
    def initial(cls, num_steps: int, num_bins: int, mode: ReverseMode,
                share_channels: bool = True) -> "GainPredictor":
        """Identity map for Direct mode, zero map for Delta mode"""
        shape = (num_steps, 1 if share_channels else 2, num_bins)
        gain = 1.0 if ReverseMode(mode) == ReverseMode.DIRECT else 0.0
        params = {
            "w_re": np.full(shape, gain),
            "w_im": np.zeros(shape),
            "b_re": np.zeros(shape),
            "b_im": np.zeros(shape),
        }
        return cls(params, mode, share_channels)

    def copy(self) -> "GainPredictor":
        return GainPredictor({k: v.copy() for k, v in self.params.items()}, self.mode, self.share_channels)

    def _slot(self, channel: int) -> int:
        return 0 if self.share_channels else channel

    def _check(self, data: np.ndarray, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ConfigurationError(f"Step index {t} outside [1, {self.num_steps}]")
        if data.ndim != 3 or data.shape[0] != 4 or data.shape[1] != self.num_bins:
            raise ConfigurationError(
                f"Input shape {data.shape} does not match predictor with {self.num_bins} bins"
            )

    def predict_data(self, data: np.ndarray, t: int) -> np.ndarray:
        """Apply the step-t affine map to a (4, F, K) array"""
        self._check(data, t)
        out = np.empty_like(data, dtype=np.float64)
        p = self.params
        for c in range(2):
            s = self._slot(c)
            wr = p["w_re"][t - 1, s][:, None]
            wi = p["w_im"][t - 1, s][:, None]
            xr, xi = data[2 * c], data[2 * c + 1]
            out[2 * c] = wr * xr - wi * xi + p["b_re"][t - 1, s][:, None]
            out[2 * c + 1] = wr * xi + wi * xr + p["b_im"][t - 1, s][:, None]
        return out

    def __call__(self, x_t: SpectroTensor, t: int) -> SpectroTensor:
        return x_t.with_data(self.predict_data(x_t.data, t))

    def backward(self, data: np.ndarray, t: int, grad_out: np.ndarray) -> Params:
        """Gradient of a scalar loss with respect to every parameter, given dL/d(output)"""
        self._check(data, t)
        grads = {name: np.zeros_like(self.params[name]) for name in PARAM_NAMES}
        for c in range(2):
            s = self._slot(c)
            xr, xi = data[2 * c], data[2 * c + 1]
            gr, gi = grad_out[2 * c], grad_out[2 * c + 1]
            grads["w_re"][t - 1, s] += np.sum(gr * xr + gi * xi, axis=1)
            grads["w_im"][t - 1, s] += np.sum(gi * xr - gr * xi, axis=1)
            grads["b_re"][t - 1, s] += np.sum(gr, axis=1)
            grads["b_im"][t - 1, s] += np.sum(gi, axis=1)
        return grads


def predict(p: GainPredictor, x_t: SpectroTensor, t: int) -> SpectroTensor:
    return p(x_t, t)


class AdamOptimizer:
    """Adam with bias correction over a dict of parameter arrays"""

    def __init__(self, learning_rate: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Params = {}
        self.v: Params = {}

    def step(self, params: Params, grads: Params) -> None:
        """Update params in place"""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class EmaTracker:
    """Shadow copy of the parameters: ema <- decay * ema + (1 - decay) * current"""

    def __init__(self, initial: Params, decay: float = 0.995):
        if not 0.0 <= decay < 1.0:
            raise ConfigurationError(f"EMA decay must lie in [0, 1), got {decay}")
        self.decay = decay
        self.shadow: Params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in initial.items()}
        self.updates = 0

    def update(self, current: Params) -> None:
        for name, value in current.items():
            if self.decay == 0.0:
                self.shadow[name] = value.copy()
            else:
                # Incremental form keeps a constant parameter exactly fixed
                self.shadow[name] += (1.0 - self.decay) * (value - self.shadow[name])
        self.updates += 1


@dataclass
class TrainingPair:
    """Clean and reverberant spectrograms of one excerpt"""
    example_id: str
    x0: np.ndarray
    y: np.ndarray
    out_len: int


def example_loss_and_grad(p: GainPredictor, pair: TrainingPair, t: int, s: Schedule,
                          w: LossWeights, cfg: StftConfig) -> Tuple[LossBreakdown, Params]:
    """Loss of one example at step t and its parameter gradients"""
    x_t = forward_mix_data(pair.x0, pair.y, s, t)
    x_prev = forward_mix_data(pair.x0, pair.y, s, t - 1)
    pred = p.predict_data(x_t, t)
    loss, grad_out = total_loss_grad(p.mode, pred, x_prev, x_t, step_size(s, t), w, cfg, pair.out_len)
    return loss, p.backward(x_t, t, grad_out)


class TrainingSession:
    """Mutable training state: current weights, optimizer moments, EMA shadow and history"""

    def __init__(self, predictor: GainPredictor, tcfg: TrainConfig):
        self.predictor = predictor.copy()
        self.config = tcfg
        self.optimizer = AdamOptimizer(tcfg.learning_rate, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps)
        self.ema = EmaTracker(self.predictor.params, tcfg.ema_decay)
        self.history: List[EpochRecord] = []

    @property
    def steps_taken(self) -> int:
        return self.optimizer.step_count

    def apply_batch(self, grads: List[Params]) -> None:
        """Adam step on the batch-mean gradient, then EMA update"""
        mean = {name: sum(g[name] for g in grads) / len(grads) for name in PARAM_NAMES}
        self.optimizer.step(self.predictor.params, mean)
        self.ema.update(self.predictor.params)


def ema_weights(session: TrainingSession) -> GainPredictor:
    """
    EMA shadow parameters as an independent predictor

    Raises:
        ConfigurationError: If no optimizer step was ever taken
    """
    if session.steps_taken == 0:
        raise ConfigurationError("No training step has run; EMA weights are undefined")
    return GainPredictor({k: v.copy() for k, v in session.ema.shadow.items()},
                         session.predictor.mode, session.predictor.share_channels)


def _mean_loss(losses: List[LossBreakdown]) -> LossBreakdown:
    n = len(losses)
    return LossBreakdown(sum(l.total for l in losses) / n,
                         sum(l.spec for l in losses) / n,
                         sum(l.aud for l in losses) / n)


def validation_loss(p: GainPredictor, pairs: Sequence[TrainingPair], s: Schedule, w: LossWeights,
                    cfg: StftConfig, seed: int) -> float:
    """Mean loss over pairs with a fixed per-pair step draw"""
    rng = np.random.default_rng([seed, 1])
    ts = rng.integers(1, s.num_steps + 1, size=len(pairs))
    losses = [example_loss_and_grad(p, pair, int(t), s, w, cfg)[0] for pair, t in zip(pairs, ts)]
    return _mean_loss(losses).total


def train(
    p: GainPredictor,
    data: Sequence[TrainingPair],
    s: Schedule,
    w: LossWeights,
    cfg: StftConfig,
    tcfg: TrainConfig,
    seed: Optional[int] = None,
    validation: Optional[Sequence[TrainingPair]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[GainPredictor, GainPredictor, List[EpochRecord]]:
    """
    Train a GainPredictor on paired spectrograms

    Each example in a batch draws its own step t uniformly from 1..T; the
    parameters follow Adam on the batch-mean gradient and the EMA shadow is
    updated after every step.

    Args:
        p: Initial predictor (not modified)
        data: Training pairs
        s: Schedule whose T matches the predictor
        w: Loss weights
        cfg: STFT settings of the spectrograms
        tcfg: Optimizer, EMA and loop settings
        seed: Overrides tcfg.seed
        validation: Optional held-out pairs scored after every epoch
        on_epoch: Callback receiving each EpochRecord

    Returns:
        (trained predictor, EMA predictor, per-epoch history)

    Raises:
        AudioDataError: Empty training set
        ConfigurationError: Schedule and predictor disagree on T
        NumericalInstabilityError: Non-finite batch loss
    """
    if not data:
        raise AudioDataError("Training set is empty")
    if s.num_steps != p.num_steps:
        raise ConfigurationError(f"Schedule has T={s.num_steps}, predictor has T={p.num_steps}")
    seed = seed if seed is not None else (tcfg.seed if tcfg.seed is not None else 0)
    rng = np.random.default_rng(seed)
    session = TrainingSession(p, tcfg)

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(data))
        epoch_losses: List[LossBreakdown] = []
        for batch_index, start in enumerate(range(0, len(order), tcfg.batch_size)):
            batch = [data[i] for i in order[start:start + tcfg.batch_size]]
            ts = rng.integers(1, s.num_steps + 1, size=len(batch))
            losses, grads = [], []
            for pair, t in zip(batch, ts):
                loss, g = example_loss_and_grad(session.predictor, pair, int(t), s, w, cfg)
                losses.append(loss)
                grads.append(g)
            batch_loss = _mean_loss(losses)
            finite_grads = all(np.all(np.isfinite(g[name])) for g in grads for name in PARAM_NAMES)
            if not np.isfinite(batch_loss.total) or not finite_grads:
                raise NumericalInstabilityError(
                    f"Non-finite loss in epoch {epoch}, batch {batch_index}",
                    diagnostics={
                        "epoch": epoch,
                        "batch": batch_index,
                        "examples": [pair.example_id for pair in batch],
                        "steps": [int(t) for t in ts],
                        "losses": [l.total for l in losses],
                    },
                )
            session.apply_batch(grads)
            epoch_losses.append(batch_loss)

        mean = _mean_loss(epoch_losses)
        record = EpochRecord(epoch=epoch, loss=mean.total, spec=mean.spec, aud=mean.aud)
        if validation:
            record.val_loss = validation_loss(session.predictor, validation, s, w, cfg, seed)
        session.history.append(record)
        logger.info(f"Epoch {epoch}/{tcfg.epochs}: loss={mean.total:.6f} spec={mean.spec:.6f} "
                    f"aud={mean.aud:.6f}" + (f" val={record.val_loss:.6f}" if record.val_loss is not None else ""))
        if on_epoch is not None:
            on_epoch(record)

    ema = ema_weights(session)
    return session.predictor, ema, session.history
