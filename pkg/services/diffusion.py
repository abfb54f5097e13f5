"""
Deterministic forward degradation and the two reverse samplers
"""
import logging
from typing import Callable, List, Optional, Protocol, Tuple, Union, runtime_checkable

import numpy as np

from models import ReverseMode, SpectroTensor
from services.errors import ConfigurationError, NumericalInstabilityError
from services.schedule import Schedule, alpha_at, step_size

logger = logging.getLogger(__name__)

PredictorOutput = Union[SpectroTensor, np.ndarray]


@runtime_checkable
class Predictor(Protocol):
    """
    Reverse transition model f(x_t, t)

    Direct mode: returns an estimate of x_{t-1}.
    Delta mode: returns an estimate of v_t = (x_{t-1} - x_t) / g_t.
    """

    def __call__(self, x_t: SpectroTensor, t: int) -> PredictorOutput:
        ...


class FunctionPredictor:
    """Adapts a plain array function (data, t) -> data to the Predictor interface"""

    def __init__(self, fn: Callable[[np.ndarray, int], np.ndarray]):
        self.fn = fn

    def __call__(self, x_t: SpectroTensor, t: int) -> SpectroTensor:
        return x_t.with_data(np.asarray(self.fn(x_t.data, t), dtype=np.float64))


def _as_array(out: PredictorOutput) -> np.ndarray:
    return out.data if isinstance(out, SpectroTensor) else np.asarray(out, dtype=np.float64)


def _check_pair(x0: SpectroTensor, y: SpectroTensor) -> None:
    if x0.shape != y.shape:
        raise ConfigurationError(f"Shape mismatch: clean {x0.shape} vs reverberant {y.shape}")


def forward_mix_data(x0: np.ndarray, y: np.ndarray, s: Schedule, t: int) -> np.ndarray:
    """a_t * x0 + (1 - a_t) * y on raw arrays"""
    a = alpha_at(s, t)
    if a == 1.0:
        return x0.copy()
    if a == 0.0:
        return y.copy()
    return a * x0 + (1.0 - a) * y


def forward_mix(x0: SpectroTensor, y: SpectroTensor, s: Schedule, t: int) -> SpectroTensor:
    """
    Degraded state x_t between the clean and reverberant spectrograms

    Raises:
        ConfigurationError: Shape mismatch or t outside [0, T]
    """
    _check_pair(x0, y)
    return x0.with_data(forward_mix_data(x0.data, y.data, s, t))


class OraclePredictor:
    """Returns the exact target implied by the forward process for a known (x0, y) pair"""

    def __init__(self, x0: SpectroTensor, y: SpectroTensor, s: Schedule, mode: ReverseMode):
        _check_pair(x0, y)
        self.x0 = x0
        self.y = y
        self.schedule = s
        self.mode = ReverseMode(mode)

    def __call__(self, x_t: SpectroTensor, t: int) -> SpectroTensor:
        prev = forward_mix_data(self.x0.data, self.y.data, self.schedule, t - 1)
        if self.mode == ReverseMode.DIRECT:
            return x_t.with_data(prev)
        cur = forward_mix_data(self.x0.data, self.y.data, self.schedule, t)
        return x_t.with_data((prev - cur) / step_size(self.schedule, t))


def oracle_predictor(x0: SpectroTensor, y: SpectroTensor, s: Schedule, mode: ReverseMode) -> OraclePredictor:
    """Exact x_{t-1} (Direct) or exact v_t (Delta) for the pair (x0, y)"""
    return OraclePredictor(x0, y, s, mode)


class DeltaFromDirect:
    """Delta-mode view (d(x, t) - x) / g_t of a Direct-mode predictor d"""

    def __init__(self, direct: Predictor, s: Schedule):
        self.direct = direct
        self.schedule = s

    def __call__(self, x_t: SpectroTensor, t: int) -> SpectroTensor:
        d = _as_array(self.direct(x_t, t))
        return x_t.with_data((d - x_t.data) / step_size(self.schedule, t))


def as_delta_predictor(direct: Predictor, s: Schedule) -> DeltaFromDirect:
    return DeltaFromDirect(direct, s)


def zero_predictor() -> FunctionPredictor:
    """Predicts an all-zero tensor"""
    return FunctionPredictor(lambda data, t: np.zeros_like(data))


def reverse_sample(
    y: SpectroTensor,
    p: Predictor,
    s: Schedule,
    mode: ReverseMode,
    return_trajectory: bool = False,
) -> Union[SpectroTensor, Tuple[SpectroTensor, List[SpectroTensor]]]:
    """
    Run the reverse process from x_T = y down to x_0

    Args:
        y: Reverberant spectrogram (initial state)
        p: Predictor interpreted according to mode
        s: Schedule; its T sets the number of iterations
        mode: Direct or Delta (step-size-normalized) update
        return_trajectory: Also return all T+1 states, index t holding x_t

    Returns:
        The estimate x_0, or (x_0, trajectory) when requested

    Raises:
        ConfigurationError: Predictor output shape differs from the state shape
        NumericalInstabilityError: Non-finite predictor output or state, naming the step
    """
    mode = ReverseMode(mode)
    x = y.data.copy()
    states: Optional[List[np.ndarray]] = [y.data.copy()] if return_trajectory else None

    for t in range(s.num_steps, 0, -1):
        out = _as_array(p(y.with_data(x), t))
        if out.shape != x.shape:
            raise ConfigurationError(f"Predictor returned shape {out.shape} at step {t}, expected {x.shape}")
        if not np.all(np.isfinite(out)):
            raise NumericalInstabilityError(
                f"Non-finite predictor output at step {t}",
                step=t,
                diagnostics={"non_finite": int(np.size(out) - np.count_nonzero(np.isfinite(out))),
                             "state_abs_max": float(np.max(np.abs(x)))},
            )
        if mode == ReverseMode.DIRECT:
            x = out.copy()
        else:
            x = x + step_size(s, t) * out
        if not np.all(np.isfinite(x)):
            raise NumericalInstabilityError(f"Non-finite state after step {t}", step=t)
        if states is not None:
            states.append(x.copy())
        logger.debug(f"Reverse step t={t} done, |x|max={float(np.max(np.abs(x))):.4g}")

    estimate = y.with_data(x)
    if states is None:
        return estimate
    # states were collected from t = T down to 0
    trajectory = [y.with_data(d) for d in reversed(states)]
    return estimate, trajectory
