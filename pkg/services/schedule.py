"""
Degradation schedule: mixing coefficients a_t and step sizes g_t
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.errors import ConfigurationError


class Schedule(BaseModel):
    """Monotone schedule from a[0] = 1 (clean) to a[T] = 0 (reverberant)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    num_steps: int = Field(..., ge=1, description="Number of steps T")
    a: np.ndarray = Field(..., description="Mixing coefficients, length T+1")
    g: np.ndarray = Field(..., description="Step sizes g[t-1] = a[t-1] - a[t], length T")
    kind: str = "cosine_squared"

    @model_validator(mode="after")
    def check_monotone(self):
        if self.a.shape != (self.num_steps + 1,) or self.g.shape != (self.num_steps,):
            raise ValueError("schedule arrays do not match num_steps")
        if self.a[0] != 1.0 or self.a[-1] != 0.0:
            raise ValueError("schedule must start at 1 and end at 0")
        if np.any(self.g <= 0):
            raise ValueError("schedule must be strictly decreasing")
        return self


def make_schedule(num_steps: int) -> Schedule:
    """
    Cosine-squared schedule a_t = cos^2(pi/2 * t/T)

    Endpoints (and the midpoint for even T) are set exactly.

    Raises:
        ConfigurationError: If num_steps < 1
    """
    if not isinstance(num_steps, (int, np.integer)) or num_steps < 1:
        raise ConfigurationError(f"Schedule needs at least one step, got {num_steps}")
    t = np.arange(num_steps + 1, dtype=np.float64)
    a = np.cos(0.5 * math.pi * t / num_steps) ** 2
    a[0] = 1.0
    a[-1] = 0.0
    if num_steps % 2 == 0:
        a[num_steps // 2] = 0.5
    g = a[:-1] - a[1:]
    a.setflags(write=False)
    g.setflags(write=False)
    return Schedule(num_steps=int(num_steps), a=a, g=g)


def alpha_at(s: Schedule, t: int) -> float:
    """a_t for 0 <= t <= T"""
    if not 0 <= t <= s.num_steps:
        raise ConfigurationError(f"Step index {t} outside [0, {s.num_steps}]")
    return float(s.a[t])


def step_size(s: Schedule, t: int) -> float:
    """g_t = a_{t-1} - a_t for 1 <= t <= T"""
    if not 1 <= t <= s.num_steps:
        raise ConfigurationError(f"Step index {t} outside [1, {s.num_steps}]")
    return float(s.g[t - 1])
