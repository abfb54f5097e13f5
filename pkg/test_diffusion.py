"""
Tests for the forward degradation and the reverse samplers
"""
import numpy as np
import pytest

from conftest import random_spectro
from models import ReverseMode
from services.diffusion import (
    FunctionPredictor, as_delta_predictor, forward_mix, oracle_predictor, reverse_sample, zero_predictor,
)
from services.errors import ConfigurationError, NumericalInstabilityError
from services.schedule import make_schedule


def test_forward_endpoints_and_midpoint():
    x0, y = random_spectro(1), random_spectro(2)
    s = make_schedule(16)
    np.testing.assert_array_equal(forward_mix(x0, y, s, 0).data, x0.data)
    np.testing.assert_array_equal(forward_mix(x0, y, s, 16).data, y.data)
    np.testing.assert_allclose(forward_mix(x0, y, s, 8).data, 0.5 * (x0.data + y.data), atol=1e-15)


def test_forward_rejects_bad_input():
    s = make_schedule(4)
    with pytest.raises(ConfigurationError):
        forward_mix(random_spectro(1), random_spectro(2, frames=6), s, 1)
    with pytest.raises(ConfigurationError):
        forward_mix(random_spectro(1), random_spectro(2), s, 5)


@pytest.mark.parametrize("mode", [ReverseMode.DIRECT, ReverseMode.DELTA])
@pytest.mark.parametrize("steps", [1, 2, 4, 16])
def test_oracle_recovers_clean(mode, steps):
    s = make_schedule(steps)
    for seed in range(50):
        x0, y = random_spectro(2 * seed), random_spectro(2 * seed + 1)
        est = reverse_sample(y, oracle_predictor(x0, y, s, mode), s, mode)
        scale = max(np.max(np.abs(x0.data)), np.max(np.abs(y.data)))
        assert np.max(np.abs(est.data - x0.data)) <= 1e-9 * scale


def test_zero_delta_predictor_is_identity():
    y = random_spectro(3)
    s = make_schedule(16)
    est = reverse_sample(y, zero_predictor(), s, ReverseMode.DELTA)
    np.testing.assert_array_equal(est.data, y.data)


def test_direct_and_delta_views_agree():
    s = make_schedule(8)
    y = random_spectro(4)
    direct = FunctionPredictor(lambda data, t: 0.9 * data + 0.01 * t)
    a = reverse_sample(y, direct, s, ReverseMode.DIRECT)
    b = reverse_sample(y, as_delta_predictor(direct, s), s, ReverseMode.DELTA)
    np.testing.assert_allclose(b.data, a.data, rtol=1e-12, atol=1e-12)


def test_trajectory_endpoints():
    s = make_schedule(4)
    x0, y = random_spectro(5), random_spectro(6)
    est, traj = reverse_sample(y, oracle_predictor(x0, y, s, ReverseMode.DELTA), s, ReverseMode.DELTA,
                               return_trajectory=True)
    assert len(traj) == 5
    np.testing.assert_array_equal(traj[4].data, y.data)
    np.testing.assert_array_equal(traj[0].data, est.data)
    np.testing.assert_allclose(traj[2].data, forward_mix(x0, y, s, 2).data, atol=1e-12)


def test_non_finite_output_names_the_step():
    s = make_schedule(4)
    bad = FunctionPredictor(lambda data, t: np.full_like(data, np.nan) if t == 3 else np.zeros_like(data))
    with pytest.raises(NumericalInstabilityError) as info:
        reverse_sample(random_spectro(7), bad, s, ReverseMode.DELTA)
    assert info.value.step == 3


def test_wrong_output_shape():
    s = make_schedule(2)
    bad = FunctionPredictor(lambda data, t: data[:, :, :-1])
    with pytest.raises(ConfigurationError):
        reverse_sample(random_spectro(8), bad, s, ReverseMode.DIRECT)
