"""
Tests for spectral-flux onset detection and onset F-measure
"""
import random

import numpy as np
import pytest

from models import MetricConfig, Waveform
from services.onsets import detect_onsets, match_onsets, onset_f_measure, onset_strength

CFG = MetricConfig()
FRAME = 384 / 44100


def impulses(times, seconds=2.0):
    x = np.zeros((2, int(seconds * 44100)))
    for t in times:
        x[:, int(round(t * 44100))] = 1.0
    return Waveform(samples=x)


def test_impulse_train_is_found():
    clicks = [0.125 + 0.25 * i for i in range(8)]
    found = detect_onsets(impulses(clicks), CFG)
    assert len(found) == 8
    for est, ref in zip(found, clicks):
        assert abs(est - ref) <= FRAME


def test_single_click():
    found = detect_onsets(impulses([1.0]), CFG)
    assert len(found) == 1
    assert abs(found[0] - 1.0) <= FRAME


def test_silence_has_no_onsets():
    silent = Waveform(samples=np.zeros((2, 44100)))
    assert detect_onsets(silent, CFG) == []
    assert np.all(onset_strength(silent, CFG) == 0.0)


def test_f_measure_with_spurious_detections():
    ref = [0.2, 0.6, 1.0, 1.4]
    est = ref + [t + 0.2 for t in ref]
    assert onset_f_measure(est, ref, 0.05) == pytest.approx(2.0 / 3.0)
    assert onset_f_measure(ref, ref, 0.05) == 1.0
    assert onset_f_measure([], [], 0.05) == 1.0
    assert onset_f_measure([], ref, 0.05) == 0.0


def test_matching_is_one_to_one_and_order_free():
    ref = [0.5, 0.52]
    assert match_onsets([0.51], ref, 0.05) == 1
    est = [0.21, 0.58, 1.03, 1.37, 0.9]
    shuffled = est[:]
    random.Random(0).shuffle(shuffled)
    assert onset_f_measure(shuffled, [0.2, 0.6, 1.0, 1.4], 0.05) == onset_f_measure(est, [0.2, 0.6, 1.0, 1.4], 0.05)
