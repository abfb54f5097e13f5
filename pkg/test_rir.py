"""
Tests for RIR synthesis, loading, T60 measurement and wet rendering
"""
import json
import math

import numpy as np
import pytest
import soundfile as sf

from conftest import noise_waveform
from models import RirProvenance, RirSample, RoomSampling, RoomSpec, Waveform
from services.errors import AudioDataError, ConfigurationError
from services.rir import (
    _shoebox_taps, identity_rir, inverse_sabine, load_rir, measure_t60, render_wet, sample_room_spec, scan_rir_dir,
    schroeder_curve, synth_rir,
)

ROOM = RoomSpec(dims=(6.0, 4.5, 3.0), source_pos=(1.5, 2.0, 1.4), mic_pos=(4.2, 2.6, 1.6), t60_target=0.5)


def decaying_noise_rir(t60: float, seconds: float, seed: int = 0, sample_rate: int = 44100) -> RirSample:
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    taps = rng.standard_normal(t.size) * 10.0 ** (-3.0 * t / t60)
    return RirSample(taps=taps, sample_rate=sample_rate, provenance=RirProvenance(kind="measured"))


def test_direct_path_delay():
    rir = synth_rir(ROOM)
    expected = round(ROOM.distance / 343.0 * 44100)
    # First reflection arrives more than 50 samples after the direct path
    peak = int(np.argmax(np.abs(rir.taps[: expected + 20])))
    assert abs(peak - expected) <= 1
    assert rir.provenance.kind == "synthetic"
    assert rir.provenance.room == ROOM


def test_zero_order_is_a_single_tap():
    rir = synth_rir(ROOM.model_copy(update={"max_order": 0}))
    nonzero = np.nonzero(rir.taps)[0]
    assert nonzero.size == 1
    assert rir.taps[nonzero[0]] == pytest.approx(1.0 / (4.0 * math.pi * ROOM.distance))


@pytest.mark.parametrize("t60", [0.3, 0.6, 1.0])
def test_measured_t60_close_to_target(t60):
    rir = synth_rir(ROOM.model_copy(update={"t60_target": t60}))
    assert abs(measure_t60(rir) - t60) <= 0.2 * t60


def test_sampled_rooms_hit_their_t60():
    rng = np.random.default_rng(4)
    sampling = RoomSampling(t60_min=0.2, t60_max=1.3)
    errors = []
    for _ in range(20):
        spec = sample_room_spec(sampling, rng, sample_rate=16000)
        rir = synth_rir(spec)
        errors.append(abs(measure_t60(rir) - spec.t60_target) / spec.t60_target)
    assert max(errors) <= 0.2, errors


def test_sabine_start_alone_decays_too_slowly_in_a_long_room():
    long_room = RoomSpec(dims=(10.0, 3.0, 2.5), source_pos=(1.0, 1.5, 1.2), mic_pos=(8.5, 1.2, 1.4),
                         t60_target=0.6, sample_rate=16000)
    absorption, order = inverse_sabine(long_room.dims, long_room.t60_target)
    taps = _shoebox_taps(long_room, np.asarray(long_room.source_pos), np.asarray(long_room.mic_pos),
                         absorption, min(order, 100))
    plain = RirSample(taps=taps, sample_rate=16000, provenance=RirProvenance(kind="synthetic"))
    corrected = synth_rir(long_room)
    assert measure_t60(plain) >= measure_t60(corrected)
    assert abs(measure_t60(corrected) - 0.6) <= 0.2 * 0.6


def test_infeasible_room_is_rejected():
    spec = RoomSpec(dims=(10.0, 10.0, 10.0), source_pos=(2.0, 2.0, 2.0), mic_pos=(6.0, 6.0, 6.0), t60_target=0.1)
    with pytest.raises(ConfigurationError):
        synth_rir(spec)


def test_jitter_is_seeded():
    spec = ROOM.model_copy(update={"jitter_m": 0.05, "t60_target": 0.3})
    a = synth_rir(spec)
    b = synth_rir(spec)
    c = synth_rir(spec.model_copy(update={"seed": 9}))
    np.testing.assert_array_equal(a.taps, b.taps)
    assert a.taps.shape != c.taps.shape or not np.array_equal(a.taps, c.taps)


def test_t60_of_exponential_noise():
    assert measure_t60(decaying_noise_rir(0.5, 1.0)) == pytest.approx(0.5, rel=0.1)


def test_t60_is_scale_invariant():
    r = decaying_noise_rir(0.4, 1.0, seed=2)
    scaled = r.model_copy(update={"taps": 7.5 * r.taps})
    assert measure_t60(scaled) == pytest.approx(measure_t60(r), rel=1e-9)


def test_t60_needs_decay_range():
    with pytest.raises(AudioDataError):
        measure_t60(identity_rir())


def test_schroeder_curve_is_non_increasing():
    curve = schroeder_curve(synth_rir(ROOM).taps)
    assert curve[0] == 0.0
    assert np.all(np.diff(curve) <= 1e-9)


def test_identity_rir_render_keeps_the_signal():
    dry = noise_waveform(seed=1)
    wet = render_wet(dry, identity_rir())
    np.testing.assert_allclose(wet.samples, dry.samples, atol=1e-9)


def test_delay_rir_shifts_the_signal():
    dry = noise_waveform(seed=2)
    taps = np.zeros(101)
    taps[100] = 1.0
    r = RirSample(taps=taps, provenance=RirProvenance(kind="measured"))
    wet = render_wet(dry, r, match_rms=False, peak_ceiling=None)
    np.testing.assert_allclose(wet.samples[:, 100:], dry.samples[:, :-100], atol=1e-12)
    assert np.all(np.abs(wet.samples[:, :100]) < 1e-12)


def test_render_matches_rms_and_gain():
    dry = noise_waveform(seed=3)
    rir = decaying_noise_rir(1.0, 1.0, seed=3)
    dry_rms = np.sqrt(np.mean(dry.samples ** 2))
    wet = render_wet(dry, rir)
    assert np.sqrt(np.mean(wet.samples ** 2)) == pytest.approx(dry_rms, rel=1e-6)
    louder = render_wet(dry, rir, wet_gain_db=-6.0)
    assert np.sqrt(np.mean(louder.samples ** 2)) == pytest.approx(dry_rms * 10 ** (-6 / 20), rel=1e-6)


def test_render_respects_peak_ceiling():
    dry = noise_waveform(seed=4, scale=0.5)
    wet = render_wet(dry, decaying_noise_rir(0.5, 0.5, seed=4), wet_gain_db=20.0)
    assert np.max(np.abs(wet.samples)) <= 0.99 + 1e-12


def test_render_is_linear_without_normalization():
    a, b = noise_waveform(seed=5), noise_waveform(seed=6)
    rir = decaying_noise_rir(0.3, 0.3, seed=5)
    both = render_wet(Waveform(samples=a.samples + 2.0 * b.samples), rir, match_rms=False, peak_ceiling=None)
    separate = (render_wet(a, rir, match_rms=False, peak_ceiling=None).samples
                + 2.0 * render_wet(b, rir, match_rms=False, peak_ceiling=None).samples)
    np.testing.assert_allclose(both.samples, separate, atol=1e-9)


def test_render_rejects_silence():
    with pytest.raises(AudioDataError):
        render_wet(Waveform(samples=np.zeros((2, 1000))), identity_rir())


def test_load_rir_variants(tmp_path):
    sf.write(tmp_path / "unit.wav", np.array([1.0, 0.0, 0.0], dtype=np.float32), 44100, subtype="FLOAT")
    np.testing.assert_array_equal(load_rir(tmp_path / "unit.wav").taps, [1.0, 0.0, 0.0])

    h = np.array([0.25, 0.125, -0.5])
    stereo = np.stack([2 * h, np.zeros(3)], axis=1).astype(np.float32)
    sf.write(tmp_path / "stereo.wav", stereo, 44100, subtype="FLOAT")
    np.testing.assert_array_equal(load_rir(tmp_path / "stereo.wav").taps, h)
    assert load_rir(tmp_path / "stereo.wav", keep_stereo=True).is_stereo

    sf.write(tmp_path / "hi.wav", np.array([1.0, 0.5], dtype=np.float32), 48000, subtype="FLOAT")
    with pytest.raises(AudioDataError):
        load_rir(tmp_path / "hi.wav", expected_rate=44100)


def test_scan_rir_dir_indexes_and_skips(tmp_path):
    rirs = tmp_path / "rirs"
    rirs.mkdir()
    sf.write(rirs / "b.wav", np.array([1.0, 0.5], dtype=np.float32), 44100, subtype="FLOAT")
    sf.write(rirs / "a.wav", np.array([0.5, 0.25], dtype=np.float32), 44100, subtype="FLOAT")
    (rirs / "c.wav").write_bytes(b"not audio")
    index = tmp_path / "rir_index.jsonl"
    loaded, skipped = scan_rir_dir(rirs, 44100, index_path=index)
    assert [r.provenance.file_id for r in loaded] == ["a", "b"]
    assert [s.path for s in skipped] == ["c.wav"]
    lines = [json.loads(line) for line in index.read_text().splitlines()]
    assert lines == [{"file": "a.wav", "id": "a"}, {"file": "b.wav", "id": "b"}]


def test_sampled_room_geometry():
    sampling = RoomSampling()
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = sample_room_spec(sampling, rng)
        for pos in (spec.source_pos, spec.mic_pos):
            for p, d in zip(pos, spec.dims):
                assert sampling.wall_clearance <= p <= d - sampling.wall_clearance
        assert spec.distance >= sampling.min_source_mic_distance
        assert sampling.t60_min <= spec.t60_target <= sampling.t60_max
