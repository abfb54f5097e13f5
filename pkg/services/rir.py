"""
Room impulse responses: shoebox image-source synthesis with pyroomacoustics,
measured RIR loading, Schroeder T60 measurement and wet rendering with energy control
"""
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pyroomacoustics as pra
from scipy import stats
from scipy.signal import fftconvolve

from models import RirProvenance, RirSample, RoomSampling, RoomSpec, SkippedFile, Waveform
from services.audio_io import read_audio, write_text
from services.errors import AudioDataError, ConfigurationError

logger = logging.getLogger(__name__)

# Taps below this fraction of the direct-path amplitude (-60 dB) are trimmed
TRIM_RATIO = 1e-3
# Schroeder fit range in dB
FIT_START_DB = -5.0
FIT_END_DB = -25.0
# Image order ceiling; order 100 reaches past the -25 dB point for every sampled room
MAX_IMAGE_ORDER = 100
# Absorption correction: passes, relative tolerance, and the order fraction used to measure
ABSORPTION_PASSES = 3
ABSORPTION_TOLERANCE = 0.02
ABSORPTION_ORDER_FRACTION = 0.75
MAX_ABSORPTION = 0.99


def inverse_sabine(dims: Tuple[float, float, float], t60: float,
                   speed_of_sound: float = 343.0) -> Tuple[float, int]:
    """
    Energy absorption and image order for a target T60 (pyroomacoustics' inverse Sabine)

    Raises:
        ConfigurationError: Absorption above 1 (room too small for the T60)
    """
    try:
        absorption, order = pra.inverse_sabine(t60, list(dims), c=speed_of_sound)
    except ValueError as e:
        raise ConfigurationError(f"Room {tuple(dims)} is too small for T60={t60} s: {e}") from e
    return float(absorption), int(order)


def _placement(spec: RoomSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Source and mic positions, displaced by up to jitter_m per axis for seeded variation"""
    source = np.asarray(spec.source_pos, dtype=np.float64)
    mic = np.asarray(spec.mic_pos, dtype=np.float64)
    if spec.jitter_m > 0:
        rng = np.random.default_rng(spec.seed)
        dims = np.asarray(spec.dims)
        margin = np.minimum(spec.jitter_m, dims / 4.0)
        source = np.clip(source + rng.uniform(-spec.jitter_m, spec.jitter_m, 3), margin, dims - margin)
        mic = np.clip(mic + rng.uniform(-spec.jitter_m, spec.jitter_m, 3), margin, dims - margin)
    return source, mic


def _shoebox_taps(spec: RoomSpec, source: np.ndarray, mic: np.ndarray, absorption: float,
                  max_order: int) -> np.ndarray:
    """Image-source RIR with the fractional-delay offset removed, so t=0 is emission"""
    room = pra.ShoeBox(
        list(spec.dims), fs=spec.sample_rate, materials=pra.Material(absorption), max_order=max_order,
        air_absorption=False, ray_tracing=False,
    )
    room.set_sound_speed(spec.speed_of_sound)
    room.add_source(list(source))
    room.add_microphone_array(np.c_[list(mic)])
    room.compute_rir()
    offset = pra.constants.get("frac_delay_length") // 2
    return np.asarray(room.rir[0][0], dtype=np.float64)[offset:]


def _decay_time(taps: np.ndarray, sample_rate: int) -> Optional[float]:
    """T20-based estimate from pyroomacoustics; None when the decay is too short"""
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            t60 = float(pra.experimental.measure_rt60(taps, fs=sample_rate, decay_db=20))
    except (ValueError, IndexError):
        return None
    return t60 if math.isfinite(t60) and t60 > 0 else None


def _trim(h: np.ndarray, direct_index: int) -> np.ndarray:
    floor = TRIM_RATIO * np.max(np.abs(h[max(direct_index - 1, 0):direct_index + 2]))
    above = np.nonzero(np.abs(h) >= floor)[0]
    last = max(int(above[-1]), direct_index) if above.size else direct_index
    return h[: last + 1]


def synth_rir(spec: RoomSpec) -> RirSample:
    """
    Shoebox image-source RIR with uniform, frequency-independent wall absorption

    The absorption starts from the inverse Sabine formula. A shoebox image lattice
    is not a diffuse field: late energy travels along the slow axes, so the
    Sabine value decays too slowly. Up to ABSORPTION_PASSES corrections rescale
    the per-reflection loss by the ratio of the pyroomacoustics T20 estimate to
    the target, measured on a lower-order room.

    Raises:
        ConfigurationError: Absorption above 1 (room too small for the T60)
    """
    absorption, sabine_order = inverse_sabine(spec.dims, spec.t60_target, spec.speed_of_sound)
    source, mic = _placement(spec)
    distance = float(np.linalg.norm(source - mic))
    direct_index = int(np.rint(distance / spec.speed_of_sound * spec.sample_rate))

    if spec.max_order == 0:
        h = np.zeros(direct_index + 1)
        h[direct_index] = 1.0 / (4.0 * math.pi * distance)
        return RirSample(taps=h, sample_rate=spec.sample_rate, provenance=RirProvenance(kind="synthetic", room=spec))

    order = spec.max_order if spec.max_order is not None else min(sabine_order, MAX_IMAGE_ORDER)
    short_order = max(1, int(math.ceil(ABSORPTION_ORDER_FRACTION * order)))
    for _ in range(ABSORPTION_PASSES):
        measured = _decay_time(_shoebox_taps(spec, source, mic, absorption, short_order), spec.sample_rate)
        if measured is None or abs(measured - spec.t60_target) <= ABSORPTION_TOLERANCE * spec.t60_target:
            break
        # Decay rate is proportional to -ln(1 - absorption) per reflection
        rate = -math.log1p(-absorption) * measured / spec.t60_target
        absorption = min(-math.expm1(-rate), MAX_ABSORPTION)

    h = _trim(_shoebox_taps(spec, source, mic, absorption, order), direct_index)
    logger.debug(f"Synthesized RIR: room={spec.dims}, t60={spec.t60_target}, taps={h.shape[0]}, "
                 f"absorption={absorption:.4f}, order={order}")
    return RirSample(taps=h, sample_rate=spec.sample_rate, provenance=RirProvenance(kind="synthetic", room=spec))


def identity_rir(sample_rate: int = 44100) -> RirSample:
    """Single unit tap"""
    return RirSample(taps=np.array([1.0]), sample_rate=sample_rate, provenance=RirProvenance(kind="identity"))


def load_rir(path: Union[str, Path], expected_rate: Optional[int] = None, keep_stereo: bool = False) -> RirSample:
    """
    Load a measured RIR from a WAV file

    Multichannel files are averaged to mono unless keep_stereo is set and the
    file has exactly two channels.

    Raises:
        AudioDataError: Unreadable file or sample-rate mismatch
    """
    path = Path(path)
    data, sample_rate = read_audio(path)
    if expected_rate is not None and sample_rate != expected_rate:
        raise AudioDataError(f"RIR {path} is {sample_rate} Hz, pipeline runs at {expected_rate} Hz")
    taps = data if (keep_stereo and data.shape[0] == 2) else np.mean(data, axis=0)
    try:
        return RirSample(taps=taps, sample_rate=sample_rate,
                         provenance=RirProvenance(kind="measured", file_id=path.stem, path=str(path)))
    except ValueError as e:
        raise AudioDataError(f"Invalid RIR in {path}: {e}") from e


def scan_rir_dir(rir_dir: Union[str, Path], expected_rate: Optional[int] = None,
                 index_path: Optional[Union[str, Path]] = None) -> Tuple[List[RirSample], List[SkippedFile]]:
    """
    Load every WAV in a directory as a measured RIR, in file-name order

    Args:
        rir_dir: Directory of measured RIRs
        expected_rate: Pipeline sample rate
        index_path: Where to write the JSON-lines file -> id index

    Returns:
        (loaded RIRs, skipped files with reasons)
    """
    rir_dir = Path(rir_dir)
    if not rir_dir.is_dir():
        raise AudioDataError(f"RIR directory not found: {rir_dir}")
    rirs: List[RirSample] = []
    skipped: List[SkippedFile] = []
    for path in sorted(rir_dir.glob("*.wav")):
        try:
            rirs.append(load_rir(path, expected_rate))
        except AudioDataError as e:
            logger.warning(f"Skipping RIR {path.name}: {e}")
            skipped.append(SkippedFile(path=path.name, reason=str(e)))
    if index_path is not None:
        lines = [json.dumps({"file": Path(r.provenance.path).name, "id": r.provenance.file_id}, sort_keys=True)
                 for r in rirs]
        write_text(index_path, "".join(line + "\n" for line in lines))
    logger.info(f"Loaded {len(rirs)} measured RIRs from {rir_dir} ({len(skipped)} skipped)")
    return rirs, skipped


def schroeder_curve(taps: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB relative to the total energy"""
    energy = np.asarray(taps, dtype=np.float64) ** 2
    if energy.ndim == 2:
        energy = energy.sum(axis=0)
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0:
        raise AudioDataError("Impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def measure_t60(r: RirSample) -> float:
    """
    Reverberation time from the -5 to -25 dB Schroeder slope, extrapolated to 60 dB

    Raises:
        AudioDataError: Less than 25 dB of decay available
    """
    taps = r.taps
    energy = taps ** 2 if taps.ndim == 1 else np.sum(taps ** 2, axis=0)
    nonzero = np.nonzero(energy)[0]
    if nonzero.size == 0:
        raise AudioDataError("Impulse response is all zeros")
    edc_db = schroeder_curve(taps[..., : nonzero[-1] + 1])
    start = np.nonzero(edc_db <= FIT_START_DB)[0]
    end = np.nonzero(edc_db <= FIT_END_DB)[0]
    if start.size == 0 or end.size == 0 or end[0] - start[0] < 2:
        raise AudioDataError("Insufficient decay range for a T60 estimate (need 25 dB)")
    i0, i1 = int(start[0]), int(end[0])
    t = np.arange(i0, i1 + 1) / r.sample_rate
    slope = stats.linregress(t, edc_db[i0:i1 + 1]).slope
    if not slope < 0:
        raise AudioDataError("Energy decay curve does not decrease")
    return float(-60.0 / slope)


def render_wet(dry: Waveform, r: RirSample, wet_gain_db: float = 0.0, peak_ceiling: Optional[float] = 0.99,
               match_rms: bool = True) -> Waveform:
    """
    Convolve a dry excerpt with an RIR, keeping its length, energy and a safe peak

    Args:
        dry: Stereo dry excerpt
        r: Mono RIR (applied to both channels) or stereo RIR (per channel)
        wet_gain_db: Output RMS relative to the dry RMS
        peak_ceiling: Maximum absolute sample value; None disables the limit
        match_rms: Rescale the output RMS to the dry RMS times the wet gain

    Raises:
        AudioDataError: Silent dry input, or a wet signal with no energy
        ConfigurationError: Ceiling outside (0, 1] or sample-rate mismatch
    """
    if peak_ceiling is not None and not 0.0 < peak_ceiling <= 1.0:
        raise ConfigurationError(f"peak_ceiling must lie in (0, 1], got {peak_ceiling}")
    if r.sample_rate != dry.sample_rate:
        raise ConfigurationError(f"RIR is {r.sample_rate} Hz, dry signal is {dry.sample_rate} Hz")
    x = np.asarray(dry.samples, dtype=np.float64)
    dry_rms = float(np.sqrt(np.mean(x ** 2)))
    if dry_rms == 0.0:
        raise AudioDataError("Dry input is silent")
    n = x.shape[1]
    taps = r.taps if r.is_stereo else np.stack([r.taps, r.taps])
    wet = np.stack([fftconvolve(x[c], taps[c])[:n] for c in range(2)])

    if match_rms:
        wet_rms = float(np.sqrt(np.mean(wet ** 2)))
        if wet_rms == 0.0:
            raise AudioDataError("Rendered wet signal is silent (RIR delay longer than the excerpt?)")
        wet *= dry_rms * 10.0 ** (wet_gain_db / 20.0) / wet_rms
    if peak_ceiling is not None:
        peak = float(np.max(np.abs(wet)))
        if peak > peak_ceiling:
            wet *= peak_ceiling / peak
    return Waveform(samples=wet, sample_rate=dry.sample_rate)


def sample_room_spec(sampling: RoomSampling, rng: np.random.Generator, sample_rate: int = 44100,
                     max_tries: int = 100) -> RoomSpec:
    """
    Draw a random feasible room from the configured ranges

    Raises:
        ConfigurationError: No feasible room found in max_tries draws
    """
    lo = np.asarray(sampling.dims_min)
    hi = np.asarray(sampling.dims_max)
    clear = sampling.wall_clearance
    for _ in range(max_tries):
        dims = rng.uniform(lo, hi)
        t60 = float(rng.uniform(sampling.t60_min, sampling.t60_max))
        source = rng.uniform(clear, dims - clear)
        mic = rng.uniform(clear, dims - clear)
        seed = int(rng.integers(0, 2 ** 31 - 1))
        if np.linalg.norm(source - mic) < sampling.min_source_mic_distance:
            continue
        try:
            inverse_sabine(tuple(dims), t60, sampling.speed_of_sound)
        except ConfigurationError:
            continue
        return RoomSpec(
            dims=tuple(float(v) for v in dims),
            source_pos=tuple(float(v) for v in source),
            mic_pos=tuple(float(v) for v in mic),
            t60_target=t60,
            max_order=sampling.max_order,
            sample_rate=sample_rate,
            seed=seed,
            jitter_m=sampling.jitter_m,
            speed_of_sound=sampling.speed_of_sound,
        )
    raise ConfigurationError(f"No feasible room found in {max_tries} draws; check the RoomSampling ranges")
