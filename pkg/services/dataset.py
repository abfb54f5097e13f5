"""
Paired dry/wet dataset rendering, manifest persistence and validation
"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from models import (
    Manifest, ManifestHeader, PairedExample, RirProvenance, RirSample, RunConfig, SkippedFile, Split,
    StftConfig, ValidationIssue, ValidationReport, Waveform,
)
from services.audio_io import read_audio, read_waveform, write_text, write_waveform
from services.errors import AudioDataError, ConfigurationError
from services.predictor import TrainingPair
from services.rir import identity_rir, load_rir, render_wet, synth_rir
from services.stft import segment_offsets, stft_forward

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


def _entry_seed(seed: int, file_index: int, segment_index: int) -> int:
    return int(np.random.SeedSequence([seed, file_index, segment_index]).generate_state(1)[0])


def _offset_seed(seed: int, file_index: int) -> int:
    return int(np.random.SeedSequence([seed, file_index]).generate_state(1)[0])


def assign_splits(num_sources: int, fractions: Tuple[float, float, float], seed: int) -> List[Split]:
    """
    Split by source file: floor(n * val) and floor(n * test) files, the rest train

    Returns the split of each source index.
    """
    rng = np.random.default_rng([seed, num_sources])
    order = rng.permutation(num_sources)
    n_val = int(np.floor(num_sources * fractions[1]))
    n_test = int(np.floor(num_sources * fractions[2]))
    splits = [Split.TRAIN] * num_sources
    for i in order[:n_test]:
        splits[int(i)] = Split.TEST
    for i in order[n_test:n_test + n_val]:
        splits[int(i)] = Split.VAL
    return splits


def normalize_peak(samples: np.ndarray, peak: float) -> Optional[np.ndarray]:
    """Scale to the given peak and quantize to float32 precision; None for silence"""
    current = float(np.max(np.abs(samples)))
    if current == 0.0:
        return None
    return (samples * (peak / current)).astype(np.float32).astype(np.float64)


def _relative(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path, base)).as_posix()


def rir_reference(r: RirSample, out_dir: Path) -> RirProvenance:
    """Provenance with measured paths made relative to the manifest directory"""
    prov = r.provenance
    if prov.kind == "measured" and prov.path is not None:
        return prov.model_copy(update={"path": _relative(Path(prov.path).resolve(), out_dir.resolve())})
    return prov


def resolve_rir(ref: RirProvenance, base_dir: Path, sample_rate: int) -> RirSample:
    """Rebuild the RIR a manifest entry was rendered with"""
    if ref.kind == "identity":
        return identity_rir(sample_rate)
    if ref.kind == "synthetic":
        if ref.room is None:
            raise AudioDataError("Synthetic RIR reference carries no room")
        return synth_rir(ref.room)
    if ref.path is None:
        raise AudioDataError(f"Measured RIR {ref.file_id} has no path")
    return load_rir(base_dir / ref.path, expected_rate=sample_rate)


@dataclass
class _Job:
    entry: PairedExample
    dry: np.ndarray
    sample_rate: int
    rir: RirSample


def _render_job(job: _Job, out_dir: Path, peak_ceiling: float) -> PairedExample:
    dry = Waveform(samples=job.dry, sample_rate=job.sample_rate)
    wet = render_wet(dry, job.rir, job.entry.wet_gain_db, peak_ceiling)
    write_waveform(out_dir / job.entry.dry_path, dry)
    write_waveform(out_dir / job.entry.wet_path, wet)
    return job.entry


def build_dataset(dry_dir: Union[str, Path], rir_pool: Sequence[RirSample], cfg: RunConfig, seed: int,
                  out_dir: Union[str, Path], jobs: int = 1,
                  extra_skipped: Sequence[SkippedFile] = ()) -> Manifest:
    """
    Segment every dry file, render each excerpt through a seeded RIR draw and write the dataset

    Writes dry/<id>.wav, wet/<id>.wav and manifest.jsonl into out_dir.
    Unreadable or too-short inputs are skipped with a warning and listed in
    the manifest header.

    Raises:
        AudioDataError: Missing dry_dir or no usable input
        ConfigurationError: Empty RIR pool
    """
    dry_dir = Path(dry_dir)
    out_dir = Path(out_dir)
    if not dry_dir.is_dir():
        raise AudioDataError(f"Dry directory not found: {dry_dir}")
    if not rir_pool:
        raise ConfigurationError("RIR pool is empty")
    stft_cfg = cfg.stft
    render = cfg.render

    sources: List[Tuple[Path, Waveform]] = []
    skipped: List[SkippedFile] = list(extra_skipped)
    for path in sorted(dry_dir.glob("*.wav")):
        try:
            w = read_waveform(path, expected_rate=stft_cfg.sample_rate)
            segment_offsets(w.num_samples, stft_cfg)
            sources.append((path, w))
        except AudioDataError as e:
            logger.warning(f"Skipping {path.name}: {e}")
            skipped.append(SkippedFile(path=path.name, reason=str(e)))
    if not sources:
        raise AudioDataError(f"No usable dry WAV files in {dry_dir}")

    splits = assign_splits(len(sources), render.split_fractions, seed)
    seg = stft_cfg.segment_samples
    jobs_list: List[_Job] = []
    for fi, (path, w) in enumerate(sources):
        offsets = segment_offsets(w.num_samples, stft_cfg, mode=render.segment_mode,
                                  seed=_offset_seed(seed, fi))
        for si, offset in enumerate(offsets):
            excerpt = normalize_peak(w.samples[:, offset:offset + seg], render.dry_peak)
            example_id = f"{path.stem}_s{si:03d}"
            if excerpt is None:
                logger.warning(f"Skipping silent excerpt {example_id}")
                skipped.append(SkippedFile(path=f"{path.name}#{si}", reason="silent excerpt"))
                continue
            entry_seed = _entry_seed(seed, fi, si)
            rng = np.random.default_rng(entry_seed)
            rir = rir_pool[int(rng.integers(0, len(rir_pool)))]
            gain = float(rng.uniform(render.wet_gain_db_min, render.wet_gain_db_max))
            entry = PairedExample(
                id=example_id,
                source_file=path.name,
                split=splits[fi],
                dry_path=f"dry/{example_id}.wav",
                wet_path=f"wet/{example_id}.wav",
                rir_ref=rir_reference(rir, out_dir),
                segment_index=si,
                segment_offset=offset,
                wet_gain_db=gain,
                seed=entry_seed,
            )
            jobs_list.append(_Job(entry=entry, dry=excerpt, sample_rate=w.sample_rate, rir=rir))

    if not jobs_list:
        raise AudioDataError("Every excerpt was silent; nothing to render")

    def run(job: _Job) -> PairedExample:
        return _render_job(job, out_dir, render.peak_ceiling)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(run, jobs_list))
    else:
        entries = [run(job) for job in jobs_list]

    header = ManifestHeader(seed=seed, num_sources=len(sources), skipped=skipped,
                            config=cfg.model_dump(mode="json"))
    manifest = Manifest(header=header, entries=entries, base_dir=out_dir)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(f"Rendered {len(entries)} pairs from {len(sources)} files into {out_dir} ({len(skipped)} skipped)")
    return manifest


def manifest_lines(manifest: Manifest) -> str:
    lines = [json.dumps(manifest.header.model_dump(mode="json"), sort_keys=True)]
    lines.extend(json.dumps(e.model_dump(mode="json"), sort_keys=True) for e in manifest.entries)
    return "".join(line + "\n" for line in lines)


def write_manifest(manifest: Manifest, path: Union[str, Path]) -> Path:
    """Header line, then one entry per line; sorted keys, relative paths"""
    return write_text(path, manifest_lines(manifest))


def read_manifest(path: Union[str, Path], split: Optional[Split] = None) -> Manifest:
    """
    Parse a JSON-lines manifest, optionally keeping one split

    Raises:
        AudioDataError: Missing file or malformed lines
    """
    path = Path(path)
    if not path.is_file():
        raise AudioDataError(f"Manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise AudioDataError(f"Manifest {path} is empty")
    try:
        header = ManifestHeader.model_validate(json.loads(lines[0]))
        entries = [PairedExample.model_validate(json.loads(line)) for line in lines[1:]]
    except (json.JSONDecodeError, ValueError) as e:
        raise AudioDataError(f"Malformed manifest {path}: {e}") from e
    return Manifest(header=header, entries=entries, base_dir=path.parent).select(split)


def validate_manifest(m: Manifest) -> ValidationReport:
    """Check file presence, pair lengths and rates, unique ids and split disjointness"""
    base = m.base_dir or Path(".")
    rate = m.header.config.get("stft", {}).get("sample_rate")
    issues: List[ValidationIssue] = []
    seen: Set[str] = set()
    source_splits: Dict[str, Set[str]] = {}

    for e in m.entries:
        if e.id in seen:
            issues.append(ValidationIssue(entry_id=e.id, message="duplicate example id"))
        seen.add(e.id)
        source_splits.setdefault(e.source_file, set()).add(e.split.value)
        shapes = {}
        for label, rel in (("dry", e.dry_path), ("wet", e.wet_path)):
            try:
                data, sr = read_audio(base / rel)
            except AudioDataError as err:
                issues.append(ValidationIssue(entry_id=e.id, message=f"{label} file: {err}"))
                continue
            if data.shape[0] != 2:
                issues.append(ValidationIssue(entry_id=e.id, message=f"{label} file is not stereo"))
            if rate is not None and sr != rate:
                issues.append(ValidationIssue(entry_id=e.id, message=f"{label} file is {sr} Hz, expected {rate} Hz"))
            shapes[label] = (data.shape[1], sr)
        if len(shapes) == 2 and shapes["dry"] != shapes["wet"]:
            issues.append(ValidationIssue(
                entry_id=e.id,
                message=f"dry/wet mismatch: {shapes['dry']} vs {shapes['wet']} (samples, Hz)",
            ))

    for source, splits in sorted(source_splits.items()):
        if len(splits) > 1:
            issues.append(ValidationIssue(message=f"leakage: source {source} appears in splits {sorted(splits)}"))

    return ValidationReport(passed=not issues, checked=len(m.entries), issues=issues)


def reproduce_wet(entry: PairedExample, manifest: Manifest) -> Waveform:
    """Re-render an entry's wet signal from its dry file, RIR reference and gain"""
    base = manifest.base_dir or Path(".")
    cfg = RunConfig.model_validate(manifest.header.config)
    dry = read_waveform(base / entry.dry_path, expected_rate=cfg.stft.sample_rate)
    rir = resolve_rir(entry.rir_ref, base, cfg.stft.sample_rate)
    wet = render_wet(dry, rir, entry.wet_gain_db, cfg.render.peak_ceiling)
    return Waveform(samples=wet.samples.astype(np.float32).astype(np.float64), sample_rate=wet.sample_rate)


def load_training_pairs(m: Manifest, cfg: StftConfig) -> List[TrainingPair]:
    """Spectrograms of every (dry, wet) pair in the manifest, in manifest order"""
    base = m.base_dir or Path(".")
    pairs = []
    for e in m.entries:
        dry = read_waveform(base / e.dry_path, expected_rate=cfg.sample_rate)
        wet = read_waveform(base / e.wet_path, expected_rate=cfg.sample_rate)
        if dry.num_samples != wet.num_samples:
            raise AudioDataError(f"Entry {e.id}: dry and wet lengths differ")
        pairs.append(TrainingPair(
            example_id=e.id,
            x0=stft_forward(dry, cfg).data,
            y=stft_forward(wet, cfg).data,
            out_len=dry.num_samples,
        ))
    return pairs


def generate_click_corpus(out_dir: Union[str, Path], num_files: int, seed: int, seconds: float = 2.0,
                          sample_rate: int = 44100, peak: float = 0.891) -> List[Path]:
    """
    Write seeded stereo click patterns with exponentially decaying noise bursts

    Hits are at least 80 ms apart, stay clear of the last 250 ms, and each has
    its own amplitude, decay time and stereo pan.
    """
    if num_files < 1:
        raise ConfigurationError(f"num_files must be positive, got {num_files}")
    out_dir = Path(out_dir)
    n = int(round(seconds * sample_rate))
    last = n - int(0.25 * sample_rate)
    if last <= 0:
        raise ConfigurationError(f"{seconds} s is too short for a click pattern")
    gap = int(0.08 * sample_rate)
    paths = []
    for i in range(num_files):
        rng = np.random.default_rng([seed, i])
        x = np.zeros((2, n))
        count = int(rng.integers(3, 9))
        starts = np.sort(rng.choice(np.arange(0, last, gap), size=min(count, last // gap), replace=False))
        for start in starts:
            decay = float(rng.uniform(0.004, 0.03))
            length = min(int(8 * decay * sample_rate), n - int(start))
            t = np.arange(length) / sample_rate
            burst = rng.standard_normal(length) * np.exp(-t / decay) * float(rng.uniform(0.3, 1.0))
            pan = float(rng.uniform(0.2, 0.8))
            x[0, start:start + length] += np.sqrt(1.0 - pan) * burst
            x[1, start:start + length] += np.sqrt(pan) * burst
        x *= peak / np.max(np.abs(x))
        path = write_waveform(out_dir / f"clicks_{i:04d}.wav", Waveform(samples=x, sample_rate=sample_rate))
        paths.append(path)
    logger.info(f"Generated {num_files} click patterns in {out_dir}")
    return paths
