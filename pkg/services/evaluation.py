"""
Per-example metric rows, batch evaluation over a manifest and report writers
"""
import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from models import (
    METRIC_NAMES, Manifest, MetricAggregate, MetricConfig, MetricFailure, MetricReport, MetricRow,
    PairedExample, Waveform,
)
from services import metrics
from services.audio_io import read_waveform, write_json, write_text
from services.errors import AudioDataError
from services.onsets import detect_onsets

logger = logging.getLogger(__name__)


def evaluate_all(est: Waveform, ref: Waveform, reverberant: Waveform, cfg: MetricConfig,
                 example_id: str = "") -> MetricRow:
    """
    All metrics for one (estimate, reference, reverberant) triple

    Raises:
        AudioDataError: Mismatched lengths or rates, silent reference, no reference onsets
    """
    if not (est.samples.shape == ref.samples.shape == reverberant.samples.shape):
        raise AudioDataError(
            f"Length mismatch: estimate {est.samples.shape}, reference {ref.samples.shape}, "
            f"reverberant {reverberant.samples.shape}"
        )
    if not (est.sample_rate == ref.sample_rate == reverberant.sample_rate):
        raise AudioDataError("Sample-rate mismatch between estimate, reference and reverberant input")
    onsets = detect_onsets(ref, cfg)
    return MetricRow(
        example_id=example_id,
        mstft_mag=metrics.mstft_mag_mae(est, ref, cfg),
        mstft_phase=metrics.mstft_phase_mae(est, ref, cfg),
        esr=metrics.esr(est, ref, cfg.eps),
        si_sdr=metrics.si_sdr(est, ref, cfg.eps, cfg.si_sdr_cap_db),
        si_sdri=metrics.si_sdri(est, ref, reverberant, cfg.eps, cfg.si_sdr_cap_db),
        nmi=metrics.nmi(est, ref, cfg),
        msd=metrics.msd(est, ref, cfg),
        env=metrics.env_corr(est, ref, cfg),
        tter=metrics.tter_dev(est, ref, cfg, onsets=onsets),
        onfi=metrics.onset_f_improvement(est, reverberant, ref, cfg, onsets=onsets),
    )


def aggregate(rows: List[MetricRow]) -> Dict[str, MetricAggregate]:
    """Mean and population standard deviation of every metric"""
    if not rows:
        return {}
    out = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(r, name) for r in rows], dtype=np.float64)
        out[name] = MetricAggregate(mean=float(np.mean(values)), std=float(np.std(values)))
    return out


def _evaluate_entry(entry: PairedExample, base_dir: Path, estimates_dir: Path, cfg: MetricConfig,
                    sample_rate: int) -> Union[MetricRow, MetricFailure]:
    try:
        ref = read_waveform(base_dir / entry.dry_path, expected_rate=sample_rate)
        wet = read_waveform(base_dir / entry.wet_path, expected_rate=sample_rate)
        est = read_waveform(estimates_dir / f"{entry.id}.wav", expected_rate=sample_rate)
        return evaluate_all(est, ref, wet, cfg, example_id=entry.id)
    except (AudioDataError, ValueError) as e:
        logger.warning(f"Evaluation failed for {entry.id}: {e}")
        return MetricFailure(example_id=entry.id, error=str(e))


def evaluate_batch(manifest: Manifest, estimates_dir: Union[str, Path], cfg: MetricConfig,
                   jobs: int = 1, sample_rate: Optional[int] = None) -> MetricReport:
    """
    Evaluate every manifest entry against estimates_dir/<id>.wav

    Failed examples are listed in the report, never dropped silently.
    Rows keep manifest order whatever the number of jobs.
    """
    estimates_dir = Path(estimates_dir)
    if not estimates_dir.is_dir():
        raise AudioDataError(f"Estimates directory not found: {estimates_dir}")
    base_dir = manifest.base_dir or Path(".")
    rate = sample_rate or manifest.header.config.get("stft", {}).get("sample_rate", 44100)

    def run(entry: PairedExample):
        return _evaluate_entry(entry, base_dir, estimates_dir, cfg, rate)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, manifest.entries))
    else:
        results = [run(e) for e in manifest.entries]

    rows = [r for r in results if isinstance(r, MetricRow)]
    failures = [r for r in results if isinstance(r, MetricFailure)]
    logger.info(f"Evaluated {len(rows)} examples, {len(failures)} failed")
    return MetricReport(rows=rows, aggregates=aggregate(rows), failures=failures,
                        skipped=len(failures), config=cfg)


def report_csv(report: MetricReport) -> str:
    """One row per example, one column per metric"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["example_id", *METRIC_NAMES])
    for row in report.rows:
        writer.writerow([row.example_id, *(repr(float(getattr(row, name))) for name in METRIC_NAMES)])
    return buf.getvalue()


def write_report(report: MetricReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write metrics.csv and metrics.json into out_dir"""
    out_dir = Path(out_dir)
    csv_path = write_text(out_dir / "metrics.csv", report_csv(report))
    json_path = write_json(out_dir / "metrics.json", report.model_dump(mode="json"))
    logger.info(f"Wrote {csv_path} and {json_path}")
    return {"csv": csv_path, "json": json_path}
