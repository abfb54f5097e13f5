#!/usr/bin/env python3
"""
Command-line driver: render, train, dereverb, evaluate and synth-corpus

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numerical failure.
"""
import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from models import EpochRecord, ReverseMode, RunConfig, Split
from services.audio_io import read_waveform, write_text, write_waveform
from services.checkpoint_storage import Checkpoint, load_checkpoint, save_checkpoint
from services.config import (
    configure_logging, get_settings, load_run_config, update_config, write_resolved_config,
)
from services.dataset import build_dataset, generate_click_corpus, load_training_pairs, read_manifest
from services.errors import AudioDataError, ConfigurationError, DereverbError
from services.evaluation import evaluate_batch, write_report
from services.inference import dereverb_waveform
from services.predictor import GainPredictor, train
from services.rir import identity_rir, sample_room_spec, scan_rir_dir, synth_rir
from services.schedule import make_schedule

logger = logging.getLogger("cli")


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting, so they map to exit code 1"""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _progress(event: str, **fields) -> dict:
    return {"progress": {"event": event, **fields}}


def _resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.set or [], settings=get_settings())
    return update_config(cfg, {
        "seed": args.seed,
        "jobs": args.jobs,
        "schedule.steps": getattr(args, "steps", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.learning_rate": getattr(args, "learning_rate", None),
        "render.n_synthetic_rirs": getattr(args, "synthetic_rirs", None),
    })


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_render(args, cfg: RunConfig) -> int:
    """Render a paired dry/wet dataset"""
    out_dir = Path(args.out_dir)
    dry_dir = Path(args.dry_dir)
    if not dry_dir.is_dir():
        raise AudioDataError(f"Dry directory not found: {dry_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    rate = cfg.stft.sample_rate

    pool = []
    skipped = []
    if args.identity_rir:
        pool.append(identity_rir(rate))
    else:
        if args.rir_dir:
            measured, skipped = scan_rir_dir(args.rir_dir, rate, index_path=out_dir / "rir_index.jsonl")
            pool.extend(measured)
        rng = np.random.default_rng([cfg.seed, 1])
        rooms = [sample_room_spec(cfg.rooms, rng, rate) for _ in range(cfg.render.n_synthetic_rirs)]
        with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
            pool.extend(executor.map(synth_rir, rooms))
        logger.info(f"RIR pool: {len(pool)} responses ({len(rooms)} synthetic)")
    if not pool:
        raise ConfigurationError("RIR pool is empty: pass --rir-dir, --identity-rir or set render.n_synthetic_rirs")

    manifest = build_dataset(dry_dir, pool, cfg, cfg.seed, out_dir, jobs=cfg.jobs, extra_skipped=skipped)
    logger.info(f"Manifest with {len(manifest.entries)} entries written to {out_dir}",
                extra=_progress("render_done", entries=len(manifest.entries)))
    return 0


def _training_log_csv(history: List[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "spec", "aud", "val_loss"])
    for r in history:
        writer.writerow([r.epoch, repr(r.loss), repr(r.spec), repr(r.aud),
                         "" if r.val_loss is None else repr(r.val_loss)])
    return buf.getvalue()


def cmd_train(args, cfg: RunConfig) -> int:
    """Train the reference predictor and write the checkpoint plus the training log"""
    mode = ReverseMode(args.mode) if args.mode else cfg.train.mode
    cfg = update_config(cfg, {"train.mode": mode.value})
    out = Path(args.out)
    out_dir = out.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    manifest = read_manifest(args.manifest)
    train_pairs = load_training_pairs(manifest.select(Split.TRAIN), cfg.stft)
    if not train_pairs:
        raise AudioDataError(f"Manifest {args.manifest} has no training entries")
    val_pairs = load_training_pairs(manifest.select(Split.VAL), cfg.stft) if args.validate else []

    schedule = make_schedule(cfg.schedule.steps)
    seed = cfg.train.seed if cfg.train.seed is not None else cfg.seed
    initial = GainPredictor.initial(cfg.schedule.steps, cfg.stft.num_bins, mode, cfg.train.share_channels)

    def on_epoch(record: EpochRecord):
        logger.info(f"epoch {record.epoch} loss {record.loss:.6f}",
                    extra=_progress("epoch", **record.model_dump()))

    trained, ema, history = train(initial, train_pairs, schedule, cfg.loss, cfg.stft, cfg.train,
                                  seed=seed, validation=val_pairs or None, on_epoch=on_epoch)
    metadata = {
        "seed": seed,
        "stft": cfg.stft.model_dump(mode="json"),
        "train": cfg.train.model_dump(mode="json"),
        "loss": cfg.loss.model_dump(mode="json"),
        "num_pairs": len(train_pairs),
    }
    save_checkpoint(out, Checkpoint(trained=trained, ema=ema, metadata=metadata))
    log_path = out_dir / f"{out.name.split('.')[0]}_training_log.csv"
    write_text(log_path, _training_log_csv(history))
    logger.info(f"Training log written to {log_path}", extra=_progress("train_done", epochs=len(history)))
    return 0


def _io_pairs(inp: Path, out: Path, ref: Optional[Path]):
    if inp.is_dir():
        files = sorted(inp.glob("*.wav"))
        if not files:
            raise AudioDataError(f"No WAV files in {inp}")
        if ref is not None and not ref.is_dir():
            raise ConfigurationError("--reference must be a directory when --input is a directory")
        return [(f, out / f.name, (ref / f.name) if ref is not None else None) for f in files], out
    if not inp.is_file():
        raise AudioDataError(f"Input not found: {inp}")
    target = out if out.suffix.lower() == ".wav" else out / inp.name
    return [(inp, target, ref)], target.parent


def cmd_dereverb(args, cfg: RunConfig) -> int:
    """Dereverberate a WAV file or a directory of WAV files"""
    mode = ReverseMode(args.mode) if args.mode else cfg.train.mode
    if args.oracle and args.reference is None:
        raise ConfigurationError("--oracle requires --reference")
    if args.checkpoint is None and not args.oracle:
        raise ConfigurationError("--checkpoint is required unless --oracle is set")

    schedule = make_schedule(cfg.schedule.steps)
    predictor = None
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint, expected_mode=mode)
        if ckpt.ema.num_bins != cfg.stft.num_bins:
            raise ConfigurationError(
                f"Checkpoint has {ckpt.ema.num_bins} bins, fft_size={cfg.stft.fft_size} gives {cfg.stft.num_bins}"
            )
        if ckpt.ema.num_steps != cfg.schedule.steps:
            logger.warning(f"Using the checkpoint's T={ckpt.ema.num_steps} instead of {cfg.schedule.steps}")
            schedule = make_schedule(ckpt.ema.num_steps)
        predictor = ckpt.ema

    reference = Path(args.reference) if args.reference else None
    pairs, out_dir = _io_pairs(Path(args.input), Path(args.out), reference if args.oracle else None)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    def run(item):
        src, dst, ref_path = item
        wet = read_waveform(src, expected_rate=cfg.stft.sample_rate)
        ref = read_waveform(ref_path, expected_rate=cfg.stft.sample_rate) if ref_path is not None else None
        result = dereverb_waveform(wet, predictor, schedule, mode, cfg.stft, reference=ref,
                                   return_trajectory=args.save_trajectory)
        if args.save_trajectory:
            estimate, trajectory = result
            traj_dir = dst.parent / f"{dst.stem}_trajectory"
            for t, state in enumerate(trajectory):
                write_waveform(traj_dir / f"step_{t:02d}.wav", state)
        else:
            estimate = result
        write_waveform(dst, estimate)
        logger.info(f"Wrote {dst}", extra=_progress("dereverb_file", file=str(dst)))
        return dst

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
            list(executor.map(run, pairs))
    else:
        for item in pairs:
            run(item)
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    """Score estimates against a manifest and write CSV and JSON reports"""
    split = Split(args.split) if args.split else None
    manifest = read_manifest(args.manifest, split=split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    report = evaluate_batch(manifest, args.estimates, cfg.metrics, jobs=cfg.jobs,
                            sample_rate=cfg.stft.sample_rate)
    write_report(report, out_dir)
    logger.info(f"{len(report.rows)} rows, {len(report.failures)} failures",
                extra=_progress("evaluate_done", rows=len(report.rows), failures=len(report.failures)))
    return 0


def cmd_synth_corpus(args, cfg: RunConfig) -> int:
    """Write a seeded corpus of stereo click patterns"""
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    generate_click_corpus(out_dir, args.num_files, cfg.seed, seconds=args.seconds,
                          sample_rate=cfg.stft.sample_rate, peak=cfg.render.dry_peak)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="Override a configuration value (repeatable)")
    common.add_argument("--seed", type=int, help="Global seed")
    common.add_argument("--jobs", type=int, help="Parallel workers for file-level work")
    common.add_argument("--json", action="store_true", help="JSON-lines progress on stderr")
    common.add_argument("--log-level", help="Logging level (default from DEREVERB_LOG_LEVEL or INFO)")

    parser = _Parser(prog="dereverb", description="Cold-diffusion dereverberation for stereo percussion")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("render", parents=[common], help="Render a paired dry/wet dataset")
    p.add_argument("--dry-dir", required=True, help="Directory of dry stereo WAV files")
    p.add_argument("--rir-dir", help="Directory of measured RIR WAV files")
    p.add_argument("--out-dir", required=True, help="Dataset output directory")
    p.add_argument("--synthetic-rirs", type=int, help="Number of synthetic RIRs in the pool")
    p.add_argument("--identity-rir", action="store_true", help="Use only the identity RIR (wet = dry)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", parents=[common], help="Train the reference predictor")
    p.add_argument("--manifest", required=True, help="Dataset manifest (JSON lines)")
    p.add_argument("--mode", choices=[m.value for m in ReverseMode], help="Reverse parameterization")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--steps", type=int, help="Diffusion steps T")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--validate", action="store_true", help="Score the val split after every epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dereverb", parents=[common], help="Dereverberate WAV files")
    p.add_argument("--input", required=True, help="WAV file or directory")
    p.add_argument("--checkpoint", help="Checkpoint path (EMA weights are used)")
    p.add_argument("--mode", choices=[m.value for m in ReverseMode], help="Reverse parameterization")
    p.add_argument("--out", required=True, help="Output WAV file or directory")
    p.add_argument("--steps", type=int, help="Diffusion steps T")
    p.add_argument("--oracle", action="store_true", help="Use the exact oracle predictor (needs --reference)")
    p.add_argument("--reference", help="Clean reference WAV file or directory for --oracle")
    p.add_argument("--save-trajectory", action="store_true", help="Also write the T+1 intermediate states")
    p.set_defaults(func=cmd_dereverb)

    p = sub.add_parser("evaluate", parents=[common], help="Compute the metric report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--estimates", required=True, help="Directory holding <id>.wav estimates")
    p.add_argument("--out", required=True, help="Report output directory")
    p.add_argument("--split", choices=[s.value for s in Split], help="Only evaluate one split")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth-corpus", parents=[common], help="Generate synthetic click patterns")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-files", type=int, default=10)
    p.add_argument("--seconds", type=float, default=2.0)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = get_settings()
        configure_logging(args.log_level or settings.log_level, args.json)
        cfg = _resolve_config(args)
        return args.func(args, cfg)
    except DereverbError as e:
        logger.error(str(e), extra=_progress("error", exit_code=e.exit_code))
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid data: {e}", extra=_progress("error", exit_code=2))
        return 2
    except OSError as e:
        logger.error(f"I/O error: {e}", extra=_progress("error", exit_code=2))
        return 2


if __name__ == "__main__":
    sys.exit(main())
