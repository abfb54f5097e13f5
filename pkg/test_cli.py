"""
End-to-end tests of the command-line driver
"""
import csv
import json
import shutil

import numpy as np
import pytest

from cli import main
from models import ReverseMode
from services.audio_io import read_waveform
from services.checkpoint_storage import Checkpoint, save_checkpoint
from services.dataset import MANIFEST_NAME, read_manifest
from services.predictor import GainPredictor


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert main(["synth-corpus", "--out-dir", str(out), "--num-files", "3", "--seed", "1"]) == 0
    return out


@pytest.fixture
def identity_set(corpus, tmp_path):
    out = tmp_path / "identity"
    assert main(["render", "--dry-dir", str(corpus), "--out-dir", str(out), "--identity-rir", "--seed", "0"]) == 0
    return out


def zero_delta_checkpoint(path, steps=16):
    p = GainPredictor.initial(steps, 513, ReverseMode.DELTA)
    return save_checkpoint(path, Checkpoint(trained=p, ema=p.copy(), metadata={}))


def test_synth_corpus_writes_files(corpus):
    assert sorted(p.name for p in corpus.glob("*.wav")) == ["clicks_0000.wav", "clicks_0001.wav", "clicks_0002.wav"]
    assert (corpus / "resolved_config.json").is_file()


def test_render_identity_dataset(identity_set):
    m = read_manifest(identity_set / MANIFEST_NAME)
    assert len(m.entries) == 3
    assert all(e.rir_ref.kind == "identity" for e in m.entries)
    resolved = json.loads((identity_set / "resolved_config.json").read_text())
    assert resolved["seed"] == 0


def test_render_is_byte_identical_across_runs(corpus, tmp_path):
    args = ["--dry-dir", str(corpus), "--synthetic-rirs", "2", "--seed", "4",
            "--set", "rooms.t60_min=0.2", "--set", "rooms.t60_max=0.3"]
    assert main(["render", "--out-dir", str(tmp_path / "a"), *args]) == 0
    assert main(["render", "--out-dir", str(tmp_path / "b"), *args]) == 0
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()


def test_missing_dry_dir_is_a_data_error(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code = main(["render", "--dry-dir", str(missing), "--out-dir", str(tmp_path / "o"), "--identity-rir"])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_with_one(corpus, tmp_path):
    assert main(["render", "--dry-dir", str(corpus)]) == 1
    assert main(["render", "--dry-dir", str(corpus), "--out-dir", str(tmp_path / "o"), "--identity-rir",
                 "--set", "stft.bogus=3"]) == 1
    assert main(["train", "--manifest", "m.jsonl", "--out", "x.ckpt.json", "--mode", "sideways"]) == 1
    assert main(["--help"]) == 0


def test_train_reduces_loss_and_is_reproducible(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["synth-corpus", "--out-dir", str(corpus), "--num-files", "6", "--seed", "2"]) == 0
    data = tmp_path / "data"
    assert main(["render", "--dry-dir", str(corpus), "--out-dir", str(data), "--synthetic-rirs", "1",
                 "--set", "rooms.t60_min=0.2", "--set", "rooms.t60_max=0.3", "--seed", "2"]) == 0
    args = ["--manifest", str(data / MANIFEST_NAME), "--mode", "delta_normalized", "--steps", "2",
            "--epochs", "6", "--batch-size", "2", "--learning-rate", "0.01", "--seed", "0"]
    assert main(["train", "--out", str(tmp_path / "run1" / "model.ckpt.json"), *args]) == 0
    assert main(["train", "--out", str(tmp_path / "run2" / "model.ckpt.json"), *args]) == 0

    first = (tmp_path / "run1" / "model.ckpt.json").read_bytes()
    assert first == (tmp_path / "run2" / "model.ckpt.json").read_bytes()
    with open(tmp_path / "run1" / "model_training_log.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    assert float(rows[-1]["loss"]) < float(rows[0]["loss"])


def test_train_rejects_an_empty_manifest(tmp_path):
    empty = tmp_path / "manifest.jsonl"
    empty.write_text("")
    assert main(["train", "--manifest", str(empty), "--out", str(tmp_path / "m.ckpt.json")]) == 2


def test_oracle_dereverb_recovers_the_reference(identity_set, tmp_path):
    corpus_like = tmp_path / "reverb"
    assert main(["render", "--dry-dir", str(identity_set / "dry"), "--out-dir", str(corpus_like),
                 "--synthetic-rirs", "1", "--set", "rooms.t60_min=0.3", "--set", "rooms.t60_max=0.4"]) == 0
    entry = read_manifest(corpus_like / MANIFEST_NAME).entries[0]
    out = tmp_path / "est.wav"
    code = main(["dereverb", "--input", str(corpus_like / entry.wet_path), "--oracle",
                 "--reference", str(corpus_like / entry.dry_path), "--mode", "direct", "--out", str(out),
                 "--save-trajectory", "--steps", "4"])
    assert code == 0
    estimate = read_waveform(out).samples
    reference = read_waveform(corpus_like / entry.dry_path).samples
    assert np.max(np.abs(estimate - reference)) < 1e-6
    steps = sorted(p.name for p in (tmp_path / "est_trajectory").glob("*.wav"))
    assert steps == [f"step_{t:02d}.wav" for t in range(5)]
    wet = read_waveform(corpus_like / entry.wet_path).samples
    assert np.max(np.abs(read_waveform(tmp_path / "est_trajectory" / "step_04.wav").samples - wet)) < 1e-6


def test_zero_checkpoint_leaves_input_unchanged(identity_set, tmp_path):
    ckpt = zero_delta_checkpoint(tmp_path / "zero.ckpt.json")
    out_dir = tmp_path / "estimates"
    assert main(["dereverb", "--input", str(identity_set / "wet"), "--checkpoint", str(ckpt),
                 "--mode", "delta_normalized", "--out", str(out_dir)]) == 0
    for wet_file in sorted((identity_set / "wet").glob("*.wav")):
        original = read_waveform(wet_file).samples
        processed = read_waveform(out_dir / wet_file.name).samples
        assert np.max(np.abs(processed - original)) < 1e-6


def test_dereverb_mode_mismatch(identity_set, tmp_path):
    ckpt = zero_delta_checkpoint(tmp_path / "zero.ckpt.json")
    code = main(["dereverb", "--input", str(identity_set / "wet"), "--checkpoint", str(ckpt),
                 "--mode", "direct", "--out", str(tmp_path / "o")])
    assert code == 1
    assert main(["dereverb", "--input", str(identity_set / "wet"), "--out", str(tmp_path / "o")]) == 1


def test_evaluate_writes_reports(identity_set, tmp_path):
    estimates = tmp_path / "estimates"
    estimates.mkdir()
    for f in (identity_set / "dry").glob("*.wav"):
        shutil.copy(f, estimates / f.name)
    out = tmp_path / "report"
    assert main(["evaluate", "--manifest", str(identity_set / MANIFEST_NAME), "--estimates", str(estimates),
                 "--out", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert len(report["rows"]) == 3
    assert report["failures"] == []
    assert all(row["esr"] == 0.0 for row in report["rows"])
    assert (out / "metrics.csv").read_text().startswith("example_id,")


def test_json_progress_lines(tmp_path, capsys):
    assert main(["synth-corpus", "--out-dir", str(tmp_path / "c"), "--num-files", "1", "--json"]) == 0
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    assert lines
    for line in lines:
        assert "level" in json.loads(line)


@pytest.fixture
def reverberant_set(corpus, tmp_path):
    out = tmp_path / "reverberant"
    assert main(["render", "--dry-dir", str(corpus), "--out-dir", str(out), "--synthetic-rirs", "1",
                 "--set", "rooms.t60_min=0.3", "--set", "rooms.t60_max=0.4", "--seed", "3"]) == 0
    return out


def test_evaluate_reports_are_byte_identical_across_runs(reverberant_set, tmp_path):
    estimates = tmp_path / "estimates"
    estimates.mkdir()
    for f in (reverberant_set / "wet").glob("*.wav"):
        shutil.copy(f, estimates / f.name)
    args = ["evaluate", "--manifest", str(reverberant_set / MANIFEST_NAME), "--estimates", str(estimates)]
    assert main([*args, "--out", str(tmp_path / "serial")]) == 0
    assert main([*args, "--out", str(tmp_path / "parallel"), "--jobs", "2"]) == 0
    for name in ("metrics.csv", "metrics.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
    report = json.loads((tmp_path / "serial" / "metrics.json").read_text())
    assert len(report["rows"]) == 3


def test_dereverb_outputs_are_byte_identical_across_runs(reverberant_set, tmp_path):
    rng = np.random.default_rng(8)
    p = GainPredictor.initial(4, 513, ReverseMode.DELTA)
    p.params = {k: v + 0.05 * rng.standard_normal(v.shape) for k, v in p.params.items()}
    ckpt = save_checkpoint(tmp_path / "noisy.ckpt.json", Checkpoint(trained=p, ema=p.copy(), metadata={}))
    args = ["dereverb", "--input", str(reverberant_set / "wet"), "--checkpoint", str(ckpt),
            "--mode", "delta_normalized", "--steps", "4"]
    assert main([*args, "--out", str(tmp_path / "serial")]) == 0
    assert main([*args, "--out", str(tmp_path / "parallel"), "--jobs", "2"]) == 0
    names = sorted(f.name for f in (reverberant_set / "wet").glob("*.wav"))
    assert names
    for name in names:
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
