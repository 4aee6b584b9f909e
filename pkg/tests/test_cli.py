"""Command-line interface: exit codes, artifacts, and error reporting."""

import csv

import numpy as np
import pytest

from conftest import sinusoid_clip
from freqgen.audio_io import read_wav, write_wav
from freqgen.cli import main
from freqgen.training import load_checkpoint, load_features


@pytest.fixture()
def tone_wav(tmp_path):
    path = tmp_path / "tone.wav"
    clip = sinusoid_clip(16000, 3200, [500.0, 1250.0], [0.4, 0.2])
    write_wav(path, clip)
    return str(path)


def run(args):
    return main([str(a) for a in args])


def test_no_subcommand_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["featurize", "x.wav", "--bogus"])
    assert exc.value.code == 2


def test_featurize_writes_feature_file(tone_wav, tmp_path, capsys):
    out = tmp_path / "feats"
    assert run(["featurize", tone_wav, "--out", out, "--frame-size", 64]) == 0
    assert "50 frames of dim 128" in capsys.readouterr().out
    features = load_features(out / "tone.fgf")
    assert features.vectors.shape == (50, 128)
    assert features.frame_spec.sample_rate == 16000


def test_featurize_resamples_when_asked(tone_wav, tmp_path):
    out = tmp_path / "feats"
    assert run(["featurize", tone_wav, "--out", out, "--frame-size", 64, "--rate", 8000]) == 0
    features = load_features(out / "tone.fgf")
    assert features.frame_spec.sample_rate == 8000
    assert features.vectors.shape == (25, 128)


def test_featurize_missing_file_exits_1(tmp_path, capsys):
    assert run(["featurize", tmp_path / "nope.wav", "--out", tmp_path]) == 1
    assert "error:" in capsys.readouterr().err


def test_featurize_rejects_garbage_wav(tmp_path, capsys):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav at all")
    assert run(["featurize", bad, "--out", tmp_path]) == 1
    assert "error:" in capsys.readouterr().err


def train_args(inputs, out, epochs=3):
    return [
        "train",
        *inputs,
        "--out",
        out,
        "--variant",
        "fc",
        "--hidden",
        "8",
        "--timesteps",
        "4",
        "--epochs",
        epochs,
        "--batch-size",
        "4",
        "--seed",
        "1",
        "--checkpoint-epochs",
        "",
        "--no-timing",
        "--no-figures",
    ]


def test_train_on_wav_inputs_writes_artifacts(tone_wav, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(train_args([tone_wav, "--frame-size", "64"], out)) == 0
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,data_loss,total_loss,seconds"
    assert len(lines) == 4
    ckpt = load_checkpoint(out / "checkpoint_00003.fgn")
    assert ckpt.epoch == 3
    assert ckpt.sample_rate == 16000
    assert "training fc:" in capsys.readouterr().out


def test_train_on_feature_files(tone_wav, tmp_path):
    feats = tmp_path / "feats"
    run(["featurize", tone_wav, "--out", feats, "--frame-size", 64])
    out = tmp_path / "run"
    assert run(train_args([feats / "tone.fgf"], out)) == 0
    assert (out / "checkpoint_00003.fgn").exists()


def test_train_renders_loss_png(tone_wav, tmp_path):
    out = tmp_path / "run"
    args = train_args([tone_wav, "--frame-size", "64"], out)
    args.remove("--no-figures")
    assert run(args) == 0
    assert (out / "loss.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_train_resume_flag(tone_wav, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(train_args([tone_wav, "--frame-size", "64"], out)) == 0
    assert (
        run(
            [
                "train",
                tone_wav,
                "--frame-size",
                "64",
                "--out",
                out,
                "--resume",
                out / "checkpoint_00003.fgn",
                "--epochs",
                "5",
                "--no-timing",
                "--no-figures",
            ]
        )
        == 0
    )
    assert "resuming fc from epoch 3" in capsys.readouterr().out
    assert (out / "checkpoint_00005.fgn").exists()
    rows = list(csv.DictReader(open(out / "loss.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2", "3", "4", "5"]


def test_generate_and_spectrogram_pipeline(tone_wav, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(train_args([tone_wav, "--frame-size", "64"], out)) == 0
    wav_out = tmp_path / "gen.wav"
    assert (
        run(
            [
                "generate",
                out / "checkpoint_00003.fgn",
                "--seed-wav",
                tone_wav,
                "--frames",
                "6",
                "--offset",
                "2",
                "--out",
                wav_out,
                "--no-figures",
            ]
        )
        == 0
    )
    stdout = capsys.readouterr().out
    assert "seed: frames 2..5" in stdout
    clip = read_wav(wav_out)
    assert len(clip) == (4 + 6) * 64
    assert np.abs(clip.samples).max() <= 1.0

    pgm = tmp_path / "gen.pgm"
    assert run(["spectrogram", wav_out, "--out", pgm, "--frame-size", 64, "--no-figures"]) == 0
    blob = pgm.read_bytes()
    assert blob.startswith(b"P5\n10 33\n255\n")
    assert len(blob) == 13 + 10 * 33


def test_generate_random_offset_is_logged(tone_wav, tmp_path, capsys):
    out = tmp_path / "run"
    run(train_args([tone_wav, "--frame-size", "64"], out))
    capsys.readouterr()
    assert (
        run(
            [
                "generate",
                out / "checkpoint_00003.fgn",
                "--seed-wav",
                tone_wav,
                "--frames",
                "1",
                "--offset",
                "random",
                "--out",
                tmp_path / "g.wav",
                "--no-figures",
            ]
        )
        == 0
    )
    assert "seed: frames " in capsys.readouterr().out


def test_generate_offset_out_of_range(tone_wav, tmp_path, capsys):
    out = tmp_path / "run"
    run(train_args([tone_wav, "--frame-size", "64"], out))
    code = run(
        [
            "generate",
            out / "checkpoint_00003.fgn",
            "--seed-wav",
            tone_wav,
            "--frames",
            "1",
            "--offset",
            "999",
            "--out",
            tmp_path / "g.wav",
        ]
    )
    assert code == 1
    assert "out of range" in capsys.readouterr().err


def test_generate_resamples_seed_to_checkpoint_rate(tone_wav, tmp_path):
    out = tmp_path / "run"
    run(train_args([tone_wav, "--frame-size", "64"], out))
    other = tmp_path / "slow.wav"
    write_wav(other, sinusoid_clip(8000, 1600, [500.0], [0.4]))
    assert (
        run(
            [
                "generate",
                out / "checkpoint_00003.fgn",
                "--seed-wav",
                other,
                "--frames",
                "2",
                "--out",
                tmp_path / "g.wav",
                "--no-figures",
            ]
        )
        == 0
    )
    assert read_wav(tmp_path / "g.wav").sample_rate == 16000


def test_generate_rejects_corrupt_checkpoint(tmp_path, tone_wav, capsys):
    bad = tmp_path / "bad.fgn"
    bad.write_bytes(b"FGN1" + b"\x00" * 10)
    code = run(
        ["generate", bad, "--seed-wav", tone_wav, "--frames", "1", "--out", tmp_path / "g.wav"]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_spectrogram_renders_png(tone_wav, tmp_path):
    pgm = tmp_path / "t.pgm"
    assert run(["spectrogram", tone_wav, "--out", pgm, "--frame-size", 64]) == 0
    assert (tmp_path / "t_spectrogram.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_gradcheck_single_variant(capsys):
    assert run(["gradcheck", "--variant", "base", "--coords", "30"]) == 0
    out = capsys.readouterr().out
    assert "ok: base" in out


def test_selftest_passes(capsys):
    assert run(["selftest"]) == 0
    assert "selftest passed" in capsys.readouterr().out
