"""Command-line pipeline: featurize, train, generate, spectrogram, plus the
gradcheck and selftest diagnostics.

Artifact conventions: feature files end in .fgf, checkpoints in .fgn, the
training log is loss.csv, and figures are PNG files written next to the
artifact they describe (loss.png beside loss.csv, <out>.png beside a WAV).
Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from freqgen import autodiff as ad
from freqgen.audio_io import AudioClip, WavFormatError, read_wav, resample_linear, write_wav
from freqgen.autodiff import Tensor
from freqgen.generation import GENERATION_MODES, generate, synthesize
from freqgen.models import ArchitectureConfig, Variant, build_model
from freqgen.spectral import (
    FeatureSequence,
    FrameSpec,
    dft_forward,
    dft_inverse,
    featurize_clip,
    pack,
    spectrogram_pgm,
    unpack,
)
from freqgen.training import (
    CheckpointError,
    TrainingConfig,
    dataset_from_features,
    load_checkpoint,
    load_features,
    model_from_checkpoint,
    rmsprop_step,
    save_features,
    sequence_loss,
    train,
)

VARIANT_NAMES = tuple(v.value for v in Variant)


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _load_input_features(paths, frame_size: int, rate: int | None) -> list[FeatureSequence]:
    """Accept .fgf feature files and .wav files (featurized on the fly)."""
    out = []
    for path in paths:
        if path.endswith(".fgf"):
            out.append(load_features(path))
        else:
            clip = read_wav(path)
            if rate is not None and clip.sample_rate != rate:
                clip = resample_linear(clip, rate)
            out.append(featurize_clip(clip, FrameSpec(frame_size, clip.sample_rate)))
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_featurize(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for path in args.inputs:
        clip = read_wav(path)
        if args.rate is not None and clip.sample_rate != args.rate:
            clip = resample_linear(clip, args.rate)
        spec = FrameSpec(args.frame_size, clip.sample_rate)
        features = featurize_clip(clip, spec)
        out_path = os.path.join(args.out, _stem(path) + ".fgf")
        save_features(out_path, features)
        print(f"{path} -> {out_path}: {len(features)} frames of dim {spec.dim}")
    return 0


def _fresh_training_config(args) -> TrainingConfig:
    base = TrainingConfig()
    return TrainingConfig(
        timesteps=args.timesteps if args.timesteps is not None else base.timesteps,
        learning_rate=args.lr if args.lr is not None else base.learning_rate,
        dropout_lstm=args.dropout_lstm if args.dropout_lstm is not None else base.dropout_lstm,
        dropout_dense=args.dropout_dense if args.dropout_dense is not None else base.dropout_dense,
        l2_lambda=args.l2 if args.l2 is not None else base.l2_lambda,
        epochs=args.epochs if args.epochs is not None else base.epochs,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        checkpoint_epochs=(
            tuple(int(e) for e in args.checkpoint_epochs.split(",") if e)
            if args.checkpoint_epochs is not None
            else base.checkpoint_epochs
        ),
        seed=args.seed if args.seed is not None else base.seed,
        grad_clip=args.grad_clip,
        window_stride=args.stride,
        target_data_loss=args.target_loss,
    )


def cmd_train(args) -> int:
    features = _load_input_features(args.inputs, args.frame_size, None)
    os.makedirs(args.out, exist_ok=True)

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model, accumulators = model_from_checkpoint(ckpt)
        config = ckpt.train_config
        if args.epochs is not None:
            import dataclasses

            config = dataclasses.replace(config, epochs=args.epochs)
        start_epoch = ckpt.epoch
        sample_rate = ckpt.sample_rate
        print(f"resuming {ckpt.arch.variant.value} from epoch {start_epoch}")
    else:
        config = _fresh_training_config(args)
        arch = ArchitectureConfig(
            variant=args.variant,
            frame_size=features[0].frame_spec.frame_size,
            hidden_size=args.hidden,
            conv_filters=args.conv_filters,
            conv_kernel=args.conv_kernel,
            pool=args.pool,
            k_frames=args.k_frames,
            seed=args.arch_seed,
            dtype=args.dtype,
        )
        model = build_model(arch)
        accumulators = None
        start_epoch = 0
        sample_rate = features[0].frame_spec.sample_rate

    dataset = dataset_from_features(features, config.timesteps, config.window_stride)
    loss_csv = os.path.join(args.out, "loss.csv")
    print(
        f"training {model.config.variant.value}: {len(dataset)} sequences of "
        f"{config.timesteps} steps, {model.parameter_count()} parameters"
    )
    result = train(
        model,
        dataset,
        config,
        loss_csv=loss_csv,
        checkpoint_dir=args.out,
        clock=None if args.no_timing else time.perf_counter,
        start_epoch=start_epoch,
        accumulators=accumulators,
        sample_rate=sample_rate,
    )
    if result.rows:
        epoch, data_loss, total_loss, _ = result.rows[-1]
        print(f"epoch {epoch}: data loss {data_loss:.6g}, total loss {total_loss:.6g}")
    for path in result.checkpoint_paths:
        print(f"wrote {path}")
    print(f"wrote {loss_csv}")
    if not args.no_figures:
        from freqgen import report

        png = os.path.join(args.out, "loss.png")
        report.render_loss_curve(loss_csv, png)
        print(f"wrote {png}")
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = model_from_checkpoint(ckpt)
    clip = read_wav(args.seed_wav)
    if clip.sample_rate != ckpt.sample_rate:
        clip = resample_linear(clip, ckpt.sample_rate)
    spec = FrameSpec(ckpt.arch.frame_size, ckpt.sample_rate)
    features = featurize_clip(clip, spec)

    window = args.window if args.window is not None else ckpt.train_config.timesteps
    seed_frames = args.seed_frames if args.seed_frames is not None else window
    seed_frames = min(seed_frames, len(features))
    latest = len(features) - seed_frames
    if args.offset == "random":
        offset = int(np.random.default_rng().integers(0, latest + 1))
    else:
        offset = int(args.offset)
        if not 0 <= offset <= latest:
            raise ValueError(
                f"offset {offset} out of range [0, {latest}] for {len(features)} frames"
            )
    print(f"seed: frames {offset}..{offset + seed_frames - 1} of {args.seed_wav}")

    seed = FeatureSequence(spec, features.vectors[offset : offset + seed_frames].copy())
    sequence = generate(model, seed, args.frames, args.mode, window)
    out_clip, stats = synthesize(sequence)
    write_wav(args.out, out_clip)
    print(
        f"generated {args.frames} frames ({stats.duration:.2f} s total with seed); "
        f"peak amplitude {stats.peak_amplitude:.4f}, {stats.clamped_samples} samples clamped, "
        f"max imaginary residue {stats.max_imaginary:.3g}"
    )
    print(f"wrote {args.out}")
    if not args.no_figures:
        from freqgen import report

        base, _ = os.path.splitext(args.out)
        report.render_waveform(out_clip, base + ".png", title=os.path.basename(args.out))
        report.render_spectrogram(out_clip, spec, base + "_spectrogram.png")
        print(f"wrote {base}.png and {base}_spectrogram.png")
    return 0


def cmd_spectrogram(args) -> int:
    clip = read_wav(args.wav)
    spec = FrameSpec(args.frame_size, clip.sample_rate)
    blob = spectrogram_pgm(clip, spec)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    frames = len(clip) // args.frame_size
    print(f"wrote {args.out}: {frames} x {args.frame_size // 2 + 1} (frames x bins)")
    if not args.no_figures:
        from freqgen import report

        # suffixed so it cannot clobber a waveform figure of the same stem
        png = os.path.splitext(args.out)[0] + "_spectrogram.png"
        report.render_spectrogram(clip, spec, png)
        print(f"wrote {png}")
    return 0


def cmd_gradcheck(args) -> int:
    variants = VARIANT_NAMES if args.variant == "all" else (args.variant,)
    rng = np.random.default_rng(args.seed)
    worst_overall = 0.0
    failed = []
    for name in variants:
        cfg = ArchitectureConfig(
            variant=name,
            frame_size=args.frame_size,
            hidden_size=args.hidden,
            seed=args.seed,
            dtype="float64",
        )
        model = build_model(cfg)
        inputs = rng.standard_normal((args.timesteps, cfg.dim)) * 0.5
        targets = rng.standard_normal((args.timesteps, cfg.dim)) * 0.5
        drop_seed = int(rng.integers(0, 2**31))

        def build_loss():
            model.reset_state()
            loss, _ = sequence_loss(
                model,
                (inputs, targets),
                "train",
                np.random.default_rng(drop_seed),
                l2_lambda=args.l2,
            )
            return loss

        err = ad.grad_check(build_loss, model.params, max_coords=args.coords, rng=rng)
        status = "ok" if err <= args.threshold else "FAIL"
        if status == "FAIL":
            failed.append(name)
        worst_overall = max(worst_overall, err)
        print(f"{status}: {name:8s} max relative gradient error {err:.3e}")
    print(f"worst over {len(variants)} variant(s): {worst_overall:.3e} (threshold {args.threshold:g})")
    return 1 if failed else 0


def _selftest_checks():
    rng = np.random.default_rng(42)

    def dft_roundtrip():
        frame = rng.uniform(-1, 1, 4000)
        back = dft_inverse(dft_forward(frame))
        assert np.abs(back - frame).max() < 1e-9

    def dft_impulse_train():
        assert np.allclose(dft_forward(np.ones(4)), [4, 0, 0, 0])

    def dft_nonpow2():
        x = rng.uniform(-1, 1, 100)
        naive = np.array([np.sum(x * np.exp(-2j * np.pi * k * np.arange(100) / 100)) for k in range(100)])
        assert np.abs(dft_forward(x) - naive).max() < 1e-8

    def pack_roundtrip():
        spectrum = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        assert np.abs(unpack(pack(spectrum, 64), 64) - spectrum).max() < 1e-12

    def wav_roundtrip():
        import tempfile

        clip = AudioClip(16000, np.round(rng.uniform(-1, 1, 1600) * 32767) / 32768.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "t.wav")
            write_wav(path, clip)
            back = read_wav(path)
        assert back.sample_rate == 16000
        assert np.array_equal(back.samples, clip.samples)

    def rmsprop_first_step():
        cfg = TrainingConfig(learning_rate=1e-4)
        params = {"w": Tensor(np.array([1.0]), requires_grad=True)}
        acc = {"w": np.zeros(1)}
        rmsprop_step(params, {"w": np.array([1.0])}, acc, cfg)
        assert abs(acc["w"][0] - 0.1) < 1e-12
        assert abs((params["w"].data[0] - 1.0) + 1e-4 / (np.sqrt(0.1) + 1e-8)) < 1e-12

    def tiny_gradients():
        cfg = ArchitectureConfig("base", frame_size=3, hidden_size=4, seed=1, dtype="float64")
        model = build_model(cfg)
        model.dropout_lstm = model.dropout_dense = 0.0
        seqs = (rng.standard_normal((2, 6)), rng.standard_normal((2, 6)))

        def build_loss():
            model.reset_state()
            return sequence_loss(model, seqs, "train")[0]

        err = ad.grad_check(build_loss, model.params, max_coords=60)
        assert err < 1e-6, f"max relative error {err:.3e}"

    return [
        ("dft roundtrip (n=4000)", dft_roundtrip),
        ("dft of constant frame", dft_impulse_train),
        ("dft vs naive sum (n=100)", dft_nonpow2),
        ("pack/unpack roundtrip", pack_roundtrip),
        ("wav write/read roundtrip", wav_roundtrip),
        ("rmsprop first step", rmsprop_first_step),
        ("lstm gradients vs finite differences", tiny_gradients),
    ]


def cmd_selftest(args) -> int:
    failures = 0
    for label, check in _selftest_checks():
        try:
            check()
        except Exception as exc:  # report every failing check, then exit 1
            failures += 1
            print(f"FAIL: {label}: {exc}")
        else:
            print(f"ok: {label}")
    if failures:
        print(f"selftest failed ({failures} of {len(_selftest_checks())} checks)")
        return 1
    print("selftest passed")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqgen",
        description="Train LSTM models on packed frequency vectors and generate audio.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("featurize", help="convert WAV files to feature files")
    p.add_argument("inputs", nargs="+", help="input WAV files")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--frame-size", type=int, default=4000, help="samples per frame")
    p.add_argument("--rate", type=int, default=None, help="resample to this rate first")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model on feature files or WAVs")
    p.add_argument("inputs", nargs="+", help="input .fgf feature files or .wav files")
    p.add_argument("--out", default="run", help="output directory (default: run)")
    p.add_argument("--variant", choices=VARIANT_NAMES, default="base")
    p.add_argument("--hidden", type=int, default=2048, help="LSTM width")
    p.add_argument("--frame-size", type=int, default=4000, help="frame size for WAV inputs")
    p.add_argument("--timesteps", type=int, default=None, help="sequence length T (default 40)")
    p.add_argument("--epochs", type=int, default=None, help="epochs to train to (default 2000)")
    p.add_argument("--batch-size", type=int, default=None, help="sequences per update (default 8)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p.add_argument("--l2", type=float, default=None, help="L2 lambda on dense weights (default 1e-4)")
    p.add_argument("--dropout-lstm", type=float, default=None, help="LSTM dropout (default 0.5)")
    p.add_argument("--dropout-dense", type=float, default=None, help="dense dropout (default 0.2)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default 0)")
    p.add_argument("--arch-seed", type=int, default=0, help="parameter init seed")
    p.add_argument("--checkpoint-epochs", default=None, help="comma list (default 1200,1500,1800,2100)")
    p.add_argument("--conv-filters", type=int, default=12)
    p.add_argument("--conv-kernel", type=int, default=3)
    p.add_argument("--pool", type=int, default=2)
    p.add_argument("--k-frames", type=int, default=None, help="stacked frames per step (conv2d)")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--stride", type=int, default=None, help="window stride (default T+1)")
    p.add_argument("--grad-clip", type=float, default=None, help="global-norm gradient clip")
    p.add_argument("--target-loss", type=float, default=None, help="stop once data loss drops below")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--no-timing", action="store_true", help="zero the seconds column (reproducible logs)")
    p.add_argument("--no-figures", action="store_true", help="skip loss.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate audio from a checkpoint and a seed WAV")
    p.add_argument("checkpoint", help="trained .fgn checkpoint")
    p.add_argument("--seed-wav", required=True, help="WAV supplying the seed frames")
    p.add_argument("--frames", type=int, required=True, help="number of frames to generate")
    p.add_argument("--mode", choices=GENERATION_MODES, default="window")
    p.add_argument("--window", type=int, default=None, help="context frames (default: training T)")
    p.add_argument("--seed-frames", type=int, default=None, help="seed length (default: window)")
    p.add_argument("--offset", default="0", help="seed start frame, or 'random'")
    p.add_argument("--out", default="generated.wav", help="output WAV path")
    p.add_argument("--no-figures", action="store_true", help="skip waveform/spectrogram PNGs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("spectrogram", help="write a PGM spectrogram of a WAV")
    p.add_argument("wav", help="input WAV file")
    p.add_argument("--out", default="spectrogram.pgm", help="output PGM path")
    p.add_argument("--frame-size", type=int, default=4000)
    p.add_argument("--no-figures", action="store_true", help="skip the PNG rendering")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--variant", choices=VARIANT_NAMES + ("all",), default="all")
    p.add_argument("--frame-size", type=int, default=8)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--timesteps", type=int, default=3)
    p.add_argument("--coords", type=int, default=200, help="sampled coordinates per variant")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="quick invariant checks of the numeric core")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (WavFormatError, CheckpointError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
