"""Window and free-run generation semantics, and waveform synthesis."""

import numpy as np
import pytest

from freqgen.audio_io import write_wav
from freqgen.models import ArchitectureConfig, build_model
from freqgen.generation import generate, synthesize
from freqgen.spectral import FeatureSequence, FrameSpec, featurize_clip, pack
from conftest import sinusoid_clip


class StubTensor:
    def __init__(self, data):
        self.data = data


class RecordingModel:
    """Duck-typed model that logs resets and step inputs, and predicts a
    counter so each generated frame is identifiable."""

    def __init__(self, dim=4, variant="base", k_frames=1):
        self.config = ArchitectureConfig(
            variant, frame_size=dim // 2, hidden_size=2, k_frames=k_frames
        )
        self.resets = 0
        self.runs = []  # list of input lists, one per reset
        self.counter = 0.0

    def reset_state(self):
        self.resets += 1
        self.runs.append([])

    def step(self, x, mode="eval", rng=None):
        assert mode == "eval"
        self.runs[-1].append(np.array(x, dtype=float))
        self.counter += 1.0
        return StubTensor(np.full(self.config.dim, self.counter))


def seed_features(frames, dim=4):
    vectors = np.arange(frames * dim, dtype=float).reshape(frames, dim)
    return FeatureSequence(FrameSpec(dim // 2, 16000), vectors)


def test_window_mode_resets_and_slides():
    model = RecordingModel()
    seed = seed_features(5)
    out = generate(model, seed, frames=3, mode="window", window_frames=3)

    assert len(out) == 8
    assert np.array_equal(out.vectors[:5], seed.vectors)
    assert model.resets == 3  # one reset per generated frame
    for run in model.runs:
        assert len(run) == 3  # replay covers exactly the window
    # first window: seed frames 2..4
    assert np.array_equal(np.stack(model.runs[0]), seed.vectors[2:5])
    # second window ends with the first generated frame (counter value 3)
    assert np.array_equal(model.runs[1][-1], np.full(4, 3.0))
    assert np.array_equal(out.vectors[5], np.full(4, 3.0))
    assert np.array_equal(out.vectors[6], np.full(4, 6.0))


def test_window_shorter_history_uses_all_frames():
    model = RecordingModel()
    out = generate(model, seed_features(2), frames=1, mode="window", window_frames=10)
    assert len(out) == 3
    assert len(model.runs[0]) == 2


def test_free_run_primes_once_then_feeds_back():
    model = RecordingModel()
    seed = seed_features(4)
    out = generate(model, seed, frames=3, mode="free_run")

    assert len(out) == 7
    assert model.resets == 1
    inputs = model.runs[0]
    assert len(inputs) == 6  # 4 seed replays + 2 fed-back predictions
    assert np.array_equal(np.stack(inputs[:4]), seed.vectors)
    # prediction after priming (counter 4) is fed back as the next input
    assert np.array_equal(inputs[4], np.full(4, 4.0))
    assert np.array_equal(inputs[5], np.full(4, 5.0))
    assert np.array_equal(out.vectors[4:], np.stack([np.full(4, v) for v in (4.0, 5.0, 6.0)]))


def test_conv2d_inputs_are_stacked_windows():
    model = RecordingModel(variant="conv2d", k_frames=3)
    seed = seed_features(3)
    generate(model, seed, frames=1, mode="window", window_frames=3)
    first_inputs = model.runs[0]
    assert first_inputs[0].shape == (12,)
    assert np.array_equal(first_inputs[0], np.concatenate([np.zeros(8), seed.vectors[0]]))
    assert np.array_equal(first_inputs[2], seed.vectors.reshape(-1))


def test_zero_frames_returns_seed_copy():
    model = RecordingModel()
    seed = seed_features(3)
    out = generate(model, seed, frames=0, mode="window")
    assert np.array_equal(out.vectors, seed.vectors)
    out_free = generate(model, seed, frames=0, mode="free_run")
    assert np.array_equal(out_free.vectors, seed.vectors)
    assert model.resets == 0


def test_generate_validations():
    model = RecordingModel()
    seed = seed_features(3)
    with pytest.raises(ValueError):
        generate(model, seed, 1, mode="banana")
    with pytest.raises(ValueError):
        generate(model, seed, -1)
    with pytest.raises(ValueError):
        generate(model, seed, 1, mode="window", window_frames=0)
    with pytest.raises(ValueError):
        generate(model, seed_features(3, dim=8), 1)


def test_generate_with_real_model_extends_sequence():
    cfg = ArchitectureConfig("base", frame_size=8, hidden_size=6, seed=3)
    model = build_model(cfg)
    clip = sinusoid_clip(16000, 64, [2000.0], [0.5])
    seed = featurize_clip(clip, FrameSpec(8, 16000))
    out = generate(model, seed, frames=4, mode="window", window_frames=4)
    assert len(out) == len(seed) + 4
    assert np.isfinite(out.vectors).all()


def test_synthesize_lengths_and_stats():
    spec = FrameSpec(4, 16000)
    quiet = pack(np.array([2.0, 0, 0, 0], dtype=complex), 4)  # 0.5 everywhere
    loud = pack(np.array([8.0, 0, 0, 0], dtype=complex), 4)  # 2.0 everywhere
    features = FeatureSequence(spec, np.stack([quiet, loud]))
    clip, stats = synthesize(features)
    assert len(clip) == 8
    assert clip.sample_rate == 16000
    assert stats.peak_amplitude == pytest.approx(2.0)
    assert stats.clamped_samples == 4
    assert stats.max_imaginary == pytest.approx(0.0, abs=1e-12)
    assert stats.duration == pytest.approx(0.0005)
    assert np.array_equal(clip.samples, [0.5] * 4 + [1.0] * 4)


def test_synthesize_reports_imaginary_residue():
    spec = FrameSpec(4, 16000)
    asym = np.zeros(8)
    asym[5] = 0.25  # imaginary part of bin 1 only: not Hermitian
    features = FeatureSequence(spec, asym[None, :])
    _, stats = synthesize(features)
    assert stats.max_imaginary > 0.1


def test_synthesized_wav_is_writable(tmp_path):
    clip = sinusoid_clip(16000, 32, [1000.0], [0.4])
    seed = featurize_clip(clip, FrameSpec(8, 16000))
    model = build_model(ArchitectureConfig("fc", frame_size=8, hidden_size=4, seed=0))
    out_clip, _ = synthesize(generate(model, seed, 2, "window", 2))
    assert len(out_clip) == (len(seed) + 2) * 8
    write_wav(tmp_path / "g.wav", out_clip)
    assert (tmp_path / "g.wav").stat().st_size == 44 + 2 * len(out_clip)