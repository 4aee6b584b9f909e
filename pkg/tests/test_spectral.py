"""DFT (radix-2 and Bluestein), packing, featurization, spectrograms."""

import numpy as np
import pytest

from conftest import naive_dft, sinusoid_clip
from freqgen.audio_io import AudioClip
from freqgen.spectral import (
    FeatureSequence,
    FrameSpec,
    dft_forward,
    dft_inverse,
    featurize_clip,
    frame_signal,
    pack,
    reconstruct_clip,
    reconstruct_frames,
    spectrogram_pgm,
    unpack,
)


def test_dft_of_constant_frame():
    assert np.allclose(dft_forward(np.ones(4)), [4, 0, 0, 0], atol=1e-12)


def test_dft_of_impulse_is_flat():
    x = np.zeros(8)
    x[0] = 1.0
    assert np.abs(dft_forward(x) - 1.0).max() < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 8, 12, 100, 256, 720])
def test_dft_matches_naive_sum(n):
    rng = np.random.default_rng(n)
    x = rng.uniform(-1, 1, n)
    assert np.abs(dft_forward(x) - naive_dft(x)).max() < 1e-10 * max(n, 1)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 64, 100, 999, 4000])
def test_dft_roundtrip(n):
    rng = np.random.default_rng(n)
    x = rng.uniform(-1, 1, n)
    assert np.abs(dft_inverse(dft_forward(x)) - x).max() < 1e-9


def test_dft_linearity_and_shift():
    rng = np.random.default_rng(7)
    n = 48
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    fx, fy = dft_forward(x), dft_forward(y)
    assert np.abs(dft_forward(2.5 * x + y) - (2.5 * fx + fy)).max() < 1e-10
    # circular shift by m multiplies bin k by exp(-2pi i k m / n)
    m = 5
    shifted = dft_forward(np.roll(x, m))
    phase = np.exp(-2j * np.pi * np.arange(n) * m / n)
    assert np.abs(shifted - fx * phase).max() < 1e-10


def test_parseval():
    rng = np.random.default_rng(11)
    for n in (16, 100, 4000):
        x = rng.uniform(-1, 1, n)
        time_energy = float(np.sum(x * x))
        freq_energy = float(np.sum(np.abs(dft_forward(x)) ** 2)) / n
        assert abs(time_energy - freq_energy) / time_energy < 1e-12


def test_hermitian_symmetry_of_real_input():
    rng = np.random.default_rng(13)
    n = 100
    spectrum = dft_forward(rng.uniform(-1, 1, n))
    for k in range(1, n):
        assert abs(spectrum[k] - np.conj(spectrum[n - k])) < 1e-10


def test_tone_lands_in_expected_bin():
    clip = sinusoid_clip(16000, 4000, [1000.0], [0.5])
    spectrum = dft_forward(clip.samples)
    half = np.abs(spectrum[: 2001])
    assert int(np.argmax(half)) == 250


def test_dft_rejects_non_finite():
    with pytest.raises((FloatingPointError, ValueError)):
        dft_forward(np.array([1.0, np.nan, 0.0, 0.0]))


def test_pack_example():
    packed = pack(np.array([1 + 2j, 3 - 4j]), 2)
    assert np.array_equal(packed, [0.5, 1.5, 1.0, -2.0])


def test_pack_unpack_bijection():
    rng = np.random.default_rng(5)
    for n in (2, 3, 64, 4000):
        spectrum = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        back = unpack(pack(spectrum, n), n)
        assert np.abs(back - spectrum).max() < 1e-12


def test_frame_signal_drops_partial_frame():
    frames = frame_signal(np.arange(10, dtype=float), 4)
    assert frames.shape == (2, 4)
    assert np.array_equal(frames[1], [4, 5, 6, 7])


def test_featurize_paper_shape():
    clip = AudioClip(16000, np.zeros(160000))
    features = featurize_clip(clip, FrameSpec(4000, 16000))
    assert features.vectors.shape == (40, 8000)


def test_featurize_requires_matching_rate():
    clip = AudioClip(8000, np.zeros(8000))
    with pytest.raises(ValueError):
        featurize_clip(clip, FrameSpec(4000, 16000))


def test_featurize_requires_one_full_frame():
    clip = AudioClip(16000, np.zeros(3999))
    with pytest.raises(ValueError):
        featurize_clip(clip, FrameSpec(4000, 16000))


def test_featurize_reconstruct_roundtrip():
    clip = sinusoid_clip(16000, 12000, [440.0, 950.0], [0.4, 0.3])
    spec = FrameSpec(4000, 16000)
    back = reconstruct_clip(featurize_clip(clip, spec))
    assert back.sample_rate == 16000
    assert len(back) == 12000
    assert np.abs(back.samples - clip.samples).max() < 1e-9


def test_reconstruct_length_is_frames_times_n():
    spec = FrameSpec(4000, 16000)
    features = FeatureSequence(spec, np.zeros((40, 8000)))
    samples, residue, clamped = reconstruct_frames(features)
    assert samples.shape == (160000,)
    assert residue == 0.0 and clamped == 0


def test_reconstruct_counts_clamped_samples():
    spec = FrameSpec(4, 16000)
    # constant spectrum vector: bin0 real = 2 -> frame of 2.0s after unpack/idft
    vec = pack(np.array([8.0, 0, 0, 0], dtype=complex), 4)
    features = FeatureSequence(spec, np.stack([vec, np.zeros(8)]))
    samples, _, clamped = reconstruct_frames(features)
    assert clamped == 4
    assert np.array_equal(samples[:4], [2.0] * 4)
    clip = reconstruct_clip(features)
    assert np.array_equal(clip.samples[:4], [1.0] * 4)


def test_pgm_header_and_size():
    clip = sinusoid_clip(16000, 1200, [2000.0], [0.5])
    blob = spectrogram_pgm(clip, FrameSpec(400, 16000))
    header = b"P5\n3 201\n255\n"
    assert blob.startswith(header)
    assert len(blob) == len(header) + 3 * 201


def test_pgm_of_silence_is_black():
    clip = AudioClip(16000, np.zeros(800))
    blob = spectrogram_pgm(clip, FrameSpec(400, 16000))
    payload = blob.split(b"\n", 3)[3]
    assert set(payload) == {0}


def test_pgm_tone_row_position():
    # 1 kHz at n=4000/16 kHz lands in bin 250; bin 0 is the bottom row
    clip = sinusoid_clip(16000, 8000, [1000.0], [0.5])
    spec = FrameSpec(4000, 16000)
    blob = spectrogram_pgm(clip, spec)
    head, rest = blob.split(b"\n", 1)
    dims, _, payload = rest.split(b"\n", 2)
    width, height = (int(v) for v in dims.split())
    assert (width, height) == (2, 2001)
    image = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    bright_row = int(np.argmax(image[:, 0]))
    assert height - 1 - bright_row == 250
    assert image[bright_row, 0] == 255


def test_feature_sequence_validates_width():
    with pytest.raises(ValueError):
        FeatureSequence(FrameSpec(4, 16000), np.zeros((3, 6)))
