"""Waveform <-> packed frequency-vector conversion.

A clip is cut into consecutive non-overlapping frames of n samples, each
frame is transformed with an O(n log n) DFT (radix-2 when n is a power of
two, Bluestein chirp-z otherwise), and each spectrum is unrolled into a
2n-dimensional real vector: the n real parts followed by the n imaginary
parts, scaled by 1/n so entries of real audio stay within [-1, 1].  The
scaling is exactly inverted on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from freqgen.audio_io import AudioClip

# A frame's DFT: ndarray of n complex bins.
Spectrum = np.ndarray


@dataclass(frozen=True)
class FrameSpec:
    """Frame geometry: samples per frame and the pipeline sample rate."""

    frame_size: int
    sample_rate: int

    def __post_init__(self) -> None:
        if self.frame_size < 2:
            raise ValueError(f"frame_size must be >= 2, got {self.frame_size}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def dim(self) -> int:
        """Packed vector dimensionality D = 2n."""
        return 2 * self.frame_size

    @property
    def frame_seconds(self) -> float:
        return self.frame_size / self.sample_rate


@dataclass
class FeatureSequence:
    """Ordered packed frequency vectors, one row per frame."""

    frame_spec: FrameSpec
    vectors: np.ndarray = field(repr=False)  # [num_frames, D]

    def __post_init__(self) -> None:
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if self.vectors.size == 0:
            self.vectors = self.vectors.reshape(0, self.frame_spec.dim)
        if self.vectors.shape[1] != self.frame_spec.dim:
            raise ValueError(
                f"vectors have width {self.vectors.shape[1]}, "
                f"expected D = {self.frame_spec.dim}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("feature vectors contain non-finite entries")

    def __len__(self) -> int:
        return self.vectors.shape[0]


# ---------------------------------------------------------------------------
# DFT kernels
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(levels):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=256)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; len(x) must be 2**k."""
    n = x.shape[0]
    if n & (n - 1):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    out = np.ascontiguousarray(x[_bit_reversal(n)], dtype=np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        blocks = out.reshape(-1, m)
        even = blocks[:, :half]
        odd = blocks[:, half:] * _twiddles(m)
        out = np.concatenate((even + odd, even - odd), axis=1).reshape(-1)
        m *= 2
    return out


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[0]


@lru_cache(maxsize=32)
def _bluestein_tables(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Chirp w_j = exp(-i pi j^2 / n) and the FFT of its padded mirror.

    Exponents are reduced mod 2n before the complex exponential so the
    argument stays small even for large j (j^2 mod 2n is exact in int64).
    """
    j = np.arange(n, dtype=np.int64)
    chirp = np.exp(-1j * np.pi * ((j * j) % (2 * n)) / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    kernel = np.zeros(m, dtype=np.complex128)
    kernel[:n] = np.conj(chirp)
    kernel[m - n + 1 :] = np.conj(chirp[1:][::-1])
    return chirp, _fft_pow2(kernel), m


def _bluestein(x: np.ndarray) -> np.ndarray:
    """Arbitrary-length DFT as a power-of-two convolution with a chirp."""
    n = x.shape[0]
    chirp, kernel_fft, m = _bluestein_tables(n)
    a = np.zeros(m, dtype=np.complex128)
    a[:n] = x * chirp
    conv = _ifft_pow2(_fft_pow2(a) * kernel_fft)
    return conv[:n] * chirp


def _dft_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    if n == 1:
        return x.copy()
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    return _bluestein(x)


def dft_forward(frame: np.ndarray) -> Spectrum:
    """X[k] = sum_j x[j] exp(-2 pi i jk / n) for a real frame of length n."""
    frame = np.asarray(frame, dtype=np.float64)
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite samples")
    return _dft_complex(frame)


def dft_inverse(spectrum: Spectrum) -> np.ndarray:
    """Inverse DFT; returns the real part, discarding imaginary residue."""
    return _idft_complex(spectrum).real


def _idft_complex(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(_dft_complex(np.conj(spectrum))) / spectrum.shape[0]


# ---------------------------------------------------------------------------
# Framing and packing
# ---------------------------------------------------------------------------


def frame_signal(samples: np.ndarray, n: int) -> np.ndarray:
    """Cut into consecutive non-overlapping frames; the trailing partial
    frame is dropped.  Returns an [m, n] array (m may be 0)."""
    if n < 2:
        raise ValueError(f"frame size must be >= 2, got {n}")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    m = samples.size // n
    return samples[: m * n].reshape(m, n)


def pack(spectrum: Spectrum, n: int) -> np.ndarray:
    """Unroll a spectrum into [Re(X)/n, Im(X)/n] of length 2n."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if spectrum.shape[0] != n:
        raise ValueError(f"spectrum has {spectrum.shape[0]} bins, expected {n}")
    return np.concatenate((spectrum.real, spectrum.imag)) / n


def unpack(vector: np.ndarray, n: int) -> Spectrum:
    """Invert pack(): bins[k] = n * (vector[k] + i vector[n+k])."""
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.shape[0] != 2 * n:
        raise ValueError(f"packed vector has length {vector.shape[0]}, expected {2 * n}")
    return n * (vector[:n] + 1j * vector[n:])


def featurize_clip(clip: AudioClip, spec: FrameSpec) -> FeatureSequence:
    """frame -> DFT -> pack for each frame of the clip, order preserved."""
    if clip.sample_rate != spec.sample_rate:
        raise ValueError(
            f"clip rate {clip.sample_rate} != frame spec rate {spec.sample_rate}; "
            "resample first"
        )
    frames = frame_signal(clip.samples, spec.frame_size)
    if frames.shape[0] == 0:
        raise ValueError(
            f"clip has {clip.samples.size} samples, shorter than one "
            f"{spec.frame_size}-sample frame"
        )
    vectors = np.stack(
        [pack(dft_forward(frame), spec.frame_size) for frame in frames]
    )
    return FeatureSequence(spec, vectors)


def reconstruct_frames(features: FeatureSequence) -> tuple[np.ndarray, float, int]:
    """Inverse path without clamping applied yet.

    Returns (raw samples, max abs imaginary residue, count of samples that
    fall outside [-1, 1] and will be clamped).
    """
    n = features.frame_spec.frame_size
    if len(features) == 0:
        return np.zeros(0), 0.0, 0
    pieces = []
    residue = 0.0
    for vector in features.vectors:
        full = _idft_complex(unpack(vector, n))
        residue = max(residue, float(np.abs(full.imag).max()))
        pieces.append(full.real)
    samples = np.concatenate(pieces)
    clamped = int(np.count_nonzero(np.abs(samples) > 1.0))
    return samples, residue, clamped


def reconstruct_clip(features: FeatureSequence) -> AudioClip:
    """unpack -> inverse DFT per vector, frames concatenated, clamped."""
    samples, _, _ = reconstruct_frames(features)
    return AudioClip(features.frame_spec.sample_rate, np.clip(samples, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Spectrogram
# ---------------------------------------------------------------------------


def spectrogram_pgm(clip: AudioClip, spec: FrameSpec) -> bytes:
    """Binary P5 PGM of per-frame log magnitudes.

    Width is the frame count, height is n/2 + 1 (the non-redundant bins),
    bin 0 on the bottom row.  Log magnitudes are normalized over the whole
    image to the 0..255 range; silence maps to an all-zero image.
    """
    features = featurize_clip(clip, spec)
    n = spec.frame_size
    height = n // 2 + 1
    width = len(features)

    mags = np.empty((width, height))
    for t, vector in enumerate(features.vectors):
        mags[t] = np.abs(unpack(vector, n))[:height]
    levels = np.log1p(mags)

    lo, hi = levels.min(), levels.max()
    if hi > lo:
        pixels = np.rint(255.0 * (levels - lo) / (hi - lo)).astype(np.uint8)
    else:
        pixels = np.zeros((width, height), dtype=np.uint8)

    # transpose to rows=bins, then flip so bin 0 lands on the bottom row
    image = pixels.T[::-1]
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + image.tobytes()
