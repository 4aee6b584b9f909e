"""Shared oracles and corpus builders for the test suite."""

from __future__ import annotations

import numpy as np

from freqgen.audio_io import AudioClip


def naive_dft(x: np.ndarray) -> np.ndarray:
    """Direct O(n^2) DFT sum, evaluated in row chunks to bound memory."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    out = np.empty(n, dtype=np.complex128)
    j = np.arange(n)
    rows = max(1, 2_000_000 // max(n, 1))
    for k0 in range(0, n, rows):
        k = np.arange(k0, min(k0 + rows, n))
        out[k0 : k0 + k.size] = np.exp(-2j * np.pi * np.outer(k, j) / n) @ x
    return out


def sinusoid_clip(
    rate: int, samples: int, freqs, amps, phases=None
) -> AudioClip:
    """A mixture of sinusoids, peak-safe for WAV output."""
    t = np.arange(samples) / rate
    phases = phases if phases is not None else [0.0] * len(freqs)
    s = np.zeros(samples)
    for f, a, ph in zip(freqs, amps, phases):
        s += a * np.sin(2 * np.pi * f * t + ph)
    peak = np.abs(s).max()
    if peak > 0.99:
        s *= 0.99 / peak
    return AudioClip(rate, s)
