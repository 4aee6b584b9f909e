"""Mono 16-bit PCM WAV reading/writing and linear resampling.

Only the RIFF/WAVE PCM-16 flavour is handled; compressed codecs are out of
scope and rejected with a clear error.  Parsing is done directly with
``struct`` so that malformed containers produce precise diagnostics and
unknown chunks are skipped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class WavFormatError(ValueError):
    """Raised when a file is not a readable PCM-16 RIFF/WAVE container."""


@dataclass
class AudioClip:
    """A mono waveform: sample rate plus normalized samples in [-1, 1]."""

    sample_rate: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size and (np.abs(self.samples).max() > 1.0 + 1e-12):
            raise ValueError("samples outside [-1, 1]; normalize or clamp first")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


def read_wav(path) -> AudioClip:
    """Read a PCM-16 WAV file into an AudioClip.

    Integer samples are mapped to floats by dividing by 32768, so values land
    on the exact grid k/32768.  Stereo files are mixed down by averaging the
    two channels.  Chunks other than "fmt " and "data" are skipped.
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < 12 or raw[0:4] != b"RIFF":
        raise WavFormatError(f"{path}: not a RIFF file (bad magic {raw[0:4]!r})")
    if raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: RIFF container is not WAVE")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16 or len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise WavFormatError(
                    f"{path}: truncated data chunk "
                    f"(declared {chunk_size} bytes, got {len(body)})"
                )
            data = body
        # chunks are word-aligned: odd sizes carry one pad byte
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing data chunk")

    tag, channels, rate, _byte_rate, _block_align, bits = fmt
    if tag != 1:
        raise WavFormatError(f"{path}: unsupported format tag {tag} (PCM only)")
    if bits != 16:
        raise WavFormatError(f"{path}: unsupported bit depth {bits} (16 only)")
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: unsupported channel count {channels}")

    frame_bytes = 2 * channels
    usable = len(data) - (len(data) % frame_bytes)
    ints = np.frombuffer(data[:usable], dtype="<i2").astype(np.float64)
    if channels == 2:
        ints = ints.reshape(-1, 2).mean(axis=1)
    return AudioClip(sample_rate=rate, samples=ints / 32768.0)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as mono 16-bit PCM WAV.

    Samples are clamped to [-1, 1] and quantized with scale 32768 (the same
    grid the reader uses, so grid-aligned clips round-trip bit-exactly); the
    one unreachable code 32768 is clamped to 32767.
    """
    clamped = np.clip(np.asarray(clip.samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.rint(clamped * 32768.0), -32768, 32767).astype("<i2")
    data = ints.tobytes()

    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(data),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation.

    Output sample i takes the value of the input at time i/target_rate;
    positions past the last input sample clamp to it.  Output length is
    chosen so the duration is preserved within one sample period.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.sample_rate, clip.samples.copy())

    n_src = clip.samples.size
    n_out = max(1, int(round(n_src * target_rate / clip.sample_rate)))
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    resampled = np.interp(positions, np.arange(n_src), clip.samples)
    return AudioClip(target_rate, resampled)
