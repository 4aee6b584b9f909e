"""Figure rendering for the CLI: loss curves, waveforms, spectrograms.

Everything draws through the Agg backend and writes PNG files next to the
primary artifacts (the CSV log, the WAV, the PGM); nothing here opens a
display.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from freqgen.audio_io import AudioClip
from freqgen.spectral import FrameSpec, featurize_clip, unpack


def render_loss_curve(csv_path, png_path) -> None:
    """Plot data and total loss per epoch from a training log CSV."""
    epochs: list[int] = []
    data_loss: list[float] = []
    total_loss: list[float] = []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            data_loss.append(float(row["data_loss"]))
            total_loss.append(float(row["total_loss"]))

    fig, ax = plt.subplots(figsize=(8, 4.5))
    if epochs:
        ax.plot(epochs, data_loss, label="data loss", color="tab:blue")
        ax.plot(epochs, total_loss, label="total loss", color="tab:orange", alpha=0.7)
        if min(data_loss) > 0 and min(total_loss) > 0:
            ax.set_yscale("log")
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean per-sequence MSE")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def render_waveform(clip: AudioClip, png_path, title: str = "waveform") -> None:
    t = np.arange(len(clip)) / clip.sample_rate
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(t, clip.samples, linewidth=0.5, color="tab:blue")
    ax.set_xlabel("seconds")
    ax.set_ylabel("amplitude")
    ax.set_ylim(-1.05, 1.05)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def render_spectrogram(clip: AudioClip, spec: FrameSpec, png_path) -> None:
    """Frame-resolution log-magnitude image, bin 0 at the bottom (the same
    matrix the PGM export uses, drawn with axis labels and a colorbar)."""
    features = featurize_clip(clip, spec)
    n = spec.frame_size
    height = n // 2 + 1
    mags = np.stack([np.abs(unpack(v, n))[:height] for v in features.vectors])
    levels = np.log1p(mags).T

    extent = (0.0, len(features) * spec.frame_seconds, 0.0, spec.sample_rate / 2.0)
    fig, ax = plt.subplots(figsize=(10, 4))
    im = ax.imshow(levels, origin="lower", aspect="auto", extent=extent, cmap="magma")
    ax.set_xlabel("seconds")
    ax.set_ylabel("Hz")
    ax.set_title("spectrogram")
    fig.colorbar(im, ax=ax, label="log(1 + |X|)")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
