"""Audio generation: extend a seed feature sequence frame by frame, then
invert the packed frequency vectors back to a waveform.

Two prediction modes:

* ``window``: before each new frame, reset the recurrent state and replay
  the last T frames of the sequence so far; the final step's output becomes
  the next frame.  Predictions stay conditioned on a bounded, mostly-real
  context, which keeps long generations from drifting.
* ``free_run``: replay the seed once, then keep stepping, feeding each
  prediction back in as the next input without ever resetting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from freqgen.audio_io import AudioClip
from freqgen.models import Model, Variant, stack_frame_window
from freqgen.spectral import FeatureSequence, reconstruct_frames

GENERATION_MODES = ("window", "free_run")


def _replay(model: Model, vectors: np.ndarray, rng=None) -> np.ndarray:
    """Run the model over ``vectors`` in eval mode (without resetting state)
    and return the prediction following the last frame."""
    out = None
    for t in range(vectors.shape[0]):
        if model.config.variant is Variant.CONV2D:
            x = stack_frame_window(vectors, t, model.config.k_frames)
        else:
            x = vectors[t]
        out = model.step(x, "eval", rng)
    return np.asarray(out.data, dtype=np.float64)


def generate(
    model: Model,
    seed: FeatureSequence,
    frames: int,
    mode: str = "window",
    window_frames: int = 40,
) -> FeatureSequence:
    """Append ``frames`` predicted frames to the seed sequence.

    Returns a sequence of len(seed) + frames vectors (the seed is kept so
    the synthesized audio flows out of the prompt audio).
    """
    if mode not in GENERATION_MODES:
        raise ValueError(f"mode must be one of {GENERATION_MODES}, got {mode!r}")
    if frames < 0:
        raise ValueError("frames must be >= 0")
    if seed.frame_spec.dim != model.config.dim:
        raise ValueError(
            f"seed feature width {seed.frame_spec.dim} does not match model width {model.config.dim}"
        )
    if mode == "window" and window_frames < 1:
        raise ValueError("window_frames must be >= 1")

    history = [v.copy() for v in seed.vectors]
    if mode == "window":
        for _ in range(frames):
            model.reset_state()
            context = np.stack(history[-window_frames:])
            history.append(_replay(model, context))
    elif frames > 0:
        model.reset_state()
        history.append(_replay(model, np.stack(history)))
        for _ in range(frames - 1):
            if model.config.variant is Variant.CONV2D:
                window = np.stack(history)
                x = stack_frame_window(window, window.shape[0] - 1, model.config.k_frames)
            else:
                x = history[-1]
            history.append(np.asarray(model.step(x, "eval").data, dtype=np.float64))

    return FeatureSequence(seed.frame_spec, np.stack(history))


@dataclass
class SynthesisStats:
    peak_amplitude: float  # before clamping
    clamped_samples: int
    max_imaginary: float  # largest |Im| discarded by the inverse transform
    duration: float


def synthesize(features: FeatureSequence) -> tuple[AudioClip, SynthesisStats]:
    """Inverse-transform a feature sequence to a mono clip, clamping to
    [-1, 1], and report what the clamp and the inverse transform discarded."""
    samples, max_imag, clamped = reconstruct_frames(features)
    peak = float(np.abs(samples).max()) if samples.size else 0.0
    clip = AudioClip(features.frame_spec.sample_rate, np.clip(samples, -1.0, 1.0))
    stats = SynthesisStats(peak, clamped, max_imag, clip.duration)
    return clip, stats
