"""Frequency-domain audio continuation.

WAV audio is packed into per-frame DFT feature vectors, an LSTM variant is
trained to predict the next frame, and new audio is produced by sliding-window
prediction followed by inverse transforms.  All numerics (FFT, reverse-mode
autodiff, LSTM cells, RMSProp) are implemented in this package on top of
plain numpy arrays.
"""

from freqgen.audio_io import AudioClip, read_wav, resample_linear, write_wav
from freqgen.autodiff import Tensor, backward, grad_check
from freqgen.generation import generate, synthesize
from freqgen.models import ArchitectureConfig, Model, Variant, build_model
from freqgen.spectral import (
    FeatureSequence,
    FrameSpec,
    dft_forward,
    dft_inverse,
    featurize_clip,
    pack,
    reconstruct_clip,
    unpack,
)
from freqgen.training import (
    Checkpoint,
    Dataset,
    TrainingConfig,
    build_dataset,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ArchitectureConfig",
    "Checkpoint",
    "Dataset",
    "FeatureSequence",
    "FrameSpec",
    "Model",
    "Tensor",
    "TrainingConfig",
    "Variant",
    "backward",
    "build_dataset",
    "build_model",
    "dft_forward",
    "dft_inverse",
    "featurize_clip",
    "generate",
    "grad_check",
    "load_checkpoint",
    "pack",
    "read_wav",
    "reconstruct_clip",
    "resample_linear",
    "save_checkpoint",
    "synthesize",
    "train",
    "unpack",
    "write_wav",
]
