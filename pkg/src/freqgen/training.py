"""Teacher-forced BPTT training with RMSProp, loss logging, checkpoints.

Sequences are non-overlapping windows of T+1 consecutive frames; the first T
frames are inputs and the last T are targets (each target is the next true
frame, never a model prediction).  Per batch, sequence gradients are
accumulated with mean weighting and applied with one RMSProp update.

Reproducibility: the RNG for epoch e is derived from (seed, e), so training
can resume from a checkpoint at any epoch boundary and continue bit-exactly.
Checkpoints and feature files share one little-endian tensor-block layout
with f32 payloads; training therefore runs in float32 by default so that a
save/load round trip is lossless.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from freqgen import autodiff as ad
from freqgen.audio_io import AudioClip
from freqgen.autodiff import Tensor
from freqgen.models import (
    ArchitectureConfig,
    Model,
    Variant,
    build_model,
    parameter_names,
    stack_frame_window,
)
from freqgen.spectral import FeatureSequence, FrameSpec, featurize_clip

CHECKPOINT_MAGIC = b"FGN1"
FEATURES_MAGIC = b"FGF1"
FORMAT_VERSION = 1
LOSS_CSV_HEADER = "epoch,data_loss,total_loss,seconds"


class CheckpointError(ValueError):
    """Raised for unreadable or inconsistent checkpoint/feature files."""


@dataclass
class TrainingConfig:
    timesteps: int = 40
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    dropout_lstm: float = 0.5
    dropout_dense: float = 0.2
    l2_lambda: float = 1e-4
    epochs: int = 2000
    batch_size: int = 8
    checkpoint_epochs: tuple[int, ...] = (1200, 1500, 1800, 2100)
    seed: int = 0
    grad_clip: float | None = None
    window_stride: int | None = None  # None: non-overlapping (T+1)
    target_data_loss: float | None = None  # stop early once reached

    def __post_init__(self) -> None:
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.learning_rate:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must be in [0, 1)")
        for name in ("dropout_lstm", "dropout_dense"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        self.checkpoint_epochs = tuple(int(e) for e in self.checkpoint_epochs)


@dataclass
class Dataset:
    """Teacher-forcing sequences: (inputs X_0..X_{T-1}, targets X_1..X_T)."""

    sequences: list[tuple[np.ndarray, np.ndarray]]
    frame_spec: FrameSpec
    timesteps: int

    def __post_init__(self) -> None:
        d = self.frame_spec.dim
        for inputs, targets in self.sequences:
            if inputs.shape != (self.timesteps, d) or targets.shape != (self.timesteps, d):
                raise ValueError(
                    f"sequence shapes {inputs.shape}/{targets.shape} do not match "
                    f"T={self.timesteps}, D={d}"
                )

    def __len__(self) -> int:
        return len(self.sequences)


def windows_from_features(
    features: FeatureSequence, timesteps: int, stride: int | None = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Slice a feature sequence into (inputs, targets) windows of T+1
    consecutive frames; the remainder past the last full window is dropped."""
    step = (timesteps + 1) if stride is None else stride
    if step < 1:
        raise ValueError("stride must be >= 1")
    vectors = features.vectors
    out = []
    start = 0
    while start + timesteps + 1 <= vectors.shape[0]:
        window = vectors[start : start + timesteps + 1]
        out.append((window[:-1].copy(), window[1:].copy()))
        start += step
    return out


def dataset_from_features(
    feature_seqs: list[FeatureSequence], timesteps: int, stride: int | None = None
) -> Dataset:
    if not feature_seqs:
        raise ValueError("no feature sequences supplied")
    spec = feature_seqs[0].frame_spec
    sequences = []
    for features in feature_seqs:
        if features.frame_spec != spec:
            raise ValueError("feature sequences have mismatched frame specs")
        sequences.extend(windows_from_features(features, timesteps, stride))
    if not sequences:
        raise ValueError(
            f"no clip is long enough for a single {timesteps + 1}-frame window"
        )
    return Dataset(sequences, spec, timesteps)


def build_dataset(
    clips: list[AudioClip], spec: FrameSpec, timesteps: int, stride: int | None = None
) -> Dataset:
    """Featurize clips and window them into training sequences."""
    usable = []
    for clip in clips:
        if len(clip) >= (timesteps + 1) * spec.frame_size:
            usable.append(featurize_clip(clip, spec))
    if not usable:
        raise ValueError(
            f"no clip is long enough for a single {timesteps + 1}-frame window"
        )
    return dataset_from_features(usable, timesteps, stride)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def _step_input(model: Model, inputs: np.ndarray, t: int) -> np.ndarray:
    if model.config.variant is Variant.CONV2D:
        return stack_frame_window(inputs, t, model.config.k_frames)
    return inputs[t]


def sequence_loss(
    model: Model,
    sequence: tuple[np.ndarray, np.ndarray],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    l2_lambda: float = 0.0,
) -> tuple[Tensor, float]:
    """Teacher-forced loss over one sequence.

    Feeds the true input at every step; returns (loss node, data MSE value)
    where the loss is the mean per-step MSE plus, in train mode, the L2
    penalty over the dense-layer weight matrices.
    """
    inputs, targets = sequence
    dtype = model.config.np_dtype
    total = None
    for t in range(inputs.shape[0]):
        pred = model.step(_step_input(model, inputs, t), mode, rng)
        step_loss = ad.mse_loss(pred, Tensor(targets[t].astype(dtype)))
        total = step_loss if total is None else total + step_loss
    data = ad.scale(total, 1.0 / inputs.shape[0])
    data_value = float(data.data)
    if mode == "train" and l2_lambda > 0.0:
        return data + ad.l2_penalty(dense_weight_tensors(model), l2_lambda), data_value
    return data, data_value


def dense_weight_tensors(model: Model) -> list[Tensor]:
    """The weight matrices the L2 penalty applies to (fully connected layers
    only: frontends, heads, and the output projection; no biases)."""
    return [p for name, p in sorted(model.params.items()) if name.endswith(".W")]


def rmsprop_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    accumulators: dict[str, np.ndarray],
    config: TrainingConfig,
) -> tuple[dict[str, Tensor], dict[str, np.ndarray]]:
    """s <- rho s + (1-rho) g^2;  w <- w - lr g / (sqrt(s) + eps), in place."""
    rho = config.rmsprop_decay
    eps = config.rmsprop_epsilon
    lr = config.learning_rate
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({name})")
        s = accumulators[name]
        s *= rho
        s += (1.0 - rho) * g * g
        p.data -= lr * g / (np.sqrt(s) + eps)
    return params, accumulators


def _clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> None:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if norm > threshold:
        factor = threshold / norm
        for g in grads.values():
            g *= factor


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    rows: list[tuple[int, float, float, float]]
    checkpoint_paths: list
    accumulators: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    stopped_epoch: int = 0


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """The dedicated RNG for one epoch, derived from the master seed so a
    resumed run regenerates exactly the same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))


def format_loss_row(epoch: int, data_loss: float, total_loss: float, seconds: float) -> str:
    return f"{epoch},{data_loss:.10g},{total_loss:.10g},{seconds:.3f}"


def train(
    model: Model,
    dataset: Dataset,
    config: TrainingConfig,
    *,
    loss_csv=None,
    checkpoint_dir=None,
    clock=time.perf_counter,
    start_epoch: int = 0,
    accumulators: dict[str, np.ndarray] | None = None,
    sample_rate: int | None = None,
) -> TrainResult:
    """Run the training protocol, logging one CSV row per epoch and writing
    checkpoints at the configured epochs plus the final one.

    ``clock=None`` zeroes the seconds column for byte-reproducible logs.
    ``start_epoch``/``accumulators`` resume from a loaded checkpoint.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    model.dropout_lstm = config.dropout_lstm
    model.dropout_dense = config.dropout_dense
    if accumulators is None:
        accumulators = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    rate = sample_rate if sample_rate is not None else dataset.frame_spec.sample_rate

    csv_fh = open(loss_csv, "w" if start_epoch == 0 else "a") if loss_csv else None
    rows: list[tuple[int, float, float, float]] = []
    checkpoint_paths = []
    last_saved = None
    try:
        if csv_fh and csv_fh.tell() == 0:
            csv_fh.write(LOSS_CSV_HEADER + "\n")
            csv_fh.flush()

        def save(epoch: int) -> None:
            nonlocal last_saved
            if checkpoint_dir is None:
                return
            ckpt = Checkpoint(
                arch=model.config,
                train_config=config,
                params={name: p.data for name, p in model.params.items()},
                accumulators=accumulators,
                epoch=epoch,
                sample_rate=rate,
            )
            path = f"{checkpoint_dir}/checkpoint_{epoch:05d}.fgn"
            save_checkpoint(path, ckpt)
            checkpoint_paths.append(path)
            last_saved = epoch

        t0 = clock() if clock else 0.0
        epoch = start_epoch
        for epoch in range(start_epoch + 1, config.epochs + 1):
            rng = epoch_rng(config.seed, epoch)
            order = rng.permutation(len(dataset))
            data_sum = 0.0
            total_sum = 0.0
            for batch_index in range(0, len(order), config.batch_size):
                batch = order[batch_index : batch_index + config.batch_size]
                model.zero_grads()
                for seq_index in batch:
                    model.reset_state()
                    loss, data_value = sequence_loss(
                        model, dataset.sequences[seq_index], "train", rng, config.l2_lambda
                    )
                    total_value = float(loss.data)
                    if not np.isfinite(total_value):
                        raise FloatingPointError(
                            f"non-finite loss at epoch {epoch}, "
                            f"batch {batch_index // config.batch_size}, sequence {seq_index}"
                        )
                    ad.backward(ad.scale(loss, 1.0 / len(batch)))
                    data_sum += data_value
                    total_sum += total_value
                grads = ad.gradients(model.params)
                if config.grad_clip is not None:
                    _clip_gradients(grads, config.grad_clip)
                rmsprop_step(model.params, grads, accumulators, config)

            mean_data = data_sum / len(dataset)
            mean_total = total_sum / len(dataset)
            seconds = (clock() - t0) if clock else 0.0
            rows.append((epoch, mean_data, mean_total, seconds))
            if csv_fh:
                csv_fh.write(format_loss_row(epoch, mean_data, mean_total, seconds) + "\n")
                csv_fh.flush()
            if epoch in config.checkpoint_epochs:
                save(epoch)
            if config.target_data_loss is not None and mean_data < config.target_data_loss:
                break

        if last_saved != epoch:
            save(epoch)
        return TrainResult(rows, checkpoint_paths, accumulators, stopped_epoch=epoch)
    finally:
        if csv_fh:
            csv_fh.close()


# ---------------------------------------------------------------------------
# Binary serialization (checkpoints and feature files)
# ---------------------------------------------------------------------------


def _pack_tensor(buf: bytearray, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf += struct.pack("<H", len(encoded))
    buf += encoded
    buf += struct.pack("<B", arr.ndim)
    buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
    buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError(f"{self.label}: truncated file")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple[str, np.ndarray]:
        (name_len,) = self.unpack("<H")
        name = self.take(name_len).decode("utf-8")
        (rank,) = self.unpack("<B")
        shape = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data.copy()


def _header_lines(pairs: dict[str, str]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in pairs.items()).encode("utf-8")


def _parse_header(blob: bytes, label: str) -> dict[str, str]:
    pairs = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"{label}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        pairs[key] = value
    return pairs


@dataclass
class Checkpoint:
    arch: ArchitectureConfig
    train_config: TrainingConfig
    params: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray]
    epoch: int
    sample_rate: int
    rng_words: tuple[int, int, int, int] | None = None

    def __post_init__(self) -> None:
        # the per-epoch RNG derivation makes the master seed the entire
        # recoverable stream state at an epoch boundary
        if self.rng_words is None:
            self.rng_words = (self.train_config.seed, 0, 0, 0)


def _config_header(ckpt: Checkpoint) -> dict[str, str]:
    a, t = ckpt.arch, ckpt.train_config
    return {
        "variant": a.variant.value,
        "frame_size": str(a.frame_size),
        "hidden_size": str(a.hidden_size),
        "conv_filters": str(a.conv_filters),
        "conv_kernel": str(a.conv_kernel),
        "pool": str(a.pool),
        "k_frames": str(a.k_frames),
        "arch_seed": str(a.seed),
        "dtype": a.dtype,
        "sample_rate": str(ckpt.sample_rate),
        "timesteps": str(t.timesteps),
        "learning_rate": repr(t.learning_rate),
        "rmsprop_decay": repr(t.rmsprop_decay),
        "rmsprop_epsilon": repr(t.rmsprop_epsilon),
        "dropout_lstm": repr(t.dropout_lstm),
        "dropout_dense": repr(t.dropout_dense),
        "l2_lambda": repr(t.l2_lambda),
        "epochs": str(t.epochs),
        "batch_size": str(t.batch_size),
        "checkpoint_epochs": ",".join(str(e) for e in t.checkpoint_epochs),
        "train_seed": str(t.seed),
    }


def _configs_from_header(pairs: dict[str, str]) -> tuple[ArchitectureConfig, TrainingConfig, int]:
    try:
        arch = ArchitectureConfig(
            variant=pairs["variant"],
            frame_size=int(pairs["frame_size"]),
            hidden_size=int(pairs["hidden_size"]),
            conv_filters=int(pairs["conv_filters"]),
            conv_kernel=int(pairs["conv_kernel"]),
            pool=int(pairs["pool"]),
            k_frames=int(pairs["k_frames"]),
            seed=int(pairs["arch_seed"]),
            dtype=pairs["dtype"],
        )
        epochs_list = pairs["checkpoint_epochs"]
        tcfg = TrainingConfig(
            timesteps=int(pairs["timesteps"]),
            learning_rate=float(pairs["learning_rate"]),
            rmsprop_decay=float(pairs["rmsprop_decay"]),
            rmsprop_epsilon=float(pairs["rmsprop_epsilon"]),
            dropout_lstm=float(pairs["dropout_lstm"]),
            dropout_dense=float(pairs["dropout_dense"]),
            l2_lambda=float(pairs["l2_lambda"]),
            epochs=int(pairs["epochs"]),
            batch_size=int(pairs["batch_size"]),
            checkpoint_epochs=tuple(int(e) for e in epochs_list.split(",")) if epochs_list else (),
            seed=int(pairs["train_seed"]),
        )
        return arch, tcfg, int(pairs["sample_rate"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint header is missing key {exc}") from None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    header = _header_lines(_config_header(ckpt))
    buf += struct.pack("<I", len(header))
    buf += header
    for section in (ckpt.params, ckpt.accumulators):
        buf += struct.pack("<I", len(section))
        for name in sorted(section):
            _pack_tensor(buf, name, section[name])
    buf += struct.pack("<Q", ckpt.epoch)
    buf += struct.pack("<4Q", *ckpt.rng_words)
    with open(path, "wb") as fh:
        fh.write(buf)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (header_len,) = reader.unpack("<I")
    pairs = _parse_header(reader.take(header_len), str(path))
    arch, tcfg, sample_rate = _configs_from_header(pairs)

    sections = []
    for _ in range(2):
        (count,) = reader.unpack("<I")
        sections.append(dict(reader.tensor() for _ in range(count)))
    params, accumulators = sections
    (epoch,) = reader.unpack("<Q")
    rng_words = reader.unpack("<4Q")

    expected = set(parameter_names(arch))
    if set(params) != expected or set(accumulators) != expected:
        raise CheckpointError(
            f"{path}: tensor names do not match the {arch.variant.value} architecture "
            f"(got {len(params)} params, expected {len(expected)})"
        )
    return Checkpoint(arch, tcfg, params, accumulators, epoch, sample_rate, rng_words)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[Model, dict[str, np.ndarray]]:
    """Rebuild the model with the stored parameters; returns the model and
    the RMSProp accumulators (both cast to the architecture dtype)."""
    model = build_model(ckpt.arch)
    dtype = ckpt.arch.np_dtype
    for name, p in model.params.items():
        stored = ckpt.params[name].astype(dtype)
        if stored.shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name} has shape {stored.shape}, expected {p.data.shape}"
            )
        p.data = stored
    model.dropout_lstm = ckpt.train_config.dropout_lstm
    model.dropout_dense = ckpt.train_config.dropout_dense
    accumulators = {name: arr.astype(dtype) for name, arr in ckpt.accumulators.items()}
    return model, accumulators


def save_features(path, features: FeatureSequence) -> None:
    """Write a feature sequence with the checkpoint tensor-block layout."""
    buf = bytearray()
    buf += FEATURES_MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    header = _header_lines(
        {
            "frame_size": str(features.frame_spec.frame_size),
            "sample_rate": str(features.frame_spec.sample_rate),
        }
    )
    buf += struct.pack("<I", len(header))
    buf += header
    buf += struct.pack("<I", 1)
    _pack_tensor(buf, "vectors", features.vectors)
    with open(path, "wb") as fh:
        fh.write(buf)


def load_features(path) -> FeatureSequence:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    magic = reader.take(4)
    if magic != FEATURES_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (header_len,) = reader.unpack("<I")
    pairs = _parse_header(reader.take(header_len), str(path))
    (count,) = reader.unpack("<I")
    if count != 1:
        raise CheckpointError(f"{path}: expected one tensor, found {count}")
    name, vectors = reader.tensor()
    if name != "vectors" or vectors.ndim != 2:
        raise CheckpointError(f"{path}: unexpected tensor {name!r} of rank {vectors.ndim}")
    spec = FrameSpec(int(pairs["frame_size"]), int(pairs["sample_rate"]))
    return FeatureSequence(spec, vectors.astype(np.float64))
