"""The vanilla LSTM cell and six sequence-model variants built on it.

Every variant consumes one packed frequency vector per timestep (the 2-D
convolutional variant consumes a window of K consecutive vectors) and emits
the prediction of the next frame's packed vector.  All variants share a
linear output projection from the hidden state back to the feature width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from freqgen import autodiff as ad
from freqgen.autodiff import Tensor

GATES = ("i", "f", "o", "c")


class Variant(str, Enum):
    BASE = "base"
    FC = "fc"
    CONV1D = "conv1d"
    CONV2D = "conv2d"
    STACKED = "stacked"
    BILINEAR = "bilinear"


@dataclass
class ArchitectureConfig:
    """One of the six model variants with its structural hyperparameters.

    ``k_frames`` is only meaningful for the conv2d variant (frames per
    timestep); it defaults to 3 there, covering 0.75 s of audio at the
    0.25 s frame length used throughout.
    """

    variant: Variant
    frame_size: int
    hidden_size: int
    conv_filters: int = 12
    conv_kernel: int = 3
    pool: int = 2
    k_frames: int | None = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.variant = Variant(self.variant)
        if self.frame_size < 2:
            raise ValueError(f"frame_size must be >= 2, got {self.frame_size}")
        if self.hidden_size < 1:
            raise ValueError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.k_frames is None:
            self.k_frames = 3 if self.variant is Variant.CONV2D else 1
        if self.variant is Variant.CONV2D:
            if self.k_frames < 1:
                raise ValueError("conv2d variant needs k_frames >= 1")
        elif self.k_frames != 1:
            raise ValueError(f"{self.variant.value} variant uses k_frames == 1")

    @property
    def dim(self) -> int:
        """Packed vector width D = 2 * frame_size."""
        return 2 * self.frame_size

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def lstm_cell_step(
    params,
    x: Tensor,
    h: Tensor,
    c: Tensor,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    p_drop: float = 0.0,
):
    """One step of the vanilla LSTM.

    i, f, o = sigmoid(W_g x + U_g h + b_g), cand = tanh(W_c x + U_c h + b_c),
    c' = f*c + i*cand, h' = o*tanh(c').  In train mode, one dropout mask is
    applied to x and one to h before the affine maps (shared by all gates,
    redrawn every step).  ``params`` maps "W_g"/"U_g"/"b_g" to tensors.
    """
    xd = ad.dropout(x, p_drop, mode, rng)
    hd = ad.dropout(h, p_drop, mode, rng)
    pre = {g: params[f"W_{g}"] @ xd + params[f"U_{g}"] @ hd + params[f"b_{g}"] for g in GATES}
    gate_i = ad.sigmoid(pre["i"])
    gate_f = ad.sigmoid(pre["f"])
    gate_o = ad.sigmoid(pre["o"])
    cand = ad.tanh(pre["c"])
    c_new = gate_f * c + gate_i * cand
    h_new = gate_o * ad.tanh(c_new)
    return h_new, c_new


def dense(w: Tensor, b: Tensor, x: Tensor, kind: str = "none") -> Tensor:
    """activation(W x + b); kind "none" gives the linear output projection."""
    return ad.activation(kind, w @ x + b)


def stack_frame_window(vectors: np.ndarray, t: int, k: int) -> np.ndarray:
    """Concatenate frames t-k+1 .. t into one flat k*D input; positions
    before the start of the sequence are zero-padded."""
    d = vectors.shape[1]
    out = np.zeros(k * d, dtype=vectors.dtype)
    for j in range(k):
        idx = t - (k - 1) + j
        if idx >= 0:
            out[j * d : (j + 1) * d] = vectors[idx]
    return out


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _conv1d_width(cfg: ArchitectureConfig) -> int:
    length = cfg.dim - cfg.conv_kernel + 1
    return cfg.conv_filters * (length // cfg.pool)


def _conv2d_geometry(cfg: ArchitectureConfig):
    """Post-conv and post-pool extents for the K x n two-channel image.

    The kernel height and pool windows are clamped to the available extent:
    with the default K=3 and a 3x3 kernel the conv output is one row tall,
    so pooling acts along width only.
    """
    kh = min(cfg.conv_kernel, cfg.k_frames)
    kw = min(cfg.conv_kernel, cfg.frame_size)
    oh = cfg.k_frames - kh + 1
    ow = cfg.frame_size - kw + 1
    ph, pw = min(cfg.pool, oh), min(cfg.pool, ow)
    return kh, kw, (ph, pw), oh // ph, ow // pw


def _conv2d_width(cfg: ArchitectureConfig) -> int:
    _, _, _, rows, cols = _conv2d_geometry(cfg)
    return cfg.conv_filters * rows * cols


def _lstm_input_width(cfg: ArchitectureConfig) -> int:
    if cfg.variant in (Variant.BASE, Variant.STACKED):
        return cfg.dim
    if cfg.variant in (Variant.FC, Variant.BILINEAR):
        return cfg.hidden_size
    if cfg.variant is Variant.CONV1D:
        return _conv1d_width(cfg)
    return _conv2d_width(cfg)


def _lstm_param_count(d_in: int, h: int) -> int:
    return 4 * (h * d_in + h * h + h)


def expected_parameter_count(cfg: ArchitectureConfig) -> int:
    """Analytic parameter total for the variant; the tests verify it against
    the summed tensor sizes of a built model."""
    d, h = cfg.dim, cfg.hidden_size
    proj = d * h + d
    if cfg.variant is Variant.BASE:
        return _lstm_param_count(d, h) + proj
    if cfg.variant is Variant.FC:
        return (h * d + h) + _lstm_param_count(h, h) + proj
    if cfg.variant is Variant.CONV1D:
        conv = cfg.conv_filters * 1 * cfg.conv_kernel + cfg.conv_filters
        return conv + _lstm_param_count(_conv1d_width(cfg), h) + proj
    if cfg.variant is Variant.CONV2D:
        kh, kw, _, _, _ = _conv2d_geometry(cfg)
        conv = cfg.conv_filters * 2 * kh * kw + cfg.conv_filters
        return conv + _lstm_param_count(_conv2d_width(cfg), h) + proj
    if cfg.variant is Variant.STACKED:
        return _lstm_param_count(d, h) + _lstm_param_count(h, h) + proj
    # bilinear: shared frontend, two LSTMs, dense head back to D
    return (h * d + h) + 2 * _lstm_param_count(h, h) + (d * h + d)


def parameter_names(cfg: ArchitectureConfig) -> tuple[str, ...]:
    """Tensor names of the variant, in creation order, without allocating."""
    lstm = lambda prefix: [f"{prefix}.{k}_{g}" for g in GATES for k in ("W", "U", "b")]
    dense_ = lambda prefix: [f"{prefix}.W", f"{prefix}.b"]
    conv = ["conv.kernels", "conv.bias"]
    layout = {
        Variant.BASE: lstm("lstm") + dense_("proj"),
        Variant.FC: dense_("frontend") + lstm("lstm") + dense_("proj"),
        Variant.CONV1D: conv + lstm("lstm") + dense_("proj"),
        Variant.CONV2D: conv + lstm("lstm") + dense_("proj"),
        Variant.STACKED: lstm("lstm1") + lstm("lstm2") + dense_("proj"),
        Variant.BILINEAR: dense_("frontend") + lstm("lstm_a") + lstm("lstm_b") + dense_("head"),
    }
    return tuple(layout[cfg.variant])


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_lstm(params: dict, prefix: str, d_in: int, h: int, rng, dtype) -> None:
    for g in GATES:
        params[f"{prefix}.W_{g}"] = Tensor(
            _glorot(rng, (h, d_in), d_in, h, dtype), requires_grad=True, name=f"{prefix}.W_{g}"
        )
        params[f"{prefix}.U_{g}"] = Tensor(
            _glorot(rng, (h, h), h, h, dtype), requires_grad=True, name=f"{prefix}.U_{g}"
        )
        bias = np.full(h, 1.0, dtype=dtype) if g == "f" else np.zeros(h, dtype=dtype)
        params[f"{prefix}.b_{g}"] = Tensor(bias, requires_grad=True, name=f"{prefix}.b_{g}")


def _init_dense(params: dict, prefix: str, n_out: int, n_in: int, rng, dtype) -> None:
    params[f"{prefix}.W"] = Tensor(
        _glorot(rng, (n_out, n_in), n_in, n_out, dtype), requires_grad=True, name=f"{prefix}.W"
    )
    params[f"{prefix}.b"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True, name=f"{prefix}.b")


def init_params(cfg: ArchitectureConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameter tensors: weights ~ uniform(-L, L) with
    L = sqrt(6/(fan_in+fan_out)), biases zero except forget-gate bias 1.0."""
    dtype = cfg.np_dtype
    d, h = cfg.dim, cfg.hidden_size
    params: dict[str, Tensor] = {}

    if cfg.variant is Variant.BASE:
        _init_lstm(params, "lstm", d, h, rng, dtype)
        _init_dense(params, "proj", d, h, rng, dtype)
    elif cfg.variant is Variant.FC:
        _init_dense(params, "frontend", h, d, rng, dtype)
        _init_lstm(params, "lstm", h, h, rng, dtype)
        _init_dense(params, "proj", d, h, rng, dtype)
    elif cfg.variant is Variant.CONV1D:
        f, k = cfg.conv_filters, cfg.conv_kernel
        params["conv.kernels"] = Tensor(
            _glorot(rng, (f, 1, k), k, f * k, dtype), requires_grad=True, name="conv.kernels"
        )
        params["conv.bias"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True, name="conv.bias")
        _init_lstm(params, "lstm", _conv1d_width(cfg), h, rng, dtype)
        _init_dense(params, "proj", d, h, rng, dtype)
    elif cfg.variant is Variant.CONV2D:
        f = cfg.conv_filters
        kh, kw, _, _, _ = _conv2d_geometry(cfg)
        params["conv.kernels"] = Tensor(
            _glorot(rng, (f, 2, kh, kw), 2 * kh * kw, f * kh * kw, dtype),
            requires_grad=True,
            name="conv.kernels",
        )
        params["conv.bias"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True, name="conv.bias")
        _init_lstm(params, "lstm", _conv2d_width(cfg), h, rng, dtype)
        _init_dense(params, "proj", d, h, rng, dtype)
    elif cfg.variant is Variant.STACKED:
        _init_lstm(params, "lstm1", d, h, rng, dtype)
        _init_lstm(params, "lstm2", h, h, rng, dtype)
        _init_dense(params, "proj", d, h, rng, dtype)
    else:  # bilinear
        _init_dense(params, "frontend", h, d, rng, dtype)
        _init_lstm(params, "lstm_a", h, h, rng, dtype)
        _init_lstm(params, "lstm_b", h, h, rng, dtype)
        _init_dense(params, "head", d, h, rng, dtype)

    return params


class Model:
    """An architecture variant with its parameters and recurrent state.

    Instances carry mutable state (h, c per LSTM plus, in train mode, the
    growing autodiff graph across a sequence); confine each instance to one
    thread at a time.
    """

    def __init__(
        self,
        config: ArchitectureConfig,
        params: dict[str, Tensor],
        dropout_lstm: float = 0.5,
        dropout_dense: float = 0.2,
    ):
        self.config = config
        self.params = params
        self.dropout_lstm = dropout_lstm
        self.dropout_dense = dropout_dense
        self._lstm_prefixes = self._find_lstm_prefixes()
        self.state: dict[str, tuple[Tensor, Tensor]] = {}
        self.reset_state()

    def _find_lstm_prefixes(self) -> tuple[str, ...]:
        prefixes = sorted({name.split(".")[0] for name in self.params if ".W_i" in name})
        return tuple(prefixes)

    @property
    def input_width(self) -> int:
        """Expected length of a step input: D, or K*D for the conv2d variant."""
        return self.config.dim * self.config.k_frames

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def reset_state(self) -> None:
        """Zero h and c for every LSTM in the model."""
        h = self.config.hidden_size
        dtype = self.config.np_dtype
        self.state = {
            prefix: (Tensor(np.zeros(h, dtype=dtype)), Tensor(np.zeros(h, dtype=dtype)))
            for prefix in self._lstm_prefixes
        }

    def zero_grads(self) -> None:
        ad.zero_grads(self.params)

    def _cell(self, prefix: str) -> dict[str, Tensor]:
        return {
            key: self.params[f"{prefix}.{key}"]
            for g in GATES
            for key in (f"W_{g}", f"U_{g}", f"b_{g}")
        }

    def _run_cell(self, prefix: str, x: Tensor, mode: str, rng) -> Tensor:
        h, c = self.state[prefix]
        h_new, c_new = lstm_cell_step(
            self._cell(prefix), x, h, c, mode=mode, rng=rng, p_drop=self.dropout_lstm
        )
        # h' = sigmoid(.) * tanh(.) can never leave [-1, 1]
        if np.abs(h_new.data).max(initial=0.0) > 1.0 + 1e-6:
            raise FloatingPointError(f"hidden state of {prefix} left [-1, 1]")
        if mode == "eval":
            self.state[prefix] = (h_new.detach(), c_new.detach())
        else:
            self.state[prefix] = (h_new, c_new)
        return h_new

    def _frontend(self, x: Tensor, mode: str, rng) -> Tensor:
        cfg = self.config
        variant = cfg.variant
        if variant in (Variant.BASE, Variant.STACKED):
            return x
        if variant in (Variant.FC, Variant.BILINEAR):
            out = dense(self.params["frontend.W"], self.params["frontend.b"], x, "relu")
            return ad.dropout(out, self.dropout_dense, mode, rng)
        if variant is Variant.CONV1D:
            image = ad.reshape(x, (1, cfg.dim))
            conv = ad.conv1d(image, self.params["conv.kernels"], self.params["conv.bias"])
            pooled = ad.maxpool(conv, (1, cfg.pool))
            return ad.reshape(pooled, (-1,))
        # conv2d: channel 0 holds the real halves, channel 1 the imaginary
        # halves of the K stacked frames
        n, k = cfg.frame_size, cfg.k_frames
        frames = x.data.reshape(k, 2, n)
        image = Tensor(np.ascontiguousarray(frames.transpose(1, 0, 2)))
        _, _, pool_window, _, _ = _conv2d_geometry(cfg)
        conv = ad.conv2d(image, self.params["conv.kernels"], self.params["conv.bias"])
        pooled = ad.maxpool(conv, pool_window)
        return ad.reshape(pooled, (-1,))

    def step(self, x: np.ndarray, mode: str = "eval", rng=None) -> Tensor:
        """One forward step; advances state and returns the D-vector
        prediction of the next frame (detached from the graph in eval mode)."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=self.config.np_dtype).reshape(-1)
        if x.shape[0] != self.input_width:
            raise ValueError(f"step input has length {x.shape[0]}, expected {self.input_width}")

        v = self._frontend(Tensor(x), mode, rng)
        variant = self.config.variant
        if variant is Variant.STACKED:
            h1 = self._run_cell("lstm1", v, mode, rng)
            top = self._run_cell("lstm2", h1, mode, rng)
            out = dense(self.params["proj.W"], self.params["proj.b"], top, "none")
        elif variant is Variant.BILINEAR:
            ha = self._run_cell("lstm_a", v, mode, rng)
            hb = self._run_cell("lstm_b", v, mode, rng)
            merged = ad.sum_merge(ha, hb)
            out = dense(self.params["head.W"], self.params["head.b"], merged, "none")
        else:
            top = self._run_cell("lstm", v, mode, rng)
            out = dense(self.params["proj.W"], self.params["proj.b"], top, "none")

        if out.shape != (self.config.dim,):
            raise AssertionError(f"step produced shape {out.shape}, expected ({self.config.dim},)")
        return out.detach() if mode == "eval" else out


def build_model(config: ArchitectureConfig) -> Model:
    """Construct a variant with freshly initialized parameters (seeded from
    the config)."""
    rng = np.random.default_rng(config.seed)
    return Model(config, init_params(config, rng))
