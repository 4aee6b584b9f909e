"""Reverse-mode automatic differentiation over dense numpy tensors.

Primitives execute eagerly and record their operands, so every op output
carries the recorded computation graph behind it (creation order is a
topological order).  ``backward`` walks that graph once in reverse, summing
contributions where paths merge.  Arrays are float64 for verification work
and may be float32 for training throughput; any primitive that produces a
NaN/Inf aborts immediately, naming the offending node.
"""

from __future__ import annotations

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus the bookkeeping for reverse-mode differentiation.

    Leaf tensors (inputs, parameters) have no parents; parameters are leaves
    with ``requires_grad=True`` whose ``grad`` is filled by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(data)
        if data.dtype not in _ALLOWED_DTYPES:
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A leaf view of the same values, cut off from the recorded graph."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = self.name or self._op or "leaf"
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # graph-building operators
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by node '{op}'")


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    _ensure_finite(op, data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts a vector right operand ([p,q] @ [q])."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ValueError(f"matmul expects [p,q] @ [q,r] or [p,q] @ [q], got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    if b.data.ndim == 1:
        def backward(g):
            return np.outer(g, b.data), a.data.T @ g
    else:
        def backward(g):
            return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add requires equal shapes, got {a.shape} + {b.shape}")
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


# Elementwise sum with gradients flowing unchanged to both operands; the
# merge point of the two parallel LSTMs in the bilinear architecture.
sum_merge = add


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard requires equal shapes, got {a.shape} * {b.shape}")
    return _node(a.data * b.data, "hadamard", (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    ez = np.exp(-np.abs(v))  # never overflows
    out = np.where(v >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return _node(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)
    # derivative at exactly 0 is defined as 0
    return _node(out, "relu", (x,), lambda g: (g * (x.data > 0),))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "none": lambda x: x}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    orig = x.shape
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(orig),))


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""
    x = _as_tensor(x)
    return _node(
        np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,),
        lambda g: (np.ones_like(x.data) * g,),
    )


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1: [C_in, L] -> [C_out, L - k + 1]."""
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    c_in, length = x.shape
    c_out, c_in_k, k = kernels.shape
    if c_in_k != c_in:
        raise ValueError(f"kernel expects {c_in_k} input channels, input has {c_in}")
    if k > length:
        raise ValueError(f"kernel width {k} exceeds input length {length}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)  # [C_in, L', k]
    out = np.einsum("oik,ilk->ol", kernels.data, windows) + bias.data[:, None]

    def backward(g):
        dk = np.einsum("ol,ilk->oik", g, windows)
        db = g.sum(axis=1)
        dx = np.zeros_like(x.data)
        for m in range(k):
            dx[:, m : m + g.shape[1]] += np.einsum("ol,oi->il", g, kernels.data[:, :, m])
        return dx, dk, db

    return _node(out, "conv1d", (x, kernels, bias), backward)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 2-D cross-correlation, stride 1: [C_in, H, W] -> [C_out, H', W']."""
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    c_in, h, w = x.shape
    c_out, c_in_k, kh, kw = kernels.shape
    if c_in_k != c_in:
        raise ValueError(f"kernel expects {c_in_k} input channels, input has {c_in}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} exceeds input extent {h}x{w}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    out = np.einsum("oiuv,ihwuv->ohw", kernels.data, windows) + bias.data[:, None, None]

    def backward(g):
        dk = np.einsum("ohw,ihwuv->oiuv", g, windows)
        db = g.sum(axis=(1, 2))
        dx = np.zeros_like(x.data)
        gh, gw = g.shape[1], g.shape[2]
        for u in range(kh):
            for v in range(kw):
                dx[:, u : u + gh, v : v + gw] += np.einsum(
                    "ohw,oi->ihw", g, kernels.data[:, :, u, v]
                )
        return dx, dk, db

    return _node(out, "conv2d", (x, kernels, bias), backward)


def maxpool(x: Tensor, window: tuple[int, int]) -> Tensor:
    """Non-overlapping max pooling (stride = window) over the last two axes.

    Accepts [H, W] or [C, H, W]; trailing rows/columns that do not fill a
    window are dropped.  Gradient routes to the first occurrence of each
    window's maximum (row-major within the window).
    """
    x = _as_tensor(x)
    if x.data.ndim not in (2, 3):
        raise ValueError(f"maxpool expects rank 2 or 3 input, got shape {x.shape}")
    wh, ww = window
    squeeze = x.data.ndim == 2
    data = x.data[None] if squeeze else x.data
    c, h, w = data.shape
    if wh > h or ww > w or wh < 1 or ww < 1:
        raise ValueError(f"pool window {window} does not fit input {h}x{w}")
    oh, ow = h // wh, w // ww

    tiles = data[:, : oh * wh, : ow * ww].reshape(c, oh, wh, ow, ww)
    tiles = tiles.transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, wh * ww)
    argmax = tiles.argmax(axis=3)
    out = np.take_along_axis(tiles, argmax[..., None], axis=3)[..., 0]

    def backward(g):
        g3 = g[None] if squeeze else g
        flat = np.zeros((c, oh, ow, wh * ww), dtype=x.dtype)
        np.put_along_axis(flat, argmax[..., None], g3[..., None], axis=3)
        dx = np.zeros_like(data)
        dx[:, : oh * wh, : ow * ww] = (
            flat.reshape(c, oh, ow, wh, ww).transpose(0, 1, 3, 2, 4).reshape(c, oh * wh, ow * ww)
        )
        return (dx[0] if squeeze else dx,)

    return _node(out[0] if squeeze else out, "maxpool", (x,), backward)


def dropout(x: Tensor, p_drop: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: eval mode is a pure identity; in train mode each
    element is zeroed with probability p_drop and survivors are scaled by
    1/(1-p_drop).  The drawn mask is reused in the backward pass."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_tensor(x)
    if mode == "eval" or p_drop == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an RNG")
    keep = (rng.random(x.shape) >= p_drop) / (1.0 - p_drop)
    keep = keep.astype(x.dtype, copy=False)
    return _node(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    coeff = 2.0 / diff.size

    def backward(g):
        gd = g * coeff * diff
        return gd, -gd

    return _node(out, "mse_loss", (pred, target), backward)


def l2_penalty(params, lam: float) -> Tensor:
    """lam * sum over the given tensors of the sum of squared entries.

    Gradient contribution to each weight w is 2*lam*w (no 1/2 factor).
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    params = tuple(params)
    if not params or lam == 0.0:
        dtype = params[0].dtype if params else np.float64
        return Tensor(np.asarray(0.0, dtype=dtype))
    total = sum(float(np.sum(np.square(p.data, dtype=np.float64))) for p in params)
    out = np.asarray(lam * total, dtype=params[0].dtype)

    def backward(g):
        return tuple(g * 2.0 * lam * p.data for p in params)

    return _node(out, "l2_penalty", params, backward)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _reverse_topo(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every tensor that
    requires gradients and is reachable from the scalar loss node."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in _reverse_topo(loss):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.dtype, copy=True)
            else:
                parent.grad += g


def gradients(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients keyed by parameter name; parameters the loss never touched
    get zeros of the right shape."""
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


def grad_check(
    build_loss,
    params: dict[str, Tensor],
    max_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build_loss`` must rebuild the loss graph from the current parameter
    values deterministically (dropout in eval mode).  Per coordinate the
    step is h = 1e-5 * max(1, |w|) and the relative error denominator is
    max(|analytic|, |numeric|, 1e-8).  When the parameters hold more than
    ``max_coords`` scalars, a random subsample of that many is checked.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters ({name} is {p.dtype})")

    zero_grads(params)
    loss = build_loss()
    backward(loss)
    analytic = {name: g.copy() for name, g in gradients(params).items()}

    coords = [
        (name, idx)
        for name, p in params.items()
        for idx in range(p.data.size)
    ]
    if len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]

    worst = 0.0
    for name, idx in coords:
        flat = params[name].data.reshape(-1)
        orig = flat[idx]
        h = 1e-5 * max(1.0, abs(orig))
        flat[idx] = orig + h
        f_plus = float(build_loss().data)
        flat[idx] = orig - h
        f_minus = float(build_loss().data)
        flat[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
