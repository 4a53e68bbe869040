"""A small reverse-mode autodiff engine over numpy arrays.

Each op computes its forward value eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to input gradients.
``Tensor.backward`` walks the recorded graph in reverse topological order.

dtype follows the inputs: float64 graphs are used for gradient checking,
float32 for training.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFinite, ShapeMismatch

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"{op} produced a non-finite value")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient flows only where x > floor."""
    keep = x.data > floor
    return _make(np.where(keep, x.data, floor).astype(x.dtype), (x,), lambda g: (g * keep,), "clamp_min")


def xlogx(x: Tensor) -> Tensor:
    """x * log(x) with 0 * log(0) = 0; inputs must be non-negative."""
    pos = x.data > 0
    safe = np.where(pos, x.data, 1.0)
    out = np.where(pos, x.data * np.log(safe), 0.0).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * np.where(pos, np.log(safe) + 1.0, 0.0),), "xlogx")


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any finite z
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * keep,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    v = x.data
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _make(out, (x,), backward, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),), "log_softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or outside training."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# --------------------------------------------------------------------------
# linear algebra and shape ops
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatch("matmul needs at least 1-D operands")
    a2 = a.data if a.ndim > 1 else a.data[None, :]
    b2 = b.data if b.ndim > 1 else b.data[:, None]
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out2 = np.matmul(a2, b2)
    out = out2
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def backward(g):
        g2 = g.reshape(out2.shape)
        ga = unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(a.shape)
        gb = unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return _make(np.asarray(out), (x,), backward, "mean")


def l2_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as zero."""
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x.data / safe, 0.0),)

    return _make(n if keepdims else np.squeeze(n, axis=axis), (x,), backward, "l2_norm")


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard`` exactly; gradient routed unchanged to ``soft``."""
    if hard.shape != soft.shape:
        raise ShapeMismatch("straight_through: shapes differ")
    return _make(hard.astype(soft.dtype), (soft,), lambda g: (g,), "straight_through")


# --------------------------------------------------------------------------
# fused layers
# --------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch("layer_norm: gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1) -> Tensor:
    """Strided 1-D convolution, channels last.

    x: (B, T, C_in); w: (K, C_in, C_out); output (B, floor((T-K)/stride)+1, C_out).
    """
    B, T, cin = x.shape
    K, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeMismatch(f"conv1d: input has {cin} channels, kernel expects {wcin}")
    if T < K:
        raise ShapeMismatch(f"conv1d: length {T} shorter than kernel {K}")
    t_out = (T - K) // stride + 1
    cols = np.lib.stride_tricks.sliding_window_view(x.data, K, axis=1)[:, : stride * (t_out - 1) + 1 : stride]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B, t_out, K * cin)
    wr = w.data.reshape(K * cin, cout)
    out = cols @ wr
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        dw = (cols.reshape(-1, K * cin).T @ g.reshape(-1, cout)).reshape(K, cin, cout)
        dcols = (g @ wr.T).reshape(B, t_out, K, cin)
        dx = np.zeros_like(x.data)
        span = stride * (t_out - 1) + 1
        for k in range(K):
            dx[:, k : k + span : stride] += dcols[:, :, k]
        grads = (dx, dw)
        return grads if b is None else grads + (g.sum(axis=(0, 1)),)

    return _make(out, parents, backward, "conv1d")


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel convolution with odd kernel and 'same' zero padding.

    x: (B, T, C); w: (K, C); b: (C,).
    """
    B, T, C = x.shape
    K = w.shape[0]
    if K % 2 == 0 or w.shape[1] != C:
        raise ShapeMismatch("depthwise_conv1d: kernel must be (odd K, C)")
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros_like(x.data)
    for k in range(K):
        out += xp[:, k : k + T] * w.data[k]
    out += b.data

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w.data)
        for k in range(K):
            dxp[:, k : k + T] += g * w.data[k]
            dw[k] = (g * xp[:, k : k + T]).sum(axis=(0, 1))
        return dxp[:, pad : pad + T], dw, g.sum(axis=(0, 1))

    return _make(out, (x, w, b), backward, "depthwise_conv1d")


def lstm_sequence(
    x: Tensor,
    W: Tensor,
    U: Tensor,
    b: Tensor,
    mask: np.ndarray | None = None,
    reverse: bool = False,
) -> Tensor:
    """Run one LSTM direction over a padded batch with hand-written BPTT.

    x: (B, T, F); W: (F, 4H); U: (H, 4H); b: (4H,), gate order i, f, g, o.
    ``mask`` (B, T) marks valid frames. On invalid frames the state is
    carried through unchanged and the output is zero, so right-padding does
    not leak into the reverse direction. Initial state is zero.
    """
    B, T, F = x.shape
    H = U.shape[0]
    if W.shape != (F, 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"lstm: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    dt = x.dtype
    m = np.ones((B, T, 1), dtype=dt) if mask is None else mask.astype(dt)[:, :, None]
    steps = range(T - 1, -1, -1) if reverse else range(T)

    xw = x.data @ W.data + b.data
    hs = np.zeros((T + 1, B, H), dtype=dt)  # hs[k+1] is the state after the k-th processed step
    cs = np.zeros((T + 1, B, H), dtype=dt)
    gates = np.empty((T, B, 4 * H), dtype=dt)
    tcs = np.empty((T, B, H), dtype=dt)
    y = np.zeros((B, T, H), dtype=dt)
    for k, t in enumerate(steps):
        a = xw[:, t] + hs[k] @ U.data
        act = _sigmoid(a)
        act[:, 2 * H : 3 * H] = np.tanh(a[:, 2 * H : 3 * H])
        i, f, gg, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        cc = f * cs[k] + i * gg
        tc = np.tanh(cc)
        hc = o * tc
        mt = m[:, t]
        cs[k + 1] = mt * cc + (1 - mt) * cs[k]
        hs[k + 1] = mt * hc + (1 - mt) * hs[k]
        y[:, t] = mt * hc
        gates[k] = act
        tcs[k] = tc

    def backward(gy):
        i, f, gg, o = (gates[:, :, j * H : (j + 1) * H] for j in range(4))
        # per-step local derivatives, vectorized over time
        fac = np.concatenate([gg * i * (1 - i), cs[:-1] * f * (1 - f), i * (1 - gg * gg)], axis=2)
        do_fac = tcs * o * (1 - o)
        otc = o * (1 - tcs * tcs)
        dA = np.empty((T, B, 4 * H), dtype=dt)
        Ut = U.data.T
        dh = np.zeros((B, H), dtype=dt)
        dc = np.zeros((B, H), dtype=dt)
        for k in range(T - 1, -1, -1):
            t = steps[k]
            mt = m[:, t]
            dhc = mt * (dh + gy[:, t])
            dcc = mt * dc + dhc * otc[k]
            da = dA[k]
            da[:, : 3 * H] = fac[k] * np.tile(dcc, 3)
            da[:, 3 * H :] = dhc * do_fac[k]
            dh = (1 - mt) * dh + da @ Ut
            dc = (1 - mt) * dc + dcc * f[k]
        dxw = np.ascontiguousarray((dA[::-1] if reverse else dA).transpose(1, 0, 2))
        dU = hs[:-1].reshape(-1, H).T @ dA.reshape(-1, 4 * H)
        dx = dxw @ W.data.T
        dW = x.data.reshape(-1, F).T @ dxw.reshape(-1, 4 * H)
        return dx, dW, dU, dA.sum(axis=(0, 1))

    return _make(y, (x, W, U, b), backward, "lstm")


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

BCE_CLAMP = 1e-7


def bce_loss(p, y) -> np.ndarray:
    """Binary cross-entropy on probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def bce_with_logits(z: Tensor, y: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean BCE of ``sigmoid(z)`` against labels ``y``; d/dz = (p - y) / n when unweighted."""
    y = np.asarray(y, dtype=z.dtype).reshape(z.shape)
    zd = z.data
    # log(1 + e^z) and log(1 + e^-z), both computed stably
    softplus_pos = np.maximum(zd, 0) + np.log1p(np.exp(-np.abs(zd)))
    softplus_neg = softplus_pos - zd
    w_pos = pos_weight * y
    losses = w_pos * softplus_neg + (1 - y) * softplus_pos
    n = zd.size
    p = _sigmoid(zd)

    def backward(g):
        return (g * (w_pos * (p - 1.0) + (1 - y) * p) / n,)

    return _make(np.asarray(losses.mean(), dtype=z.dtype), (z,), backward, "bce")
