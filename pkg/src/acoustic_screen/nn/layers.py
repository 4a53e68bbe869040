"""Composite layers built from the primitive ops.

Parameters live in flat ``dict[str, Tensor]`` maps keyed by stable dotted
names; layer functions take the map and a name prefix.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = dict[str, Tensor]


def param(data: np.ndarray, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def uniform_init(rng: np.random.Generator, shape, bound: float, dtype=np.float32) -> Tensor:
    return param(rng.uniform(-bound, bound, size=shape), dtype)


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng, dtype=np.float32) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{name}.W"] = uniform_init(rng, (fan_in, fan_out), bound, dtype)
    params[f"{name}.b"] = uniform_init(rng, (fan_out,), bound, dtype)


def linear(params: Params, name: str, x: Tensor) -> Tensor:
    return x @ params[f"{name}.W"] + params[f"{name}.b"]


def init_lstm(params: Params, name: str, n_in: int, hidden: int, rng, dtype=np.float32) -> None:
    bound = 1.0 / np.sqrt(hidden)
    params[f"{name}.W"] = uniform_init(rng, (n_in, 4 * hidden), bound, dtype)
    params[f"{name}.U"] = uniform_init(rng, (hidden, 4 * hidden), bound, dtype)
    params[f"{name}.b"] = uniform_init(rng, (4 * hidden,), bound, dtype)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, U: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step from primitives (gate order i, f, g, o)."""
    H = U.shape[0]
    a = x @ W + h @ U + b
    i = T.sigmoid(a[..., :H])
    f = T.sigmoid(a[..., H : 2 * H])
    g = T.tanh(a[..., 2 * H : 3 * H])
    o = T.sigmoid(a[..., 3 * H :])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def lstm_unrolled(x: Tensor, W: Tensor, U: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Reference unroll of ``lstm_cell`` over (B, T, F); slow, used to cross-check the fused op."""
    B, steps, _ = x.shape
    H = U.shape[0]
    h = T.Tensor(np.zeros((B, H), dtype=x.dtype))
    c = T.Tensor(np.zeros((B, H), dtype=x.dtype))
    outs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h, c = lstm_cell(x[:, t], h, c, W, U, b)
        outs[t] = h
    return T.stack(outs, axis=1)


def bilstm_layer(params: Params, name: str, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Forward and reverse LSTM passes concatenated per frame: (B, T, F) -> (B, T, 2H)."""
    fwd = T.lstm_sequence(x, params[f"{name}.fwd.W"], params[f"{name}.fwd.U"], params[f"{name}.fwd.b"], mask)
    bwd = T.lstm_sequence(
        x, params[f"{name}.bwd.W"], params[f"{name}.bwd.U"], params[f"{name}.bwd.b"], mask, reverse=True
    )
    return T.concat([fwd, bwd], axis=-1)


def feed_forward(params: Params, name: str, x: Tensor, activation=T.relu) -> Tensor:
    """Two linear maps with an activation in between."""
    return linear(params, f"{name}.1", activation(linear(params, f"{name}.0", x)))


def init_layer_norm(params: Params, name: str, dim: int, dtype=np.float32) -> None:
    params[f"{name}.g"] = param(np.ones(dim), dtype)
    params[f"{name}.b"] = param(np.zeros(dim), dtype)


def layer_norm(params: Params, name: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_attention(params: Params, name: str, dim: int, rng, dtype=np.float32) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", dim, dim, rng, dtype)


def multi_head_attention(params: Params, name: str, x: Tensor, n_heads: int) -> Tensor:
    """Scaled dot-product self-attention over (B, T, D)."""
    B, steps, D = x.shape
    hd = D // n_heads

    def heads(t: Tensor) -> Tensor:
        return t.reshape(B, steps, n_heads, hd).transpose(0, 2, 1, 3)

    q = heads(linear(params, f"{name}.q", x))
    k = heads(linear(params, f"{name}.k", x))
    v = heads(linear(params, f"{name}.v", x))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
    ctx = T.softmax(scores, axis=-1) @ v
    ctx = ctx.transpose(0, 2, 1, 3).reshape(B, steps, D)
    return linear(params, f"{name}.o", ctx)


def init_transformer_block(params: Params, name: str, dim: int, ffn_dim: int, rng, dtype=np.float32) -> None:
    init_layer_norm(params, f"{name}.ln1", dim, dtype)
    init_attention(params, f"{name}.attn", dim, rng, dtype)
    init_layer_norm(params, f"{name}.ln2", dim, dtype)
    init_linear(params, f"{name}.ffn.0", dim, ffn_dim, rng, dtype)
    init_linear(params, f"{name}.ffn.1", ffn_dim, dim, rng, dtype)


def transformer_block(params: Params, name: str, x: Tensor, n_heads: int) -> Tensor:
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)) with GELU."""
    x = x + multi_head_attention(params, f"{name}.attn", layer_norm(params, f"{name}.ln1", x), n_heads)
    return x + feed_forward(params, f"{name}.ffn", layer_norm(params, f"{name}.ln2", x), activation=T.gelu)
