"""Feature encoder, Gumbel-softmax quantizer, time masking and context network.

Data flow for one training batch of raw waveforms X (B, L)::

    Z  = encoder(X)                 strided convs, each with LayerNorm + GELU
    Zn = LayerNorm(Z)
    q  = quantize(Zn)               targets for the contrastive task
    Zm = mask(Linear(Zn))           masked frames -> learned embedding
    C  = transformer(Zm)            depthwise-conv position mixing, pre-norm blocks
    c  = Linear(C)                  compared with q by cosine similarity
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch, TooShort
from ..nn import tensor as T
from ..nn.layers import Params, init_layer_norm, init_linear, init_transformer_block, layer_norm, linear, param, transformer_block
from ..nn.tensor import Tensor
from .config import SSLConfig


@dataclass
class SSLParams:
    cfg: SSLConfig
    tensors: Params
    iteration: int = 0


@dataclass
class QuantizerOutput:
    q: Tensor  # (B, T, q_dim)
    probs: Tensor  # (B, T, G, V) Gumbel-softmax probabilities
    hard_indices: np.ndarray  # (B, T, G)
    entries: Tensor  # (B, T, G * entry_dim), concatenated codebook vectors


def init_ssl_params(cfg: SSLConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> SSLParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p: Params = {}
    cin = 1
    for i, k in enumerate(cfg.conv_kernels):
        bound = 1.0 / np.sqrt(k * cin)
        p[f"fe.{i}.conv.W"] = param(rng.uniform(-bound, bound, (k, cin, cfg.conv_channels)), dtype)
        p[f"fe.{i}.conv.b"] = param(np.zeros(cfg.conv_channels), dtype)
        init_layer_norm(p, f"fe.{i}.ln", cfg.conv_channels, dtype)
        cin = cfg.conv_channels
    init_layer_norm(p, "fe.ln", cfg.conv_channels, dtype)
    init_linear(p, "proj", cfg.conv_channels, cfg.dim, rng, dtype)
    p["mask_emb"] = param(rng.uniform(0.0, 1.0, cfg.dim), dtype)
    bound = 1.0 / np.sqrt(cfg.pos_kernel)
    p["pos.W"] = param(rng.uniform(-bound, bound, (cfg.pos_kernel, cfg.dim)), dtype)
    p["pos.b"] = param(np.zeros(cfg.dim), dtype)
    for layer in range(cfg.layers):
        init_transformer_block(p, f"tf.{layer}", cfg.dim, cfg.ffn_dim, rng, dtype)
    init_layer_norm(p, "tf.ln", cfg.dim, dtype)
    init_linear(p, "final", cfg.dim, cfg.q_dim, rng, dtype)
    init_linear(p, "q.logits", cfg.conv_channels, cfg.G * cfg.V, rng, dtype)
    p["q.codebook"] = param(rng.uniform(0.0, 1.0, (cfg.G, cfg.V, cfg.entry_dim)), dtype)
    init_linear(p, "q.out", cfg.G * cfg.entry_dim, cfg.q_dim, rng, dtype)
    return SSLParams(cfg, p)


def feature_encoder_forward(x: Tensor | np.ndarray, params: SSLParams) -> Tensor:
    """Raw audio (B, L) or (L,) -> latent frames Z (B, T, C)."""
    cfg = params.cfg
    p = params.tensors
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=p["fe.0.conv.W"].dtype))
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if cfg.frames_for(x.shape[1]) < 1:
        raise TooShort(f"{x.shape[1]} samples is shorter than the {cfg.receptive_field}-sample receptive field")
    h = x.reshape(x.shape[0], x.shape[1], 1)
    for i, s in enumerate(cfg.conv_strides):
        h = T.conv1d(h, p[f"fe.{i}.conv.W"], p[f"fe.{i}.conv.b"], stride=s)
        h = T.gelu(layer_norm(p, f"fe.{i}.ln", h))
    return h


def gumbel_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    """n = -log(-log u), u ~ Uniform(0, 1), kept away from the endpoints."""
    tiny = np.finfo(np.float64).tiny
    u = np.clip(rng.random(shape), tiny, 1.0 - 1e-16)
    return (-np.log(-np.log(u))).astype(dtype)


def quantize(
    z: Tensor,
    params: SSLParams,
    tau: float,
    rng: np.random.Generator | None = None,
    hard: bool = True,
    noise: np.ndarray | None = None,
) -> QuantizerOutput:
    """Gumbel-softmax codebook selection, one entry per group, then a linear map.

    ``noise`` overrides the sampled Gumbel noise (shape (B, T, G, V)); pass
    zeros for a deterministic softmax. In hard mode the forward value uses
    the one-hot argmax while gradients follow the soft probabilities.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    cfg = params.cfg
    p = params.tensors
    B, steps, _ = z.shape
    G, V, E = cfg.G, cfg.V, cfg.entry_dim
    logits = linear(p, "q.logits", z).reshape(B, steps, G, V)
    if noise is None:
        if rng is None:
            raise ValueError("quantize needs a random generator or explicit noise")
        noise = gumbel_noise(rng, logits.shape, z.dtype)
    probs = T.softmax((logits + noise.astype(z.dtype)) * (1.0 / tau), axis=-1)
    idx = probs.data.argmax(axis=-1)
    weights = probs
    if hard:
        onehot = np.zeros_like(probs.data)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        weights = T.straight_through(onehot, probs)
    # (G, B*T, V) @ (G, V, E) -> (G, B*T, E)
    sel = weights.reshape(B * steps, G, V).transpose(1, 0, 2) @ p["q.codebook"]
    entries = sel.transpose(1, 0, 2).reshape(B, steps, G * E)
    q = linear(p, "q.out", entries)
    return QuantizerOutput(q, probs, idx, entries)


def sample_mask(n_frames: int, cfg: SSLConfig, rng: np.random.Generator, min_spans: int = 0) -> np.ndarray:
    """Boolean mask over frames: each start in [0, T - span] fires with ``mask_prob``.

    ``min_spans`` forces that many random starts when sampling produced fewer.
    """
    span = cfg.mask_span
    if n_frames < span:
        raise TooShort(f"{n_frames} frames is shorter than the mask span {span}")
    n_starts = n_frames - span + 1
    starts = np.flatnonzero(rng.random(n_starts) < cfg.mask_prob)
    if len(starts) < min_spans:
        starts = np.union1d(starts, rng.choice(n_starts, size=min(min_spans, n_starts), replace=False))
    mask = np.zeros(n_frames, dtype=bool)
    for s in starts:
        mask[s : s + span] = True
    return mask


def mask_time_steps(
    z: Tensor,
    cfg: SSLConfig,
    rng: np.random.Generator,
    mask_emb: Tensor,
    min_spans: int = 0,
) -> tuple[Tensor, np.ndarray]:
    """Replace sampled spans of (B, T, D) frames by ``mask_emb``; returns (masked, mask (B, T))."""
    B, steps, D = z.shape
    if mask_emb.shape != (D,):
        raise ShapeMismatch(f"mask embedding has shape {mask_emb.shape}, frames have dim {D}")
    mask = np.stack([sample_mask(steps, cfg, rng, min_spans) for _ in range(B)])
    if not mask.any():
        return z, mask
    m = mask[:, :, None].astype(z.dtype)
    return z * (1.0 - m) + mask_emb * m, mask


def context_network(h: Tensor, params: SSLParams) -> Tensor:
    """(B, T, D) -> contextual representation (B, T, D)."""
    p = params.tensors
    h = h + T.gelu(T.depthwise_conv1d(h, p["pos.W"], p["pos.b"]))
    for layer in range(params.cfg.layers):
        h = transformer_block(p, f"tf.{layer}", h, params.cfg.heads)
    return layer_norm(p, "tf.ln", h)


@dataclass
class ForwardOutput:
    z: Tensor
    quant: QuantizerOutput
    context: Tensor  # projected to q_dim
    mask: np.ndarray


def ssl_forward(
    x: np.ndarray,
    params: SSLParams,
    tau: float,
    rng: np.random.Generator,
    hard: bool = True,
    min_spans: int = 1,
) -> ForwardOutput:
    p = params.tensors
    z = feature_encoder_forward(x, params)
    zn = layer_norm(p, "fe.ln", z)
    quant = quantize(zn, params, tau, rng, hard)
    masked, mask = mask_time_steps(linear(p, "proj", zn), params.cfg, rng, p["mask_emb"], min_spans)
    c = linear(p, "final", context_network(masked, params))
    return ForwardOutput(z, quant, c, mask)


def encode(x: np.ndarray, params: SSLParams) -> Tensor:
    """Unmasked context representation C = g(f(X)), (B, T, dim)."""
    p = params.tensors
    zn = layer_norm(p, "fe.ln", feature_encoder_forward(x, params))
    return context_network(linear(p, "proj", zn), params)
