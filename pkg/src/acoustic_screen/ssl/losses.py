"""Contrastive, diversity and feature-penalty terms of the pre-training loss."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NoMaskedFrames, NonFinite, NotNormalized
from ..nn import tensor as T
from ..nn.tensor import Tensor
from .config import SSLConfig
from .model import QuantizerOutput

COS_EPS = 1e-8


def anneal_tau(iteration: int, cfg: SSLConfig) -> float:
    """Gumbel temperature after ``iteration`` updates: max(floor, start * factor**iteration)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return max(cfg.tau_floor, cfg.tau_start * cfg.tau_factor**iteration)


def sample_distractors(masked: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """For each masked frame, K' = min(K, n-1) other masked frames drawn without replacement.

    Returns an (n, 1 + K') index array whose first column is the frame itself.
    """
    n = len(masked)
    k = min(K, n - 1)
    cand = np.empty((n, 1 + k), dtype=np.int64)
    cand[:, 0] = masked
    for j in range(n):
        if k:
            others = rng.choice(n - 1, size=k, replace=False)
            others[others >= j] += 1
            cand[j, 1:] = masked[others]
    return cand


def contrastive_loss(
    c: Tensor,
    q: QuantizerOutput | Tensor,
    mask: np.ndarray,
    cfg: SSLConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Mean over masked frames of -log softmax(cos(c_t, candidates) / kappa)[true target].

    ``c`` and ``q`` are (B, T, D); ``mask`` is boolean (B, T). Distractors
    come only from other masked frames of the same utterance.
    """
    qt = q.q if isinstance(q, QuantizerOutput) else q
    mask = np.asarray(mask, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        raise NoMaskedFrames("contrastive loss needs at least one masked frame")
    terms = []
    for b in range(c.shape[0]):
        frames = np.flatnonzero(mask[b])
        if len(frames) == 0:
            continue
        cand = sample_distractors(frames, cfg.K, rng)
        ct = c[b][frames]  # (n, D)
        qs = qt[b][cand]  # (n, 1 + K', D)
        dots = (qs @ ct.reshape(len(frames), -1, 1)).reshape(len(frames), -1)
        norms = T.l2_norm(qs, axis=-1) * T.l2_norm(ct, axis=-1, keepdims=True)
        logits = dots / T.clamp_min(norms, COS_EPS) * (1.0 / cfg.kappa)
        terms.append(T.tsum(T.log_softmax(logits, axis=-1)[:, 0]))
    return T.concat([t.reshape(1) for t in terms]).sum() * (-1.0 / total)


def diversity_loss(probs: Tensor) -> Tensor:
    """(1 / GV) * sum_g sum_v p log p over the batch-averaged (G, V) probabilities."""
    G, V = probs.shape
    sums = probs.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        raise NotNormalized(f"group probabilities sum to {sums}, expected 1")
    return T.tsum(T.xlogx(probs)) * (1.0 / (G * V))


def batch_average_probs(quant: QuantizerOutput) -> Tensor:
    """Average the per-frame (G, V) probabilities over every frame in the batch."""
    p = quant.probs
    return T.mean(p.reshape(-1, p.shape[-2], p.shape[-1]), axis=0)


def feature_penalty(z: Tensor) -> Tensor:
    """Mean squared activation of the encoder output."""
    return T.mean(T.square(z))


def total_loss(l_m, l_d, l_f, cfg: SSLConfig):
    """L_m + alpha * L_d + beta * L_f for tensors or plain floats."""
    if isinstance(l_m, Tensor):
        out = l_m + l_d * cfg.alpha + l_f * cfg.beta
        value = float(out.data)
    else:
        out = value = l_m + cfg.alpha * l_d + cfg.beta * l_f
    if not math.isfinite(value):
        raise NonFinite("total loss is not finite")
    return out
