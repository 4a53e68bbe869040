"""Self-supervised pre-training loop, frozen feature extraction, checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..audio import TARGET_RATE, AudioClip, DatasetManifest, ManifestEntry, SadConfig, preprocess, read_wav
from ..errors import CorruptCheckpoint, SignatureMismatch
from ..features import FeatureMatrix
from ..nn.optim import AdamState, adam_step, collect_grads, zero_grads
from ..nn.tensor import Tensor, no_grad
from .config import SSLConfig
from .losses import anneal_tau, batch_average_probs, contrastive_loss, diversity_loss, feature_penalty, total_loss
from .model import SSLParams, encode, init_ssl_params, ssl_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepRecord:
    step: int
    tau: float
    loss: float
    contrastive: float
    diversity: float
    penalty: float


def load_waveforms(manifest: DatasetManifest, sad: SadConfig | None = SadConfig()) -> list[np.ndarray]:
    return [preprocess(read_wav(e.path), sad, TARGET_RATE).samples for e in manifest]


def _crop_batch(waves: list[np.ndarray], idx, max_samples: int, rng: np.random.Generator, dtype) -> np.ndarray:
    """Random crops of equal length (shortest clip in the batch, capped at ``max_samples``)."""
    n = min(min(len(waves[i]) for i in idx), max_samples)
    out = np.empty((len(idx), n), dtype=dtype)
    for row, i in enumerate(idx):
        start = int(rng.integers(0, len(waves[i]) - n + 1))
        out[row] = waves[i][start : start + n]
    return out


def ssl_pretrain(
    manifest: DatasetManifest | list[np.ndarray],
    cfg: SSLConfig,
    seed: int = 0,
    steps: int | None = None,
    init: SSLParams | None = None,
) -> tuple[SSLParams, list[StepRecord]]:
    """Adam on L_m + alpha L_d + beta L_f with per-step temperature annealing.

    ``steps`` defaults to ``cfg.pretrain_epochs`` passes over the data.
    Accepts a manifest or a list of already pre-processed waveforms.
    """
    waves = load_waveforms(manifest) if isinstance(manifest, DatasetManifest) else list(manifest)
    if not waves:
        raise ValueError("ssl_pretrain needs at least one clip")
    init_seq, data_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    params = init or init_ssl_params(cfg, np.random.default_rng(init_seq))
    dtype = params.tensors["proj.W"].dtype
    data_rng = np.random.default_rng(data_seq)
    noise_rng = np.random.default_rng(noise_seq)
    per_epoch = math.ceil(len(waves) / cfg.batch_size)
    steps = cfg.pretrain_epochs * per_epoch if steps is None else steps
    state = AdamState(lr=cfg.lr)
    history: list[StepRecord] = []
    order = np.array([], dtype=np.int64)
    for step in range(steps):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, data_rng.permutation(len(waves))])
        idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
        x = _crop_batch(waves, idx, cfg.max_samples, data_rng, dtype)
        tau = anneal_tau(params.iteration, cfg)

        zero_grads(params.tensors)
        out = ssl_forward(x, params, tau, noise_rng)
        l_m = contrastive_loss(out.context, out.quant, out.mask, cfg, noise_rng)
        l_d = diversity_loss(batch_average_probs(out.quant))
        l_f = feature_penalty(out.z)
        loss = total_loss(l_m, l_d, l_f, cfg)
        loss.backward()
        adam_step(params.tensors, collect_grads(params.tensors), state)
        params.iteration += 1
        rec = StepRecord(step, tau, float(loss.data), float(l_m.data), float(l_d.data), float(l_f.data))
        history.append(rec)
        log.debug("%s", rec)
    zero_grads(params.tensors)
    return params, history


def extract_features(params: SSLParams, clip: AudioClip | np.ndarray) -> FeatureMatrix:
    """Frozen, unmasked contextual features; one row per encoder frame."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    dtype = params.tensors["proj.W"].dtype
    with no_grad():
        c = encode(np.asarray(x, dtype=dtype)[None], params)
    hop_ms = 1000.0 * params.cfg.total_stride / TARGET_RATE
    return FeatureMatrix(c.data[0], hop_ms, "ssl")


class SSLFeaturizer:
    """Manifest entry -> frozen SSL features, with the same pre-processing as MFCC."""

    def __init__(self, params: SSLParams, sad: SadConfig | None = SadConfig()):
        self.params = params
        self.sad = sad
        self.kind = "ssl"
        self.dim = params.cfg.dim
        self._cache: dict[Path, FeatureMatrix] = {}

    def __call__(self, entry: ManifestEntry) -> FeatureMatrix:
        key = Path(entry.path)
        if key not in self._cache:
            clip = preprocess(read_wav(key), self.sad, TARGET_RATE)
            self._cache[key] = extract_features(self.params, clip)
        return self._cache[key]


def save_ssl_checkpoint(params: SSLParams, path: str | Path) -> None:
    meta = {"tag": "ssl", "config": params.cfg.to_dict(), "iteration": params.iteration}
    checkpoint.write_container(path, meta, {k: v.data for k, v in params.tensors.items()})


def load_ssl_checkpoint(path: str | Path) -> SSLParams:
    meta, arrays = checkpoint.read_container(path)
    if meta.get("tag") != "ssl":
        raise SignatureMismatch(f"{path}: not an SSL checkpoint (tag {meta.get('tag')!r})")
    try:
        cfg = SSLConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: bad config record") from exc
    expected = init_ssl_params(cfg, 0).tensors
    if {k: v.shape for k, v in expected.items()} != {k: v.shape for k, v in arrays.items()}:
        raise CorruptCheckpoint(f"{path}: tensors do not match the stored configuration")
    tensors = {k: Tensor(arrays[k], requires_grad=True) for k in expected}
    return SSLParams(cfg, tensors, int(meta.get("iteration", 0)))
