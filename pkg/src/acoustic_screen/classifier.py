"""BiLSTM encoder + feed-forward classifier, training, and parameter averaging.

The model maps a T x F feature sequence to one detection probability::

    standardize -> BiLSTM x2 (dropout between) -> masked mean-pool -> Linear+ReLU -> Linear -> sigmoid

``supervised_pretrain`` trains one model per task (breath, cough, speech),
averages their parameters elementwise and returns the average as an
initialization for per-task finetuning.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import checkpoint
from .audio import TASKS, DatasetManifest, ManifestEntry
from .errors import CorruptCheckpoint, DegenerateDataset, PipelineError, ShapeMismatch, SignatureMismatch
from .evaluation.metrics import auc_from_arrays
from .features import FeatureMatrix, MaskConfig, spec_augment
from .nn import tensor as T
from .nn.layers import bilstm_layer, feed_forward, init_linear, init_lstm
from .nn.optim import AdamState, adam_step, clip_grad_norm, collect_grads, zero_grads
from .nn.tensor import Tensor, bce_loss, no_grad
from .pipeline import MfccFeaturizer
from .scores import ScoreSet

log = logging.getLogger(__name__)

Featurizer = Callable[[ManifestEntry], FeatureMatrix]


@dataclass(frozen=True)
class ModelSignature:
    input_dim: int = 80
    layers: int = 2
    hidden: int = 128
    ffn_dim: int = 256
    dropout: float = 0.1
    pooling: str = "mean"  # non-paper default; "last" concatenates the final state of each direction

    def __post_init__(self):
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"unknown pooling {self.pooling!r}")


@dataclass
class ModelParams:
    signature: ModelSignature
    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.signature,
            {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.tensors.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def equals(self, other: "ModelParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return self.signature == other.signature and a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3  # non-paper default
    batch_size: int = 16  # non-paper default
    seed: int = 0
    specaugment: bool = True
    mask: MaskConfig = MaskConfig()
    standardize: bool = True  # non-paper default
    pos_weight: float = 1.0  # non-paper default (class weighting off)
    grad_clip: float = 0.0  # non-paper default (off)
    early_stop: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.early_stop:
            raise ValueError("early stopping is not supported; training runs a fixed number of epochs")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float = float("nan")
    val_loss: float = float("nan")


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def param_shapes(sig: ModelSignature) -> dict[str, tuple[int, ...]]:
    shapes = {}
    n_in = sig.input_dim
    H = sig.hidden
    for layer in range(sig.layers):
        for d in ("fwd", "bwd"):
            shapes[f"bilstm.{layer}.{d}.W"] = (n_in, 4 * H)
            shapes[f"bilstm.{layer}.{d}.U"] = (H, 4 * H)
            shapes[f"bilstm.{layer}.{d}.b"] = (4 * H,)
        n_in = 2 * H
    shapes["ffn.0.W"] = (2 * H, sig.ffn_dim)
    shapes["ffn.0.b"] = (sig.ffn_dim,)
    shapes["ffn.1.W"] = (sig.ffn_dim, 1)
    shapes["ffn.1.b"] = (1,)
    return shapes


def init_params(sig: ModelSignature, seed: int | np.random.Generator = 0, dtype=np.float32) -> ModelParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    n_in = sig.input_dim
    for layer in range(sig.layers):
        for d in ("fwd", "bwd"):
            init_lstm(tensors, f"bilstm.{layer}.{d}", n_in, sig.hidden, rng, dtype)
        n_in = 2 * sig.hidden
    init_linear(tensors, "ffn.0", 2 * sig.hidden, sig.ffn_dim, rng, dtype)
    init_linear(tensors, "ffn.1", sig.ffn_dim, 1, rng, dtype)
    assert {k: v.shape for k, v in tensors.items()} == param_shapes(sig)
    return ModelParams(sig, tensors, identity_norm(sig, dtype))


def identity_norm(sig: ModelSignature, dtype=np.float32) -> dict[str, np.ndarray]:
    return {"norm.mean": np.zeros(sig.input_dim, dtype), "norm.std": np.ones(sig.input_dim, dtype)}


def zero_params(sig: ModelSignature, dtype=np.float32) -> ModelParams:
    tensors = {k: Tensor(np.zeros(s, dtype), requires_grad=True) for k, s in param_shapes(sig).items()}
    return ModelParams(sig, tensors, identity_norm(sig, dtype))


def fit_normalizer(params: ModelParams, feats: Sequence[np.ndarray]) -> None:
    """Per-dimension mean/std over every frame of the training features."""
    frames = np.concatenate([np.asarray(f, dtype=np.float64) for f in feats], axis=0)
    std = frames.std(axis=0)
    dtype = params.buffers["norm.mean"].dtype
    params.buffers["norm.mean"] = frames.mean(axis=0).astype(dtype)
    params.buffers["norm.std"] = np.where(std > 1e-8, std, 1.0).astype(dtype)


def average_params(models: Sequence[ModelParams]) -> ModelParams:
    """Elementwise arithmetic mean of every named tensor and buffer.

    Values are sorted across models before summation so the result does not
    depend on argument order.
    """
    if len(models) < 2:
        raise ValueError("average_params needs at least two models")
    sig = models[0].signature
    names = list(models[0].tensors)
    for m in models[1:]:
        if m.signature != sig or list(m.tensors) != names or m.buffers.keys() != models[0].buffers.keys():
            raise SignatureMismatch(f"cannot average {m.signature} with {sig}")

    def mean_of(arrays: list[np.ndarray]) -> np.ndarray:
        stacked = np.sort(np.stack([a.astype(np.float64) for a in arrays]), axis=0)
        return (stacked.sum(axis=0) / len(arrays)).astype(arrays[0].dtype)

    tensors = {k: Tensor(mean_of([m.tensors[k].data for m in models]), requires_grad=True) for k in names}
    buffers = {k: mean_of([m.buffers[k] for m in models]) for k in models[0].buffers}
    return ModelParams(sig, tensors, buffers)


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------


def standardize(params: ModelParams, data: np.ndarray) -> np.ndarray:
    b = params.buffers
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != params.signature.input_dim:
        raise ShapeMismatch(f"expected (T, {params.signature.input_dim}) features, got {data.shape}")
    return ((data - b["norm.mean"]) / b["norm.std"]).astype(b["norm.mean"].dtype)


def pad_batch(seqs: Sequence[np.ndarray], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(s) for s in seqs]
    X = np.zeros((len(seqs), max(lengths), seqs[0].shape[1]), dtype=dtype)
    mask = np.zeros((len(seqs), max(lengths)), dtype=dtype)
    for i, s in enumerate(seqs):
        X[i, : len(s)] = s
        mask[i, : len(s)] = 1
    return X, mask


def forward_logits(
    params: ModelParams,
    X: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits (B,) for a padded, already standardized batch (B, T, F)."""
    sig = params.signature
    if X.ndim != 3 or X.shape[2] != sig.input_dim:
        raise ShapeMismatch(f"expected (B, T, {sig.input_dim}) features, got {X.shape}")
    p = params.tensors
    h = Tensor(X * mask[:, :, None])
    for layer in range(sig.layers):
        h = bilstm_layer(p, f"bilstm.{layer}", h, mask)
        h = T.dropout(h, sig.dropout, rng, train)
    if sig.pooling == "mean":
        counts = mask.sum(axis=1, keepdims=True)
        pooled = T.tsum(h * mask[:, :, None], axis=1) / counts
    else:
        last = mask.sum(axis=1).astype(int) - 1
        H = sig.hidden
        pooled = T.concat([h[np.arange(len(last)), last, :H], h[:, 0, H:]], axis=-1)
    return feed_forward(p, "ffn", pooled).reshape(-1)


def model_forward(
    params: ModelParams,
    feat: FeatureMatrix | np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Detection probability for one recording."""
    data = feat.data if isinstance(feat, FeatureMatrix) else np.asarray(feat)
    x = standardize(params, data)[None]
    mask = np.ones(x.shape[:2], dtype=x.dtype)
    with no_grad():
        z = forward_logits(params, x, mask, train_mode, rng)
    return float(T.sigmoid(z).data[0])


def predict_proba(params: ModelParams, feats: Sequence[np.ndarray], batch_size: int = 32) -> np.ndarray:
    out = np.empty(len(feats))
    dtype = params.buffers["norm.mean"].dtype
    with no_grad():
        for start in range(0, len(feats), batch_size):
            chunk = [standardize(params, f) for f in feats[start : start + batch_size]]
            X, mask = pad_batch(chunk, dtype)
            out[start : start + len(chunk)] = T.sigmoid(forward_logits(params, X, mask)).data
    return out


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _features(manifest: DatasetManifest, featurizer: Featurizer) -> list[np.ndarray]:
    return [featurizer(e).data for e in manifest]


def train_model(
    manifest: DatasetManifest,
    init: ModelParams | None = None,
    cfg: TrainConfig = TrainConfig(),
    featurizer: Featurizer | None = None,
    val_manifest: DatasetManifest | None = None,
    signature: ModelSignature | None = None,
    init_seed: int | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Train with BCE for exactly ``cfg.epochs`` epochs.

    A fresh model (``init is None``) is initialized from ``cfg.seed`` (or
    ``init_seed`` when given) and gets its input normalizer fitted on
    ``manifest``; a model started from ``init`` keeps the normalizer it
    came with.
    """
    featurizer = featurizer or MfccFeaturizer()
    neg, pos = manifest.class_counts()
    if neg == 0 or pos == 0:
        raise DegenerateDataset(f"training set needs both classes (negatives={neg}, positives={pos})")
    feats = _features(manifest, featurizer)
    labels = np.array([e.label for e in manifest], dtype=np.float32)

    init_seq, shuffle_seq, aug_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(4)
    if init is None:
        sig = signature or ModelSignature(input_dim=feats[0].shape[1])
        init_rng = np.random.default_rng(init_seq if init_seed is None else np.random.SeedSequence(init_seed).spawn(4)[0])
        params = init_params(sig, init_rng)
        if cfg.standardize:
            fit_normalizer(params, feats)
    else:
        params = init.copy()
        if feats[0].shape[1] != params.signature.input_dim:
            raise ShapeMismatch(f"features have {feats[0].shape[1]} dims, model expects {params.signature.input_dim}")
    dtype = params.buffers["norm.mean"].dtype

    val_feats = _features(val_manifest, featurizer) if val_manifest is not None else None
    val_labels = np.array([e.label for e in val_manifest]) if val_manifest is not None else None

    shuffle_rng = np.random.default_rng(shuffle_seq)
    aug_rng = np.random.default_rng(aug_seq)
    drop_rng = np.random.default_rng(drop_seq)
    state = AdamState(lr=cfg.lr)
    history: list[EpochRecord] = []
    n = len(feats)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            seqs = []
            for i in idx:
                x = standardize(params, feats[i])
                if cfg.specaugment:
                    x = spec_augment(FeatureMatrix(x, 0.0, "mfcc_dd"), cfg.mask, aug_rng).data
                seqs.append(x)
            X, mask = pad_batch(seqs, dtype)
            zero_grads(params.tensors)
            loss = T.bce_with_logits(forward_logits(params, X, mask, True, drop_rng), labels[idx], cfg.pos_weight)
            loss.backward()
            grads = collect_grads(params.tensors)
            if cfg.grad_clip > 0:
                clip_grad_norm(grads, cfg.grad_clip)
            adam_step(params.tensors, grads, state)
            total += float(loss.data) * len(idx)
        record = EpochRecord(epoch, total / n)
        if val_feats is not None:
            probs = predict_proba(params, val_feats)
            val_loss = float(bce_loss(probs, val_labels).mean())
            try:
                val_auc = auc_from_arrays(probs, val_labels)
            except PipelineError:
                val_auc = float("nan")
            record = replace(record, val_auc=val_auc, val_loss=val_loss)
        history.append(record)
        log.debug("epoch %d: %s", epoch, record)
    zero_grads(params.tensors)
    return params, history


def finetune(
    init: ModelParams,
    manifest: DatasetManifest,
    cfg: TrainConfig = TrainConfig(),
    featurizer: Featurizer | None = None,
) -> ModelParams:
    """Continue training from ``init``; zero epochs returns an unchanged copy."""
    if cfg.epochs == 0:
        return init.copy()
    return train_model(manifest, init, cfg, featurizer)[0]


def train_task_models(
    manifests: Mapping[str, DatasetManifest],
    cfg: TrainConfig = TrainConfig(),
    featurizer: Featurizer | None = None,
    signature: ModelSignature | None = None,
    shared_init: bool = True,
    jobs: int = 1,
    task_seeds: Mapping[str, int] | None = None,
) -> dict[str, ModelParams]:
    """One model per task, each with its own seed for shuffling, augmentation and dropout.

    Task seeds default to distinct values derived from ``cfg.seed``;
    ``task_seeds`` overrides them. With ``shared_init`` all three start from
    the ``cfg.seed`` initialization; otherwise the initialization also
    follows the task seed.
    """
    missing = [t for t in TASKS if t not in manifests]
    if missing:
        raise ValueError(f"missing task manifests: {missing}")
    featurizer = featurizer or MfccFeaturizer()
    for t in TASKS:  # fill the featurizer cache before any worker threads start
        _features(manifests[t], featurizer)

    def run(n: int) -> ModelParams:
        seed = task_seeds[TASKS[n]] if task_seeds is not None else task_seed_for(cfg.seed, n)
        task_cfg = replace(cfg, seed=seed)
        init_seed = cfg.seed if shared_init else None
        return train_model(manifests[TASKS[n]], None, task_cfg, featurizer, signature=signature, init_seed=init_seed)[0]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(run, range(len(TASKS))))
    else:
        models = [run(n) for n in range(len(TASKS))]
    return dict(zip(TASKS, models))


def task_seed_for(seed: int, task_index: int) -> int:
    return int(np.random.SeedSequence([seed, task_index]).generate_state(1)[0])


def supervised_pretrain(
    manifests: Mapping[str, DatasetManifest],
    cfg: TrainConfig = TrainConfig(),
    featurizer: Featurizer | None = None,
    signature: ModelSignature | None = None,
    shared_init: bool = True,
    jobs: int = 1,
    task_seeds: Mapping[str, int] | None = None,
) -> ModelParams:
    """Train breath, cough and speech models and return their parameter average.

    The shared initialization keeps the three solutions in one basin, so
    the average is a usable starting point for per-task finetuning.
    """
    models = train_task_models(manifests, cfg, featurizer, signature, shared_init, jobs, task_seeds)
    return average_params([models[t] for t in TASKS])


def predict_scores(
    params: ModelParams,
    manifest: DatasetManifest,
    featurizer: Featurizer | None = None,
    task: str = "",
) -> ScoreSet:
    """Eval-mode probabilities; entries whose features fail are reported in ``skipped``."""
    featurizer = featurizer or MfccFeaturizer()
    ids, feats, skipped = [], [], {}
    for e in manifest:
        try:
            feats.append(featurizer(e).data)
            ids.append(e.id)
        except (PipelineError, OSError, ValueError) as exc:
            skipped[e.id] = f"{type(exc).__name__}: {exc}"
    probs = predict_proba(params, feats) if feats else np.empty(0)
    return ScoreSet({i: float(p) for i, p in zip(ids, probs)}, task, skipped)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    meta = {"tag": "classifier", "signature": asdict(params.signature)}
    checkpoint.write_container(path, meta, params.arrays())


def load_checkpoint(path: str | Path) -> ModelParams:
    meta, arrays = checkpoint.read_container(path)
    if meta.get("tag") != "classifier":
        raise SignatureMismatch(f"{path}: not a classifier checkpoint (tag {meta.get('tag')!r})")
    try:
        sig = ModelSignature(**meta["signature"])
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad signature record") from exc
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items() if not k.startswith("buffer:")}
    buffers = {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("buffer:")}
    expected = param_shapes(sig)
    if {k: v.shape for k, v in tensors.items()} != expected:
        raise CorruptCheckpoint(f"{path}: tensor names/shapes do not match the signature")
    return ModelParams(sig, {k: tensors[k] for k in expected}, buffers)


def write_training_log(history: Sequence[EpochRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auc"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_loss:.6f}", "" if np.isnan(r.val_auc) else f"{r.val_auc:.6f}"])
