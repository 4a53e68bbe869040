"""Stratified k-fold assignment and the cross-validation harness."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..audio import DatasetManifest
from ..errors import PipelineError, TooFewSamples
from ..scores import ScoreSet, write_scores
from .metrics import roc_auc, roc_curve
from .plots import write_roc_svg


@dataclass(frozen=True)
class FoldSpec:
    k: int
    assignment: dict[str, int]
    seed: int

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        return [sum(1 for f in self.assignment.values() if f == j) for j in range(self.k)]


def make_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldSpec:
    """Shuffle each class, then deal positives and negatives round-robin.

    Dealing the classes back to back keeps total fold sizes and per-fold
    positive counts within one of each other.
    """
    if k < 2:
        raise ValueError("need k >= 2 folds")
    neg, pos = manifest.class_counts()
    if len(manifest) < k or min(neg, pos) < k:
        raise TooFewSamples(f"{k} stratified folds need >= {k} samples per class (negatives={neg}, positives={pos})")
    rng = np.random.default_rng(seed)
    pos_ids = [e.id for e in manifest if e.label == 1]
    neg_ids = [e.id for e in manifest if e.label == 0]
    dealt = [pos_ids[i] for i in rng.permutation(len(pos_ids))] + [neg_ids[i] for i in rng.permutation(len(neg_ids))]
    assignment = {i: n % k for n, i in enumerate(dealt)}
    return FoldSpec(k, {e.id: assignment[e.id] for e in manifest}, seed)


@dataclass
class Report:
    per_fold_auc: list[float]
    pooled_auc: float
    mean_val_auc: float
    mean_test_auc: float | None = None
    fingerprint: str = ""
    score_files: dict[str, str] = field(default_factory=dict)
    fold_sizes: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float):
                return None if math.isnan(v) else round(v, 10)
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "val_auc", "n_val"])
            for j, (auc, n) in enumerate(zip(self.per_fold_auc, self.fold_sizes)):
                w.writerow([j, f"{auc:.6f}", n])
            w.writerow(["pooled", f"{self.pooled_auc:.6f}", sum(self.fold_sizes)])
            w.writerow(["mean", f"{self.mean_val_auc:.6f}", ""])
            if self.mean_test_auc is not None:
                w.writerow(["test", f"{self.mean_test_auc:.6f}", ""])


def fingerprint(config) -> str:
    """Stable short hash of a (possibly nested dataclass) configuration."""
    def plain(v):
        if is_dataclass(v):
            return {k: plain(x) for k, x in asdict(v).items()}
        if isinstance(v, dict):
            return {str(k): plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    blob = json.dumps(plain(config), sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def cross_validate(
    manifest: DatasetManifest,
    train_fn: Callable,
    predict_fn: Callable,
    k: int = 5,
    seed: int = 0,
    test_manifest: DatasetManifest | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    config=None,
) -> Report:
    """Train on k-1 folds, score the held-out fold, repeat for every fold.

    ``train_fn(train_manifest, fold_seed) -> model`` and
    ``predict_fn(model, manifest) -> ScoreSet`` keep this harness agnostic
    of the feature type. Test recordings are scored by every fold model and
    the probabilities averaged.
    """
    folds = make_folds(manifest, k, seed)
    labels = manifest.labels()

    def run(fold: int):
        held = folds.fold_ids(fold)
        train = manifest.subset(set(manifest.ids) - set(held))
        model = train_fn(train, fold_seed(seed, fold))
        val_scores = predict_fn(model, manifest.subset(held))
        test_scores = predict_fn(model, test_manifest) if test_manifest is not None else None
        return val_scores, test_scores

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(k)))
    else:
        results = [run(f) for f in range(k)]

    per_fold = []
    pooled: dict[str, float] = {}
    for val_scores, _ in results:
        pooled.update(val_scores.scores)
        try:
            per_fold.append(roc_auc(val_scores, labels))
        except PipelineError:
            per_fold.append(float("nan"))
    oof = ScoreSet(pooled, "cv")
    report = Report(
        per_fold_auc=per_fold,
        pooled_auc=roc_auc(oof, labels),
        mean_val_auc=float(np.nanmean(per_fold)),
        fingerprint=fingerprint({"config": config, "k": k, "seed": seed}),
        fold_sizes=folds.sizes(),
    )

    test = None
    if test_manifest is not None:
        ids = sorted(results[0][1].scores)
        avg = np.mean([r[1].array(ids) for r in results], axis=0)
        test = ScoreSet({i: float(v) for i, v in zip(ids, avg)}, "test")
        try:
            report.mean_test_auc = roc_auc(test, test_manifest.labels())
        except PipelineError:
            report.mean_test_auc = None

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_scores(oof, out / "val_scores.txt")
        report.score_files["validation"] = "val_scores.txt"
        fpr, tpr = roc_curve(oof.array(sorted(oof.scores)), [labels[i] for i in sorted(oof.scores)])
        write_roc_svg(out / "roc_val.svg", fpr, tpr, f"pooled validation AUC {report.pooled_auc:.4f}")
        if test is not None:
            write_scores(test, out / "test_scores.txt")
            report.score_files["test"] = "test_scores.txt"
        report.write(out)
    return report


def classifier_cv(
    manifest: DatasetManifest,
    train_cfg,
    featurizer,
    k: int = 5,
    seed: int = 0,
    init=None,
    test_manifest: DatasetManifest | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    signature=None,
) -> Report:
    """Cross-validate the BiLSTM classifier on ``featurizer`` inputs.

    With ``init`` every fold starts from those parameters (finetuning);
    otherwise each fold trains from a fresh, fold-seeded initialization.
    """
    from ..classifier import predict_scores, train_model

    # warm the featurizer cache before any worker threads start
    for e in manifest:
        featurizer(e)
    if test_manifest is not None:
        for e in test_manifest:
            featurizer(e)

    def train_fn(train: DatasetManifest, s: int):
        return train_model(train, init, replace(train_cfg, seed=s), featurizer, signature=signature)[0]

    def predict_fn(model, m: DatasetManifest) -> ScoreSet:
        return predict_scores(model, m, featurizer)

    config = {"train": train_cfg, "features": getattr(featurizer, "kind", "?"), "init": init is not None}
    return cross_validate(manifest, train_fn, predict_fn, k, seed, test_manifest, out_dir, jobs, config)
