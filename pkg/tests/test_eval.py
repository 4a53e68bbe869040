"""AUC, ensembling/fusion algebra, folds and the cross-validation harness."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acoustic_screen.audio import DatasetManifest, ManifestEntry
from acoustic_screen.classifier import ModelSignature, TrainConfig
from acoustic_screen.errors import IdSetMismatch, InvalidWeights, SingleClass, TooFewSamples
from acoustic_screen.evaluation import (
    EnsembleWeights,
    FusionWeights,
    auc_from_arrays,
    classifier_cv,
    cross_validate,
    ensemble_scores,
    fuse_scores,
    grid_search_mu,
    make_folds,
    roc_auc,
    roc_curve,
)
from acoustic_screen.pipeline import MfccFeaturizer
from acoustic_screen.scores import ScoreSet


def pairwise_auc(scores, labels) -> float:
    """Oracle: fraction of (positive, negative) pairs ranked correctly, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------- AUC


def test_auc_examples():
    assert auc_from_arrays([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_from_arrays([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auc_from_arrays([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    with pytest.raises(SingleClass):
        auc_from_arrays([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle_200_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 101))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        # a third of the instances draw scores from a coarse grid to force many ties
        s = rng.integers(0, 5, n) / 4 if i % 3 == 0 else rng.random(n)
        worst = max(worst, abs(auc_from_arrays(s, y) - pairwise_auc(s, y)))
    assert worst <= 1e-12


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_auc_invariant_under_increasing_transform(data):
    n = data.draw(st.integers(2, 40))
    # a grid keeps distinct scores distinct after exp() in floating point
    scores = [k / 1000 for k in data.draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n))]
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if len(set(labels)) < 2:
        labels[0], labels[1] = 0, 1
    s = np.array(scores)
    base = auc_from_arrays(s, labels)
    assert auc_from_arrays(np.exp(3 * s) - 7, labels) == base
    assert auc_from_arrays(s**3, labels) == base
    assert base == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


def test_roc_curve_endpoints():
    fpr, tpr = roc_curve([0.9, 0.4, 0.4, 0.1], [1, 0, 1, 0])
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_roc_auc_on_scoresets():
    s = ScoreSet({"a": 0.9, "b": 0.1})
    assert roc_auc(s, {"a": 1, "b": 0, "c": 1}) == 1.0
    with pytest.raises(IdSetMismatch):
        roc_auc(s, {"a": 1})


# ---------------------------------------------------------------- ensemble / fusion


def sset(values, task=""):
    return ScoreSet({f"r{i}": float(v) for i, v in enumerate(values)}, task)


def test_ensemble_examples():
    a, b = sset([0.4, 0.9, 0.123456789]), sset([0.8, 0.5, 0.987654321])
    assert ensemble_scores(a, b, EnsembleWeights(1.0)).scores == a.scores
    assert ensemble_scores(a, b, EnsembleWeights(0.0)).scores == b.scores
    assert ensemble_scores(a, b).scores["r0"] == pytest.approx(0.6, abs=1e-15)
    assert ensemble_scores(a, b, EnsembleWeights(0.7)).scores["r1"] == pytest.approx(0.78, abs=1e-15)
    with pytest.raises(InvalidWeights):
        EnsembleWeights(1.2)
    with pytest.raises(IdSetMismatch):
        ensemble_scores(a, sset([0.1]))


def test_fusion_examples():
    b, c, s = sset([0.3]), sset([0.6]), sset([0.9])
    third = FusionWeights.parse("1/3,1/3,1/3")
    assert fuse_scores(b, c, s, third).scores["r0"] == pytest.approx(0.6, abs=1e-15)
    FusionWeights(0.4, 0.2, 0.4)
    with pytest.raises(InvalidWeights):
        FusionWeights(0.5, 0.3, 0.3)
    with pytest.raises(InvalidWeights):
        FusionWeights(1.2, -0.1, -0.1)
    FusionWeights(0.4, 0.2, 0.4 + 5e-10)  # within tolerance
    with pytest.raises(InvalidWeights):
        FusionWeights(0.4, 0.2, 0.4 + 2e-9)
    with pytest.raises(IdSetMismatch):
        fuse_scores(b, c, sset([0.1, 0.2]), third)


unit = st.floats(0, 1, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(vals=st.lists(st.tuples(unit, unit, unit), min_size=1, max_size=20), w=st.tuples(unit, unit, unit), mu=unit)
def test_convexity_and_selectors(vals, w, mu):
    b, c, s = (sset([v[i] for v in vals]) for i in range(3))
    for k, sel in enumerate([(1, 0, 0), (0, 1, 0), (0, 0, 1)]):
        assert fuse_scores(b, c, s, FusionWeights(*sel)).scores == (b, c, s)[k].scores
    total = sum(w)
    if total > 0:
        weights = [x / total for x in w]
        weights[2] = 1.0 - weights[0] - weights[1]
        if weights[2] >= 0:
            fused = fuse_scores(b, c, s, FusionWeights(*weights))
            for i, v in enumerate(vals):
                assert min(v) <= fused.scores[f"r{i}"] <= max(v)
    ens = ensemble_scores(b, c, EnsembleWeights(mu))
    for i, v in enumerate(vals):
        assert min(v[0], v[1]) <= ens.scores[f"r{i}"] <= max(v[0], v[1])


def test_grid_search_mu():
    labels = {"a": 1, "b": 0, "c": 1, "d": 0}
    good = ScoreSet({"a": 0.9, "b": 0.1, "c": 0.8, "d": 0.2})
    bad = ScoreSet({"a": 0.1, "b": 0.9, "c": 0.2, "d": 0.8})
    best, table = grid_search_mu(good, bad, labels)
    assert len(table) == 11 and table[best] == 1.0 and best == 0.6


# ---------------------------------------------------------------- folds


def fake_manifest(n_pos, n_neg, tmp="/nonexistent"):
    from pathlib import Path

    entries = [ManifestEntry(f"p{i}", Path(tmp), 1, "cough") for i in range(n_pos)]
    entries += [ManifestEntry(f"n{i}", Path(tmp), 0, "cough") for i in range(n_neg)]
    return DatasetManifest(entries)


def test_folds_965():
    m = fake_manifest(172, 793)
    folds = make_folds(m, 5, seed=0)
    assert folds.sizes() == [193] * 5
    pos = [sum(1 for i in folds.fold_ids(f) if i.startswith("p")) for f in range(5)]
    assert max(pos) - min(pos) <= 1
    assert make_folds(m, 5, seed=0).assignment == folds.assignment
    assert make_folds(m, 5, seed=1).assignment != folds.assignment


@settings(max_examples=60, deadline=None)
@given(n_pos=st.integers(5, 60), n_neg=st.integers(5, 60), k=st.integers(2, 5), seed=st.integers(0, 1000))
def test_folds_partition_and_stratify(n_pos, n_neg, k, seed):
    m = fake_manifest(n_pos, n_neg)
    folds = make_folds(m, k, seed)
    all_ids = [i for f in range(k) for i in folds.fold_ids(f)]
    assert sorted(all_ids) == sorted(m.ids)  # union = ids, pairwise disjoint
    sizes = folds.sizes()
    assert max(sizes) - min(sizes) <= 1
    pos = [sum(1 for i in folds.fold_ids(f) if i.startswith("p")) for f in range(k)]
    assert max(pos) - min(pos) <= 1


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        make_folds(fake_manifest(3, 20), 5)


# ---------------------------------------------------------------- cross-validation harness


def oracle_cv_fns():
    """A 'model' that memorizes nothing and scores by id parity, to exercise the harness quickly."""

    def train_fn(train, seed):
        return seed

    def predict_fn(model, manifest):
        return ScoreSet({e.id: 0.9 if e.id.startswith("p") else 0.1 for e in manifest})

    return train_fn, predict_fn


def test_cross_validate_harness(tmp_path):
    m = fake_manifest(12, 13)
    test = fake_manifest(3, 3)
    train_fn, predict_fn = oracle_cv_fns()
    r1 = cross_validate(m, train_fn, predict_fn, k=5, seed=4, test_manifest=test, out_dir=tmp_path / "a")
    r2 = cross_validate(m, train_fn, predict_fn, k=5, seed=4, test_manifest=test, out_dir=tmp_path / "b", jobs=3)
    assert len(r1.per_fold_auc) == 5 and r1.pooled_auc == 1.0 and r1.mean_test_auc == 1.0
    assert r1.to_json() == r2.to_json()
    for name in ("report.json", "report.csv", "val_scores.txt", "test_scores.txt", "roc_val.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["pooled_auc"] == 1.0 and len(report["per_fold_auc"]) == 5
    root = ET.fromstring((tmp_path / "a" / "roc_val.svg").read_text())
    assert root.tag.endswith("svg") and any(el.tag.endswith("polyline") for el in root.iter())
    csv_lines = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "fold,val_auc,n_val" and len(csv_lines) == 1 + 5 + 3


def test_cross_validate_averages_test_probabilities():
    m = fake_manifest(6, 6)
    test = fake_manifest(1, 1)
    seen = []

    def train_fn(train, seed):
        seen.append(seed)
        return len(seen)

    def predict_fn(model, manifest):
        return ScoreSet({e.id: model / 10 for e in manifest})

    cross_validate(m, train_fn, predict_fn, k=3, seed=0, test_manifest=test, out_dir=None)
    assert len(set(seen)) == 3  # every fold gets its own seed


def test_classifier_cv_end_to_end(small_data, tmp_path):
    feat = MfccFeaturizer()
    sig = ModelSignature(input_dim=80, hidden=16, ffn_dim=32)
    cfg = TrainConfig(epochs=4, seed=0)
    r1 = classifier_cv(small_data, cfg, feat, k=3, seed=1, out_dir=tmp_path / "a", signature=sig)
    r2 = classifier_cv(small_data, cfg, feat, k=3, seed=1, out_dir=tmp_path / "b", signature=sig)
    assert len(r1.per_fold_auc) == 3
    assert r1.to_json() == r2.to_json()
    # short training leaves fold models on different score scales, so only
    # the per-fold ranking is held to a bar here (pooled AUC: acceptance suite)
    assert min(r1.per_fold_auc) >= 0.9
    assert (tmp_path / "a" / "val_scores.txt").read_bytes() == (tmp_path / "b" / "val_scores.txt").read_bytes()
