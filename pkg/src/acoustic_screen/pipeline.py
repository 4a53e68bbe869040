"""Featurizers: map a manifest entry to the classifier's input matrix.

A featurizer is any callable ``entry -> FeatureMatrix`` with a ``dim``
attribute. Results are memoized per instance, so one featurizer can be
shared across folds without recomputation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import TARGET_RATE, ManifestEntry, SadConfig, preprocess, read_wav
from .features import FeatureMatrix, FrameConfig, load_features, mfcc_dd


class MfccFeaturizer:
    """read -> normalize -> resample -> silence removal -> MFCC + delta-delta."""

    def __init__(self, frame: FrameConfig = FrameConfig(), sad: SadConfig | None = SadConfig(), target_rate: int = TARGET_RATE):
        self.frame = frame
        self.sad = sad
        self.target_rate = target_rate
        self.kind = "mfcc_dd"
        self._cache: dict[Path, FeatureMatrix] = {}

    @property
    def dim(self) -> int:
        return self.frame.feature_dim

    def __call__(self, entry: ManifestEntry) -> FeatureMatrix:
        key = Path(entry.path)
        if key not in self._cache:
            clip = preprocess(read_wav(key), self.sad, self.target_rate)
            feat = mfcc_dd(clip, self.frame)
            self._cache[key] = FeatureMatrix(feat.data.astype(np.float32), feat.frame_hop_ms, feat.kind)
        return self._cache[key]


class CachedFeaturizer:
    """Reads ``<dir>/<id>.feat`` files written by the ``featurize`` / ``extract-ssl`` commands."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        files = sorted(self.directory.glob("*.feat"))
        if not files:
            raise FileNotFoundError(f"no .feat files in {self.directory}")
        first = load_features(files[0])
        self.kind = first.kind
        self.dim = first.shape[1]

    def __call__(self, entry: ManifestEntry) -> FeatureMatrix:
        return load_features(self.directory / f"{entry.id}.feat")
