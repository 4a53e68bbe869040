"""Convex score combinations: two-model ensembling and three-task fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import IdSetMismatch, InvalidWeights
from ..scores import ScoreSet
from .metrics import roc_auc


@dataclass(frozen=True)
class EnsembleWeights:
    mu: float = 0.5  # non-paper default

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidWeights(f"mu must lie in [0, 1], got {self.mu}")


@dataclass(frozen=True)
class FusionWeights:
    theta: float
    gamma: float
    phi: float

    def __post_init__(self):
        w = (self.theta, self.gamma, self.phi)
        if any(v < 0 for v in w):
            raise InvalidWeights(f"fusion weights must be non-negative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise InvalidWeights(f"fusion weights must sum to 1, got {sum(w)!r}")

    @classmethod
    def parse(cls, text: str) -> "FusionWeights":
        """Parse ``"0.4,0.2,0.4"``; entries may be fractions such as ``1/3``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise InvalidWeights(f"expected three comma-separated weights, got {text!r}")
        vals = []
        for p in parts:
            num, _, den = p.partition("/")
            try:
                vals.append(float(num) / float(den) if den else float(num))
            except ValueError as exc:
                raise InvalidWeights(f"bad weight {p!r}") from exc
        return cls(*vals)


def _same_ids(*sets: ScoreSet) -> list[str]:
    ids = set(sets[0].scores)
    for s in sets[1:]:
        if set(s.scores) != ids:
            raise IdSetMismatch("score sets cover different recordings")
    return sorted(ids)


def ensemble_scores(s_sup: ScoreSet, s_ssl: ScoreSet, w: EnsembleWeights = EnsembleWeights()) -> ScoreSet:
    """Per recording ``mu * s_sup + (1 - mu) * s_ssl``."""
    ids = _same_ids(s_sup, s_ssl)
    mu = w.mu
    out = {}
    for i in ids:
        a, b = s_sup.scores[i], s_ssl.scores[i]
        # keep endpoints exact and results inside [min, max] despite rounding
        v = a if mu == 1.0 else b if mu == 0.0 else mu * a + (1.0 - mu) * b
        out[i] = min(max(v, min(a, b)), max(a, b))
    return ScoreSet(out, s_sup.task)


def fuse_scores(s_bre: ScoreSet, s_cou: ScoreSet, s_spe: ScoreSet, w: FusionWeights) -> ScoreSet:
    """Per recording ``theta * breath + gamma * cough + phi * speech``."""
    ids = _same_ids(s_bre, s_cou, s_spe)
    out = {}
    for i in ids:
        vals = [s_bre.scores[i], s_cou.scores[i], s_spe.scores[i]]
        terms = [(wt, v) for wt, v in zip((w.theta, w.gamma, w.phi), vals) if wt != 0.0]
        if len(terms) == 1 and terms[0][0] == 1.0:
            out[i] = terms[0][1]
            continue
        v = sum(wt * s for wt, s in terms)
        out[i] = min(max(v, min(vals)), max(vals))
    return ScoreSet(out, "fusion")


def grid_search_mu(
    s_sup: ScoreSet, s_ssl: ScoreSet, labels: Mapping[str, int], grid=None
) -> tuple[float, dict[float, float]]:
    """Pick the ensemble weight with the best validation AUC (first wins on ties)."""
    grid = np.round(np.linspace(0.0, 1.0, 11), 10) if grid is None else grid
    results = {float(mu): roc_auc(ensemble_scores(s_sup, s_ssl, EnsembleWeights(float(mu))), labels) for mu in grid}
    best = max(results, key=lambda m: (results[m], -m))
    return best, results
