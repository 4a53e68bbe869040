"""Per-recording detection scores and the ``id score`` text format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ScoreSet:
    scores: dict[str, float]
    task: str = ""
    skipped: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.scores.items():
            if not (0.0 <= v <= 1.0) or not np.isfinite(v):
                raise ValueError(f"score for {k!r} outside [0, 1]: {v}")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def ids(self) -> list[str]:
        return list(self.scores)

    def array(self, ids) -> np.ndarray:
        return np.array([self.scores[i] for i in ids], dtype=np.float64)


def write_scores(scores: ScoreSet, path: str | Path) -> None:
    """One ``id score`` line per recording, score with 6 decimals, in id order."""
    lines = [f"{k} {scores.scores[k]:.6f}\n" for k in sorted(scores.scores)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_scores(path: str | Path, task: str = "") -> ScoreSet:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'id score'")
        if parts[0] in out:
            raise ValueError(f"{path}:{n}: duplicate id {parts[0]!r}")
        out[parts[0]] = float(parts[1])
    return ScoreSet(out, task)
