"""ROC curves as standalone SVG line plots (FPR on x, TPR on y, both 0-1)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

SIZE = 400
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _xy(fpr: float, tpr: float) -> tuple[float, float]:
    return MARGIN + fpr * SIZE, MARGIN + (1.0 - tpr) * SIZE


def roc_svg(curves: dict[str, tuple[np.ndarray, np.ndarray]], title: str = "") -> str:
    """Render named (fpr, tpr) curves into one SVG document."""
    w = h = SIZE + 2 * MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>',
    ]
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#999" stroke-dasharray="4 4"/>')
    for t in np.linspace(0, 1, 6):
        x, _ = _xy(t, 0)
        _, y = _xy(0, t)
        parts.append(f'<text x="{x:.1f}" y="{y0 + 16:.1f}" font-size="11" text-anchor="middle">{t:.1f}</text>')
        parts.append(f'<text x="{x0 - 6:.1f}" y="{y + 4:.1f}" font-size="11" text-anchor="end">{t:.1f}</text>')
    parts.append(f'<text x="{MARGIN + SIZE / 2}" y="{h - 10}" font-size="13" text-anchor="middle">False positive rate</text>')
    parts.append(
        f'<text x="14" y="{MARGIN + SIZE / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN + SIZE / 2})">True positive rate</text>'
    )
    if title:
        parts.append(f'<text x="{w / 2}" y="30" font-size="14" text-anchor="middle">{escape(title)}</text>')
    for n, (name, (fpr, tpr)) in enumerate(curves.items()):
        color = COLORS[n % len(COLORS)]
        pts = " ".join("{:.2f},{:.2f}".format(*_xy(float(a), float(b))) for a, b in zip(fpr, tpr))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN + SIZE - 15 - 16 * n
        parts.append(f'<text x="{MARGIN + SIZE - 8}" y="{ly}" font-size="12" text-anchor="end" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_roc_svg(path: str | Path, fpr, tpr, title: str = "", name: str = "ROC") -> None:
    Path(path).write_text(roc_svg({name: (np.asarray(fpr), np.asarray(tpr))}, title), encoding="utf-8")


def write_roc_svg_multi(path: str | Path, curves: dict[str, tuple[np.ndarray, np.ndarray]], title: str = "") -> None:
    Path(path).write_text(roc_svg(curves, title), encoding="utf-8")
