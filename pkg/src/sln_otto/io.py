"""CSV tables with a provenance header line, and dependency-free SVG quick looks."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape


def provenance_line(kind: str, config_hash: str, seed: int) -> str:
    return f"# sln-otto {kind} config_hash={config_hash} seed={seed}"


def fmt(x) -> str:
    """Deterministic text form of a table cell."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12e}"
    try:
        import numpy as np

        if isinstance(x, np.integer):
            return str(int(x))
        if isinstance(x, np.floating):
            return fmt(float(x))
    except ImportError:  # pragma: no cover
        pass
    return str(x)


def write_csv(path, header: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    return header, rows[0], rows[1:]


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _nice_range(values) -> tuple[float, float]:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(hi) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def svg_lines(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 640, height: int = 400) -> Path:
    """Line plot of ``{label: (x, y)}``."""
    ml, mr, mt, mb = 70, 130, 30, 50
    xs = [v for x, _ in series.values() for v in x]
    ys = [v for _, y in series.values() for v in y]
    x0, x1 = _nice_range(xs)
    y0, y1 = _nice_range(ys)
    pw, ph = width - ml - mr, height - mt - mb
    sx = lambda v: ml + (v - x0) / (x1 - x0) * pw
    sy = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" font-size="11" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" font-size="11" text-anchor="end">{yv:.3g}</text>')
    if y0 < 0 < y1:
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{sy(0):.1f}" y2="{sy(0):.1f}" stroke="#999" stroke-dasharray="4 3"/>')
    for k, (label, (x, y)) in enumerate(series.items()):
        col = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y) if math.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + pw + 8}" y="{mt + 14 + 16 * k}" font-size="12" fill="{col}">{escape(str(label))}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def svg_heatmap(path, xs: Sequence[float], ys: Sequence[float], values, title: str = "",
                xlabel: str = "", ylabel: str = "", width: int = 560, height: int = 440) -> Path:
    """Cell map of ``values[i][j]`` at (xs[i], ys[j]); non-finite cells are grey."""
    ml, mr, mt, mb = 70, 30, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    flat = [v for row in values for v in row if v is not None and math.isfinite(v)]
    vmax = max(flat) if flat else 1.0
    vmax = vmax if vmax > 0 else 1.0
    cw, ch = pw / len(xs), ph / len(ys)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            v = values[i][j]
            if v is None or not math.isfinite(v):
                col = "#bbbbbb"
            else:
                s = max(0.0, min(1.0, v / vmax))
                col = f"rgb({255},{int(255 * (1 - s))},{int(255 * (1 - s))})"
            out.append(f'<rect x="{ml + i * cw:.1f}" y="{mt + ph - (j + 1) * ch:.1f}" width="{cw:.1f}" '
                       f'height="{ch:.1f}" fill="{col}" stroke="white"/>')
        out.append(f'<text x="{ml + (i + 0.5) * cw:.1f}" y="{mt + ph + 16}" font-size="11" text-anchor="middle">{xv:.3g}</text>')
    for j, yv in enumerate(ys):
        out.append(f'<text x="{ml - 6}" y="{mt + ph - (j + 0.5) * ch + 4:.1f}" font-size="11" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
