"""CSV, JSON and SVG emission with fixed column orders.

Column schemas:

* trajectory: ``t, jz, x_quad, n_photon, concurrence, fidelity, dI_smoothed``
* ensemble summary: ``t, mean_concurrence, se_concurrence, mean_fidelity, se_fidelity``
* transmission: ``omega, re, im, abs, arg``
* SET time series: ``t, exact, approx``; error table: ``amplitude, relative_error``
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

TRAJECTORY_COLUMNS = ("t", "jz", "x_quad", "n_photon", "concurrence", "fidelity", "dI_smoothed")
SUMMARY_COLUMNS = ("t", "mean_concurrence", "se_concurrence", "mean_fidelity", "se_fidelity")
TRANSMISSION_COLUMNS = ("omega", "re", "im", "abs", "arg")
SET_SERIES_COLUMNS = ("t", "exact", "approx")
SET_ERROR_COLUMNS = ("amplitude", "relative_error")


def csv_text(columns, rows) -> str:
    """Comma-separated text with ``repr``-exact floats (17 significant digits)."""
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in np.asarray(rows, dtype=float):
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def trajectory_csv(rec) -> str:
    rows = np.column_stack([rec.times, rec.jz, rec.x_quad, rec.n_photon, rec.concurrence, rec.fidelity, rec.R])
    return csv_text(TRAJECTORY_COLUMNS, rows)


def summary_csv(summary) -> str:
    rows = np.column_stack(
        [summary.times, summary.mean_concurrence, summary.se_concurrence, summary.mean_fidelity, summary.se_fidelity]
    )
    return csv_text(SUMMARY_COLUMNS, rows)


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_plot_svg(x, series: dict, title: str, xlabel: str, ylabel: str,
                  ylim=(0.0, 1.0), width: int = 640, height: int = 420) -> str:
    """Minimal SVG line chart: axes, ticks, one polyline per series, legend."""
    x = np.asarray(x, dtype=float)
    left, right, top, bottom = 70, 20, 40, 55
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(x.min()), float(x.max()) if x.max() > x.min() else float(x.min()) + 1.0
    y0, y1 = ylim

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (1.0 - (np.clip(v, y0, y1) - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for v in np.linspace(x0, x1, 6):
        out.append(f'<line x1="{sx(v):.1f}" y1="{top + ph}" x2="{sx(v):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in np.linspace(y0, y1, 6):
        out.append(f'<line x1="{left - 5}" y1="{sy(v):.1f}" x2="{left}" y2="{sy(v):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.2g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (name, y) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, np.asarray(y, dtype=float)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 125}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 118}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
