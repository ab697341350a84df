"""Dependency-free SVG rendering for run diagnostics.

Three figure kinds cover the usual questions about a run: a filtering
timeseries (ensemble mean with a +/-1 std band against truth and
observations), a per-step density heatmap of one coordinate, and a
prediction-vs-posterior scatter for a single step.  Output is plain SVG
text written with fixed decimal formatting, so the same inputs always
produce byte-identical files.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

__all__ = ["timeseries_svg", "heatmap_svg", "scatter_svg", "write_svg"]

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64.0, 16.0, 34.0, 46.0


def _fmt(value: float) -> str:
    """Fixed two-decimal coordinate formatting; keeps files diff-stable."""
    if not np.isfinite(value):
        raise ValueError(f"cannot place non-finite coordinate {value!r}")
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def _fmt_tick(value: float) -> str:
    text = f"{value:.4g}"
    return "0" if text == "-0" else text


class _Axes:
    """Affine map from data coordinates to the SVG pixel frame."""

    def __init__(self, width: float, height: float, x_range, y_range):
        self.width = float(width)
        self.height = float(height)
        x_lo, x_hi = (float(v) for v in x_range)
        y_lo, y_hi = (float(v) for v in y_range)
        if not (x_hi > x_lo) or not (y_hi > y_lo):
            raise ValueError("axis ranges must have positive extent")
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi
        self.px_lo = _MARGIN_L
        self.px_hi = width - _MARGIN_R
        self.py_lo = height - _MARGIN_B
        self.py_hi = _MARGIN_T

    def x(self, value: float) -> float:
        t = (float(value) - self.x_lo) / (self.x_hi - self.x_lo)
        return self.px_lo + t * (self.px_hi - self.px_lo)

    def y(self, value: float) -> float:
        t = (float(value) - self.y_lo) / (self.y_hi - self.y_lo)
        return self.py_lo + t * (self.py_hi - self.py_lo)


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    """Round tick locations covering [lo, hi] (1/2/5 ladder)."""
    span = hi - lo
    raw = span / max(n - 1, 1)
    power = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * power
        if span / step <= n:
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return ticks[(ticks >= lo - 1e-9 * span) & (ticks <= hi + 1e-9 * span)]


def _pad_range(values: np.ndarray, frac: float = 0.05):
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = frac * (hi - lo)
    return lo - pad, hi + pad


def _header(width: float, height: float, title: str, comment_lines: Sequence[str]) -> list:
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
    ]
    if comment_lines:
        safe = [line.replace("--", "- -") for line in comment_lines]
        parts.append("<!--\n" + "\n".join(safe) + "\n-->")
    parts.append(f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>')
    if title:
        parts.append(
            f'<text x="{_fmt(width / 2)}" y="20" font-family="sans-serif" font-size="14" '
            f'text-anchor="middle">{_escape(title)}</text>'
        )
    return parts


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _frame(ax: _Axes, x_label: str, y_label: str) -> list:
    parts = [
        f'<rect x="{_fmt(ax.px_lo)}" y="{_fmt(ax.py_hi)}" width="{_fmt(ax.px_hi - ax.px_lo)}" '
        f'height="{_fmt(ax.py_lo - ax.py_hi)}" fill="none" stroke="#444444" stroke-width="1"/>'
    ]
    for tick in _ticks(ax.x_lo, ax.x_hi):
        px = ax.x(tick)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{_fmt(ax.py_lo)}" x2="{_fmt(px)}" '
            f'y2="{_fmt(ax.py_lo + 4)}" stroke="#444444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{_fmt(ax.py_lo + 17)}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle">{_fmt_tick(tick)}</text>'
        )
    for tick in _ticks(ax.y_lo, ax.y_hi):
        py = ax.y(tick)
        parts.append(
            f'<line x1="{_fmt(ax.px_lo - 4)}" y1="{_fmt(py)}" x2="{_fmt(ax.px_lo)}" '
            f'y2="{_fmt(py)}" stroke="#444444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(ax.px_lo - 7)}" y="{_fmt(py + 4)}" font-family="sans-serif" '
            f'font-size="11" text-anchor="end">{_fmt_tick(tick)}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{_fmt((ax.px_lo + ax.px_hi) / 2)}" y="{_fmt(ax.height - 10)}" '
            f'font-family="sans-serif" font-size="12" text-anchor="middle">{_escape(x_label)}</text>'
        )
    if y_label:
        cx, cy = 16.0, (ax.py_lo + ax.py_hi) / 2
        parts.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" font-family="sans-serif" font-size="12" '
            f'text-anchor="middle" transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{_escape(y_label)}</text>'
        )
    return parts


def _polyline(xs, ys, ax: _Axes, color: str, width: float = 1.5, dash: str = "") -> str:
    points = " ".join(f"{_fmt(ax.x(x))},{_fmt(ax.y(y))}" for x, y in zip(xs, ys))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(width)}"{dash_attr}/>')


def _legend(ax: _Axes, entries) -> list:
    parts = []
    px = ax.px_lo + 10
    py = ax.py_hi + 14
    for label, color, kind in entries:
        if kind == "line":
            parts.append(
                f'<line x1="{_fmt(px)}" y1="{_fmt(py - 3)}" x2="{_fmt(px + 18)}" '
                f'y2="{_fmt(py - 3)}" stroke="{color}" stroke-width="2"/>'
            )
        elif kind == "band":
            parts.append(
                f'<rect x="{_fmt(px)}" y="{_fmt(py - 9)}" width="18" height="10" '
                f'fill="{color}" fill-opacity="0.35"/>'
            )
        else:
            parts.append(
                f'<circle cx="{_fmt(px + 9)}" cy="{_fmt(py - 3)}" r="3" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{_fmt(px + 23)}" y="{_fmt(py)}" font-family="sans-serif" '
            f'font-size="11">{_escape(label)}</text>'
        )
        px += 30 + 7 * len(label)
    return parts


def timeseries_svg(steps: np.ndarray, mean: np.ndarray, std: np.ndarray,
                   truth: Optional[np.ndarray] = None,
                   observations: Optional[np.ndarray] = None,
                   title: str = "", y_label: str = "state",
                   width: float = 720.0, height: float = 360.0) -> str:
    """Ensemble mean and +/-1 std band over assimilation steps.

    ``observations``, when given, must align with ``steps``; use NaN for
    steps without a usable scalar observation.
    """
    steps = np.asarray(steps, dtype=float)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if steps.shape != mean.shape or steps.shape != std.shape:
        raise ValueError("steps, mean, and std must have identical shapes")
    stacked = [mean - std, mean + std]
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        stacked.append(truth)
    if observations is not None:
        observations = np.asarray(observations, dtype=float)
        obs_ok = np.isfinite(observations)
        if np.any(obs_ok):
            stacked.append(observations[obs_ok])
    y_range = _pad_range(np.concatenate([np.ravel(v) for v in stacked]))
    x_range = _pad_range(steps, frac=0.02)
    ax = _Axes(width, height, x_range, y_range)
    comment = [
        f"steps {_fmt_tick(steps[0])}..{_fmt_tick(steps[-1])} ({steps.size} points)",
        f"mean range [{_fmt_tick(float(mean.min()))}, {_fmt_tick(float(mean.max()))}]",
    ]
    parts = _header(width, height, title, comment)
    parts += _frame(ax, "assimilation step", y_label)

    band_pts = [f"{_fmt(ax.x(s))},{_fmt(ax.y(m - q))}" for s, m, q in zip(steps, mean, std)]
    band_pts += [f"{_fmt(ax.x(s))},{_fmt(ax.y(m + q))}"
                 for s, m, q in zip(steps[::-1], mean[::-1], std[::-1])]
    parts.append(f'<polygon points="{" ".join(band_pts)}" fill="#7aa6d6" fill-opacity="0.35"/>')
    entries = [("mean", "#1f4e8c", "line"), ("±1 std", "#7aa6d6", "band")]
    if truth is not None:
        parts.append(_polyline(steps, truth, ax, "#b03030", 1.5, dash="5,3"))
        entries.append(("truth", "#b03030", "line"))
    parts.append(_polyline(steps, mean, ax, "#1f4e8c", 1.8))
    if observations is not None:
        for s, y in zip(steps, observations):
            if np.isfinite(y):
                parts.append(
                    f'<circle cx="{_fmt(ax.x(s))}" cy="{_fmt(ax.y(y))}" r="2.5" '
                    f'fill="#2c7a2c" fill-opacity="0.8"/>'
                )
        entries.append(("observation", "#2c7a2c", "dot"))
    parts += _legend(ax, entries)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _heat_color(t: float) -> str:
    """White -> blue -> dark blue ramp on [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    r = int(round(255 + t * (20 - 255)))
    g = int(round(255 + t * (60 - 255)))
    b = int(round(255 + t * (140 - 255)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(density: np.ndarray, grid_edges: np.ndarray,
                truth: Optional[np.ndarray] = None,
                title: str = "", y_label: str = "state",
                width: float = 720.0, height: float = 360.0) -> str:
    """Per-step densities of one coordinate as a (step x bin) heat map.

    ``density`` has one row per assimilation step; ``grid_edges`` are the
    bin edges shared by all rows.  ``truth`` (length = number of steps)
    overlays the true coordinate.
    """
    density = np.asarray(density, dtype=float)
    grid_edges = np.asarray(grid_edges, dtype=float)
    if density.ndim != 2:
        raise ValueError(f"density must be 2-D (steps x bins), got shape {density.shape}")
    n_steps, n_bins = density.shape
    if grid_edges.shape != (n_bins + 1,):
        raise ValueError(f"need {n_bins + 1} grid edges for {n_bins} bins, got {grid_edges.shape}")
    peak = float(density.max())
    scale = peak if peak > 0 else 1.0
    ax = _Axes(width, height, (0.5, n_steps + 0.5), (grid_edges[0], grid_edges[-1]))
    comment = [
        f"{n_steps} steps x {n_bins} bins, peak density {_fmt_tick(peak)}",
        f"value range [{_fmt_tick(grid_edges[0])}, {_fmt_tick(grid_edges[-1])}]",
    ]
    parts = _header(width, height, title, comment)
    for k in range(n_steps):
        x0 = ax.x(k + 0.5)
        x1 = ax.x(k + 1.5)
        for b in range(n_bins):
            value = density[k, b] / scale
            if value <= 0.004:  # skip near-white cells; keeps files small
                continue
            y1 = ax.y(grid_edges[b])
            y0 = ax.y(grid_edges[b + 1])
            parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
                f'height="{_fmt(y1 - y0)}" fill="{_heat_color(value)}"/>'
            )
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != (n_steps,):
            raise ValueError(f"truth must have length {n_steps}, got shape {truth.shape}")
        parts.append(_polyline(np.arange(1, n_steps + 1), truth, ax, "#b03030", 1.5, dash="5,3"))
    parts += _frame(ax, "assimilation step", y_label)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_svg(prediction: np.ndarray, posterior: np.ndarray,
                coords: tuple = (0, 1), truth: Optional[np.ndarray] = None,
                title: str = "", width: float = 480.0, height: float = 480.0) -> str:
    """Prediction and posterior members of one step in a coordinate plane."""
    prediction = np.asarray(prediction, dtype=float)
    posterior = np.asarray(posterior, dtype=float)
    i, j = coords
    for name, arr in (("prediction", prediction), ("posterior", posterior)):
        if arr.ndim != 2 or arr.shape[1] <= max(i, j):
            raise ValueError(f"{name} must be (N, d) with d > {max(i, j)}, got shape {arr.shape}")
    both = np.concatenate([prediction[:, [i, j]], posterior[:, [i, j]]], axis=0)
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        both = np.concatenate([both, truth[None, [i, j]]], axis=0)
    x_range = _pad_range(both[:, 0])
    y_range = _pad_range(both[:, 1])
    ax = _Axes(width, height, x_range, y_range)
    comment = [
        f"{prediction.shape[0]} prediction members, {posterior.shape[0]} posterior members",
        f"coordinates ({i}, {j})",
    ]
    parts = _header(width, height, title, comment)
    parts += _frame(ax, f"x[{i}]", f"x[{j}]")
    for row in prediction:
        parts.append(
            f'<circle cx="{_fmt(ax.x(row[i]))}" cy="{_fmt(ax.y(row[j]))}" r="2.5" '
            f'fill="#888888" fill-opacity="0.55"/>'
        )
    for row in posterior:
        parts.append(
            f'<circle cx="{_fmt(ax.x(row[i]))}" cy="{_fmt(ax.y(row[j]))}" r="2.5" '
            f'fill="#1f4e8c" fill-opacity="0.7"/>'
        )
    entries = [("prediction", "#888888", "dot"), ("posterior", "#1f4e8c", "dot")]
    if truth is not None:
        parts.append(
            f'<circle cx="{_fmt(ax.x(truth[i]))}" cy="{_fmt(ax.y(truth[j]))}" r="5" '
            f'fill="none" stroke="#b03030" stroke-width="2"/>'
        )
        entries.append(("truth", "#b03030", "dot"))
    parts += _legend(ax, entries)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, svg_text: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(svg_text)
