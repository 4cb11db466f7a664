"""Minimal hand-rolled SVG output for curves and trajectory overlays.

Self-contained vector files with no plotting dependency; coordinates are
mapped into a fixed viewport with equal margins and simple min/max axis
labels.
"""

import numpy as np

MARGIN = 46.0


def _ramp(t):
    # cold blue at 0 to warm red at 1
    t = min(1.0, max(0.0, float(t)))
    r = int(round(40 + t * (225 - 40)))
    g = int(round(90 - t * (90 - 60)))
    b = int(round(225 - t * (225 - 45)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _bounds(arrays, pad=0.05):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


class _Canvas:
    def __init__(self, width, height, title):
        self.w, self.h = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]
        if title:
            self.text(width / 2, 18, title, anchor="middle", size=13)

    def line(self, x1, y1, x2, y2, color="#444444", width=1.0):
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts, color, width=1.5, opacity=1.0):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity:.3f}"/>')

    def circle(self, x, y, r, color):
        self.parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.1f}" fill="{color}"/>')

    def text(self, x, y, s, anchor="start", size=11, color="#222222"):
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" '
            f'font-size="{size}" fill="{color}" '
            f'text-anchor="{anchor}">{s}</text>')

    def save(self, path):
        self.parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _mapper(canvas, xlo, xhi, ylo, yhi):
    iw = canvas.w - 2 * MARGIN
    ih = canvas.h - 2 * MARGIN

    def to_px(x, y):
        px = MARGIN + (x - xlo) / (xhi - xlo) * iw
        py = canvas.h - MARGIN - (y - ylo) / (yhi - ylo) * ih
        return px, py

    return to_px


def _axes(canvas, to_px, xlo, xhi, ylo, yhi):
    x0, y0 = to_px(xlo, ylo)
    x1, y1 = to_px(xhi, yhi)
    canvas.line(x0, y0, x1, y0)
    canvas.line(x0, y0, x0, y1)
    canvas.text(x0, y0 + 16, f"{xlo:.3g}", anchor="middle")
    canvas.text(x1, y0 + 16, f"{xhi:.3g}", anchor="middle")
    canvas.text(x0 - 6, y0 + 4, f"{ylo:.3g}", anchor="end")
    canvas.text(x0 - 6, y1 + 4, f"{yhi:.3g}", anchor="end")


PALETTE = ("#2458c8", "#d8401e", "#1e8c50", "#8440b4", "#b88a14")


def line_plot(path, x, series, labels=None, title="", size=(520, 340)):
    """One or more y-series against a shared x vector."""
    x = np.asarray(x, dtype=float)
    series = [np.asarray(s, dtype=float) for s in series]
    if not series or any(s.shape != x.shape for s in series):
        raise ValueError("line_plot: series must match x in shape")
    canvas = _Canvas(size[0], size[1], title)
    xlo, xhi = _bounds([x])
    ylo, yhi = _bounds(series)
    to_px = _mapper(canvas, xlo, xhi, ylo, yhi)
    _axes(canvas, to_px, xlo, xhi, ylo, yhi)
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        canvas.polyline([to_px(a, b) for a, b in zip(x, s)], color, width=2.0)
        if labels:
            canvas.text(size[0] - MARGIN, MARGIN + 14 * k, labels[k],
                        anchor="end", color=color)
    canvas.save(path)


def trajectory_overlay(path, history, ground_truth, samples,
                       sample_values=None, title="", size=(480, 480)):
    """History, ground truth, and sampled futures in one picture.

    sample_values, when given, color each sample by its conditioning
    value on a blue-to-red ramp.
    """
    history = np.asarray(history, dtype=float)
    arrays = [history] + [np.asarray(s, dtype=float) for s in samples]
    if ground_truth is not None:
        ground_truth = np.asarray(ground_truth, dtype=float)
        arrays.append(ground_truth)
    canvas = _Canvas(size[0], size[1], title)
    xlo, xhi = _bounds([a[:, 0] for a in arrays])
    ylo, yhi = _bounds([a[:, 1] for a in arrays])
    # equal scale on both axes so shapes are not distorted
    span = max(xhi - xlo, yhi - ylo)
    xc, yc = 0.5 * (xlo + xhi), 0.5 * (ylo + yhi)
    xlo, xhi = xc - span / 2, xc + span / 2
    ylo, yhi = yc - span / 2, yc + span / 2
    to_px = _mapper(canvas, xlo, xhi, ylo, yhi)
    _axes(canvas, to_px, xlo, xhi, ylo, yhi)
    for k, s in enumerate(samples):
        color = "#7a7a7a" if sample_values is None else _ramp(sample_values[k])
        pts = [to_px(*history[-1])] + [to_px(a, b) for a, b in np.asarray(s)]
        canvas.polyline(pts, color, width=1.2, opacity=0.55)
    canvas.polyline([to_px(a, b) for a, b in history], "#c02020", width=2.5)
    canvas.circle(*to_px(*history[-1]), 3.0, "#c02020")
    if ground_truth is not None:
        pts = [to_px(*history[-1])] + [to_px(a, b) for a, b in ground_truth]
        canvas.polyline(pts, "#2040c0", width=2.5)
    canvas.save(path)
