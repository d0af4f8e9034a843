"""Deterministic standalone SVG charts: metric curves, ROC and confusion heatmap.

Coordinates are printed with fixed precision and elements are emitted in
input order, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
from html import escape

WIDTH, HEIGHT = 480, 360
MARGIN = {"left": 60, "right": 110, "top": 40, "bottom": 50}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


def _num(v: float) -> str:
    text = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _header(title: str, run: dict | None) -> list:
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">']
    if run is not None:
        # '--' is illegal inside an XML comment
        manifest = json.dumps(run, sort_keys=True).replace("--", "- -")
        lines.append(f"<!-- run {manifest} -->")
    lines.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    lines.append(f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-size="14">'
                 f'{escape(title)}</text>')
    return lines


class _Frame:
    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1
        self.left = MARGIN["left"]
        self.right = WIDTH - MARGIN["right"]
        self.top = MARGIN["top"]
        self.bottom = HEIGHT - MARGIN["bottom"]

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y):
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def axes(self, x_label: str, y_label: str, ticks: int = 5) -> list:
        out = [f'<rect x="{self.left}" y="{self.top}" width="{self.right - self.left}" '
               f'height="{self.bottom - self.top}" fill="none" stroke="#333"/>']
        for i in range(ticks + 1):
            xv = self.x0 + (self.x1 - self.x0) * i / ticks
            yv = self.y0 + (self.y1 - self.y0) * i / ticks
            x, y = _num(self.px(xv)), _num(self.py(yv))
            out.append(f'<text x="{x}" y="{self.bottom + 15}" text-anchor="middle">{_num(xv)}</text>')
            out.append(f'<text x="{self.left - 6}" y="{y}" text-anchor="end" '
                       f'dominant-baseline="middle">{_tick(yv)}</text>')
        out.append(f'<text x="{(self.left + self.right) // 2}" y="{HEIGHT - 12}" '
                   f'text-anchor="middle">{escape(x_label)}</text>')
        out.append(f'<text x="16" y="{(self.top + self.bottom) // 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(self.top + self.bottom) // 2})">{escape(y_label)}</text>')
        return out


def _tick(v: float) -> str:
    return f"{v:.3g}"


def line_chart(series: dict, title: str, x_label: str, y_label: str,
               y_range: tuple | None = None, run: dict | None = None) -> str:
    """One polyline plus point markers per series. ``series`` maps name -> [(x, y)]."""
    pts = [p for values in series.values() for p in values if p[1] is not None]
    xs = [p[0] for p in pts] or [0, 1]
    ys = [p[1] for p in pts] or [0, 1]
    frame = _Frame((min(xs), max(xs)), y_range or (min(0.0, min(ys)), max(ys)))
    lines = _header(title, run) + frame.axes(x_label, y_label)
    for i, (name, values) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        kept = [(x, y) for x, y in values if y is not None]
        coords = " ".join(f"{_num(frame.px(x))},{_num(frame.py(y))}" for x, y in kept)
        lines.append(f'<g class="series" data-name="{escape(name)}">')
        if len(kept) > 1:
            lines.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in kept:
            lines.append(f'<circle cx="{_num(frame.px(x))}" cy="{_num(frame.py(y))}" r="2.5" '
                         f'fill="{color}"/>')
        lines.append("</g>")
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        lines.append(f'<rect x="{lx}" y="{ly - 6}" width="12" height="3" fill="{color}"/>')
        lines.append(f'<text x="{lx + 16}" y="{ly}">{escape(name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def accuracy_plot(history, run: dict | None = None) -> str:
    epochs = history.column("epoch")
    series = {"train": list(zip(epochs, history.column("train_acc")))}
    if any(v is not None for v in history.column("val_acc")):
        series["validation"] = list(zip(epochs, history.column("val_acc")))
    return line_chart(series, "Accuracy vs. epochs", "epoch", "accuracy", (0.0, 1.0), run)


def loss_plot(history, run: dict | None = None) -> str:
    epochs = history.column("epoch")
    series = {"train": list(zip(epochs, history.column("train_loss")))}
    if any(v is not None for v in history.column("val_loss")):
        series["validation"] = list(zip(epochs, history.column("val_loss")))
    return line_chart(series, "Loss vs. epochs", "epoch", "loss", None, run)


def roc_plot(curve, auc_value: float | None = None, run: dict | None = None) -> str:
    frame = _Frame((0.0, 1.0), (0.0, 1.0))
    title = "ROC curve" if auc_value is None else f"ROC curve (AUC {auc_value:.4f})"
    lines = _header(title, run) + frame.axes("false positive rate", "true positive rate")
    lines.append(f'<line x1="{_num(frame.px(0))}" y1="{_num(frame.py(0))}" x2="{_num(frame.px(1))}" '
                 f'y2="{_num(frame.py(1))}" stroke="#999" stroke-dasharray="4 3"/>')
    coords = " ".join(f"{_num(frame.px(float(f)))},{_num(frame.py(float(t)))}"
                      for f, t in zip(curve.fpr, curve.tpr))
    lines.append(f'<polyline points="{coords}" fill="none" stroke="{PALETTE[0]}" stroke-width="2"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def confusion_heatmap(cm, run: dict | None = None,
                      class_names: tuple = ("positive", "negative")) -> str:
    """2x2 grid: rows are the true class, columns the predicted class."""
    lines = _header("Confusion matrix", run)
    grid = cm.as_grid()
    peak = max(max(row) for row in grid) or 1
    cell, x0, y0 = 110, 150, 70
    names = (("TP", "FN"), ("FP", "TN"))
    for r in range(2):
        for c in range(2):
            value = grid[r][c]
            shade = int(round(255 - 200 * value / peak))
            fill = f"#{shade:02x}{shade:02x}ff"
            x, y = x0 + c * cell, y0 + r * cell
            text_color = "white" if shade < 140 else "black"
            lines.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" '
                         f'stroke="#333"/>')
            lines.append(f'<text class="cell" x="{x + cell // 2}" y="{y + cell // 2}" '
                         f'text-anchor="middle" font-size="20" fill="{text_color}">{value}</text>')
            lines.append(f'<text x="{x + cell // 2}" y="{y + cell // 2 + 22}" text-anchor="middle" '
                         f'fill="{text_color}">{names[r][c]}</text>')
    for i, name in enumerate(class_names):
        lines.append(f'<text x="{x0 - 8}" y="{y0 + i * cell + cell // 2}" text-anchor="end">'
                     f'{escape(name)}</text>')
        lines.append(f'<text x="{x0 + i * cell + cell // 2}" y="{y0 - 8}" text-anchor="middle">'
                     f'{escape(name)}</text>')
    lines.append(f'<text x="{x0 + cell}" y="{y0 + 2 * cell + 24}" text-anchor="middle">predicted</text>')
    lines.append(f'<text x="{x0 - 70}" y="{y0 - 8}" text-anchor="middle">true</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
