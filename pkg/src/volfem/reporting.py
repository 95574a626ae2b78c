"""CSV tables, grayscale field dumps, and matplotlib figures.

Every report path writes delimited text first and renders a figure next to
it; figures are plain PNG files (Agg backend, no display needed).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "write_csv",
    "read_csv",
    "save_line_plot",
    "save_loglog_fit_plot",
    "save_field_png",
    "save_field_pgm",
]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def save_line_plot(path, series: dict, xlabel: str, ylabel: str, title: str = "",
                   logy: bool = False, logx: bool = False):
    """Plot named (x, y) curves to a PNG. ``series`` maps label -> (x, y)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for label, (x, y) in series.items():
        ax.plot(x, y, label=label, linewidth=1.4)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_loglog_fit_plot(path, sizes, errors, coeff: float, exponent: float,
                         xlabel: str = "training set size", ylabel: str = "test error"):
    """Scatter of (sizes, errors) with the fitted power law overlaid."""
    sizes = np.asarray(sizes, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    ax.loglog(sizes, errors, "o", label="measured")
    xs = np.geomspace(sizes.min(), sizes.max(), 64)
    ax.loglog(xs, coeff * xs**exponent, "--", label=f"fit: {coeff:.3g} x^{exponent:.3f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_field_png(path, field: np.ndarray, title: str = ""):
    """Render a 2-D nodal field as an image with a colorbar."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    fig, ax = plt.subplots(figsize=(4.6, 4.0), dpi=120)
    im = ax.imshow(field, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_field_pgm(path, field: np.ndarray):
    """8-bit binary PGM dump of a 2-D field, linearly rescaled to 0..255."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    lo, hi = field.min(), field.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((field - lo) * scale).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
