"""PNG figures for the CLI reports (Agg backend, no display needed)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def loglog(path, x, ys: dict, xlabel: str, ylabel: str, title: str = "", slope=None):
    """Log-log lines; ``slope`` adds a dashed reference ``x**slope`` through the first point."""
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.asarray(x, dtype=float)
    for label, y in ys.items():
        y = np.asarray(y, dtype=float)
        ok = (x > 0) & (y > 0) & np.isfinite(y)
        ax.loglog(x[ok], y[ok], "o-", label=label)
    if slope is not None and len(x) and ys:
        y0 = np.asarray(next(iter(ys.values())), dtype=float)
        if y0.size and y0[0] > 0:
            ax.loglog(x, y0[0] * (x / x[0]) ** slope, "k--", lw=0.8, label=f"slope {slope:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def semilogx(path, x, ys: dict, xlabel: str, ylabel: str, title: str = ""):
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, y in ys.items():
        ax.semilogx(x, y, "o-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def mid_slice(path, field, title: str = "", axis: int = 2):
    """Modulus of a 3-D field on the middle plane normal to ``axis``."""
    field = np.asarray(field)
    sl = np.take(field, field.shape[axis] // 2, axis=axis)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(np.abs(sl).T, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    _save(fig, path)


def compare_slices(path, fields: dict, axis: int = 2):
    fig, axes = plt.subplots(1, len(fields), figsize=(4 * len(fields), 3.6))
    axes = np.atleast_1d(axes)
    vmax = max(float(np.max(np.abs(f))) for f in fields.values()) or 1.0
    for ax, (label, f) in zip(axes, fields.items()):
        f = np.asarray(f)
        sl = np.take(f.real, f.shape[axis] // 2, axis=axis)
        im = ax.imshow(sl.T, origin="lower", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_title(label)
    fig.colorbar(im, ax=list(axes))
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
