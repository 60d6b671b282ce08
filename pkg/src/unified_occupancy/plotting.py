"""Report figures written to files (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .core import OccupancyProfile, Station  # noqa: E402

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders identical
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_sweep(sweep: pd.DataFrame, path: PathLike, title: Optional[str] = None) -> Path:
    """wMAPE against remaining coverage, highest coverage on the left."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(100 * sweep["coverage"], 100 * sweep["wmape"], marker=".", lw=1)
    ax.invert_xaxis()
    ax.set_xlabel("courses with counts (%)")
    ax.set_ylabel("wMAPE (%)")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_fraud_map(grid: pd.DataFrame, stations: Mapping[str, Station], covered,
                   path: PathLike, centroid: tuple[float, float]) -> Path:
    """Heatmap of kriged rates with covered stations filled and the others hollow."""
    from .geostat import project

    xs = np.unique(grid["x"].to_numpy())
    ys = np.unique(grid["y"].to_numpy())
    z = grid["rate"].to_numpy().reshape(len(ys), len(xs))
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(z, origin="lower", extent=(xs[0], xs[-1], ys[0], ys[-1]), cmap="magma_r",
                   vmin=0.0, vmax=max(float(z.max()), 1e-6), aspect="equal")
    fig.colorbar(im, ax=ax, label="fraud rate")
    covered = set(covered)
    ids = sorted(stations)
    sx, sy = project([stations[s].lon for s in ids], [stations[s].lat for s in ids], centroid)
    mask = np.array([s in covered for s in ids])
    ax.scatter(sx[mask], sy[mask], s=14, c="tab:cyan", edgecolors="k", lw=0.5, label="covered")
    ax.scatter(sx[~mask], sy[~mask], s=14, facecolors="none", edgecolors="k", lw=0.7,
               label="uncovered")
    ax.set_xlabel("x (km)")
    ax.set_ylabel("y (km)")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_eval_report(report: pd.DataFrame, path: PathLike, title: Optional[str] = None) -> Path:
    """Grouped bars of wMAPE per scope and method."""
    df = report.dropna(subset=["wMAPE"])
    table = df.pivot(index="scope", columns="method", values="wMAPE")
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * len(table) + 2), 3.6))
    width = 0.8 / max(len(table.columns), 1)
    pos = np.arange(len(table))
    for k, method in enumerate(table.columns):
        ax.bar(pos + k * width, 100 * table[method].to_numpy(), width, label=method)
    ax.set_xticks(pos + width * (len(table.columns) - 1) / 2)
    ax.set_xticklabels(table.index, rotation=30, ha="right")
    ax.set_ylabel("wMAPE (%)")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_profile(profile: OccupancyProfile, path: PathLike,
                 measured: Optional[np.ndarray] = None) -> Path:
    """Ticketing and total load along one course."""
    seq = np.arange(1, profile.n_stops + 1)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.step(seq, profile.ticketing, where="post", label="ticketing")
    if profile.total is not None:
        ax.step(seq, profile.total, where="post", label="total")
    if measured is not None:
        ax.plot(seq, measured, "k.", label="measured")
    ax.set_xlabel("stop")
    ax.set_ylabel("passengers on board")
    ax.set_title(profile.course_id)
    ax.legend(fontsize=8)
    return _save(fig, path)
