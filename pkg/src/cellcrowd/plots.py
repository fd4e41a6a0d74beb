"""Static SVG figures, each written next to the CSV of the data it shows."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import read_table  # noqa: E402
from .metrics import Histogram  # noqa: E402

log = logging.getLogger(__name__)

QUANTITIES = ("phi", "vbar", "phi_rot")
LABELS = {"phi": r"order parameter $\varphi$", "vbar": r"mean speed $\bar v$",
          "phi_rot": r"rotation order $\varphi_{rot}$", "abs_phi_rot": r"$|\varphi_{rot}|$"}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_series(table: dict, out_dir: Path, stem: str = "series") -> list[Path]:
    """Time series of the order parameters, one panel each."""
    if "t" not in table:
        log.warning("series has no 't' column; nothing to plot")
        return []
    names = [q for q in QUANTITIES if q in table]
    missing = set(QUANTITIES) - set(names)
    if missing:
        log.warning("skipping missing columns: %s", ", ".join(sorted(missing)))
    if not names:
        return []
    t = table["t"]
    fig, axes = plt.subplots(len(names), 1, figsize=(6, 2.2 * len(names)), sharex=True,
                             squeeze=False)
    for ax, q in zip(axes[:, 0], names):
        ax.plot(t, table[q], lw=1)
        ax.set_ylabel(LABELS[q])
    axes[-1, 0].set_xlabel("t (h)")
    out = [_save(fig, out_dir / f"{stem}.svg")]
    _write_csv(out_dir / f"{stem}.csv", ["t", *names],
               zip(*(np.asarray(table[c]).tolist() for c in ["t", *names])))
    return out + [out_dir / f"{stem}.csv"]


def _axis_columns(table: dict) -> list[str]:
    cols = list(table)
    return cols[:cols.index("point")] if "point" in cols else []


def aggregate(table: dict) -> tuple[list[str], list[tuple], dict[str, np.ndarray]]:
    """Group summary rows by axis values; return per-point quartiles of each quantity."""
    axes = _axis_columns(table)
    ok = np.array([s == "ok" for s in table["status"]]) if "status" in table else None
    keys = list(zip(*(table[a] for a in axes))) if axes else [()] * len(table["point"])
    points = sorted(set(keys), key=lambda k: tuple(float(v) if _is_num(v) else str(v) for v in k))
    stats: dict[str, np.ndarray] = {}
    for q in QUANTITIES + ("abs_phi_rot",):
        src = "phi_rot" if q == "abs_phi_rot" else q
        if src not in table:
            continue
        vals = np.asarray(table[src], dtype=float)
        if q == "abs_phi_rot":
            vals = np.abs(vals)
        arr = np.full((len(points), 4), np.nan)
        for k, pt in enumerate(points):
            sel = np.array([key == pt for key in keys])
            if ok is not None:
                sel &= ok
            x = vals[sel]
            x = x[np.isfinite(x)]
            if x.size:
                arr[k] = [x.mean(), *np.percentile(x, [25, 50, 75])]
        stats[q] = arr
    return axes, points, stats


def _is_num(v) -> bool:
    try:
        float(v)
        return True
    except (TypeError, ValueError):
        return False


def plot_summary(table: dict, out_dir: Path, stem: str = "summary") -> list[Path]:
    """Band plots (one axis) or heatmaps of the mean (two axes)."""
    if "point" not in table:
        log.warning("summary has no 'point' column; nothing to plot")
        return []
    axes, points, stats = aggregate(table)
    if not stats:
        log.warning("summary has none of the columns %s", ", ".join(QUANTITIES))
        return []
    out: list[Path] = []
    rows = []
    for k, pt in enumerate(points):
        row = list(pt)
        for q in stats:
            row += stats[q][k].tolist()
        rows.append(row)
    header = list(axes)
    for q in stats:
        header += [f"{q}_mean", f"{q}_q25", f"{q}_median", f"{q}_q75"]
    _write_csv(out_dir / f"{stem}_aggregates.csv", header, rows)
    out.append(out_dir / f"{stem}_aggregates.csv")

    if len(axes) == 2 and all(_is_num(v) for pt in points for v in pt):
        xs = sorted({float(p[0]) for p in points})
        ys = sorted({float(p[1]) for p in points})
        for q, arr in stats.items():
            grid = np.full((len(ys), len(xs)), np.nan)
            for k, pt in enumerate(points):
                grid[ys.index(float(pt[1])), xs.index(float(pt[0]))] = arr[k, 0]
            fig, ax = plt.subplots(figsize=(4.5, 3.8))
            im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
            ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
            ax.set_yticks(range(len(ys)), [f"{v:g}" for v in ys])
            ax.set_xlabel(axes[0])
            ax.set_ylabel(axes[1])
            ax.set_title(LABELS[q])
            fig.colorbar(im, ax=ax)
            out.append(_save(fig, out_dir / f"{stem}_{q}_heatmap.svg"))
        return out

    if len(axes) == 1 and all(_is_num(p[0]) for p in points):
        x = np.array([float(p[0]) for p in points])
        xlabel = axes[0]
    else:
        if len(axes) > 1:
            log.warning("more than two sweep axes; plotting points in sweep order")
        x = np.arange(len(points), dtype=float)
        xlabel = "point"
    for q, arr in stats.items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.fill_between(x, arr[:, 1], arr[:, 3], alpha=0.3, label="interquartile")
        ax.plot(x, arr[:, 0], marker="o", label="mean")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(LABELS[q])
        if xlabel == "point":
            ax.set_xticks(x, ["/".join(str(v) for v in p) for p in points], rotation=45)
        ax.legend()
        out.append(_save(fig, out_dir / f"{stem}_{q}.svg"))
    return out


def plot_histogram(hist: Histogram, path: Path) -> list[Path]:
    path = Path(path)
    centers = 0.5 * (hist.edges[:-1] + hist.edges[1:])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(centers, hist.counts, width=np.diff(hist.edges), align="center")
    ax.set_xlabel("center distance (um)")
    ax.set_ylabel("pairs")
    svg = _save(fig, path.with_suffix(".svg"))
    _write_csv(path.with_suffix(".csv"), ["lo", "hi", "count"],
               zip(hist.edges[:-1].tolist(), hist.edges[1:].tolist(), hist.counts.tolist()))
    return [svg, path.with_suffix(".csv")]


def emit_plots(path, out_dir=None) -> list[Path]:
    """Plot a sweep summary or a metrics series, chosen by its columns."""
    path = Path(path)
    out_dir = Path(out_dir) if out_dir else path.parent / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    table = read_table(path)
    if not table:
        log.warning("%s is empty; nothing to plot", path)
        return []
    if "point" in table:
        return plot_summary(table, out_dir, path.stem)
    return plot_series(table, out_dir, path.stem)
