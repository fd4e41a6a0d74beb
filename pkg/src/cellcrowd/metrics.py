"""Order parameters and their time/space statistics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, neighbor_pairs, pair_vectors
from .polarity import polarity_vectors

log = logging.getLogger(__name__)


def polarity_order(theta) -> float:
    """Norm of the mean polarity: 1 for perfect alignment, ~0 for disorder."""
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0:
        raise ValueError("need at least one cell")
    return float(np.hypot(np.mean(np.cos(theta)), np.mean(np.sin(theta))))


def mean_speed(V, c: float) -> float:
    """Mean speed in units of the desired speed ``c``."""
    if not c > 0:
        raise ValueError("c must be positive")
    V = np.asarray(V, dtype=float).reshape(-1, 2)
    return float(np.mean(np.hypot(V[:, 0], V[:, 1])) / c)


def _tangential_projection(theta, X, center):
    d = np.asarray(X, dtype=float).reshape(-1, 2) - np.asarray(center, dtype=float)
    r = np.hypot(d[:, 0], d[:, 1])
    P = polarity_vectors(theta)
    # e = rot90(d) / |d|, rot90(x, y) = (-y, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        proj = (-P[:, 0] * d[:, 1] + P[:, 1] * d[:, 0]) / r
    return proj, r


def rotation_order(theta, X, center) -> float:
    """Mean tangential component of the polarity about ``center``.

    +1 is a counter-clockwise vortex, -1 a clockwise one. Cells sitting
    exactly on the center are skipped.
    """
    proj, r = _tangential_projection(theta, X, center)
    ok = r > 0
    if not ok.all():
        log.info("rotation_order: skipping %d cell(s) at the center", int((~ok).sum()))
    if not ok.any():
        return math.nan
    return float(np.mean(proj[ok]))


def regional_rotation_order(theta, X, center, annuli) -> list[float]:
    """Rotation order restricted to each annulus ``r_lo <= r < r_hi``; NaN if empty."""
    proj, r = _tangential_projection(theta, X, center)
    out = []
    for lo, hi in annuli:
        sel = (r >= lo) & (r < hi) & (r > 0)
        out.append(float(np.mean(proj[sel])) if sel.any() else math.nan)
    return out


def equal_area_annuli(R: float) -> list[tuple[float, float]]:
    """Inner disk and outer ring of equal area."""
    return [(0.0, R / math.sqrt(2.0)), (R / math.sqrt(2.0), math.inf)]


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int


def pair_distance_histogram(X, domain: Domain, r_max: float, bin_width: float) -> Histogram:
    """Histogram of center-center distances below ``r_max``.

    ``overflow`` counts the remaining pairs so that counts plus overflow is
    always ``N (N - 1) / 2``.
    """
    if not (r_max > 0 and bin_width > 0):
        raise ValueError("r_max and bin_width must be positive")
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    n = len(X)
    nbins = int(math.ceil(r_max / bin_width - 1e-12))
    edges = np.arange(nbins + 1) * bin_width
    pairs = neighbor_pairs(X, r_max, domain) if n > 1 else np.zeros((0, 2), dtype=int)
    if len(pairs):
        _, r = pair_vectors(domain, X, pairs[:, 0], pairs[:, 1])
        r = r[r < r_max]
    else:
        r = np.zeros(0)
    idx = np.minimum((r / bin_width).astype(int), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)[:nbins]
    return Histogram(edges, counts, n * (n - 1) // 2 - int(counts.sum()))


COLUMNS = ("step", "t", "phi", "vbar", "phi_rot", "min_pair_gap", "min_boundary_gap",
           "uzawa_iters")


@dataclass
class MetricsSeries:
    """Column store of sampled metrics; ``regional`` holds one list per sample."""

    data: dict[str, list] = field(default_factory=lambda: {k: [] for k in COLUMNS})
    regional: list[list[float]] = field(default_factory=list)

    def append(self, regional=None, **values):
        for k in COLUMNS:
            self.data[k].append(values[k])
        self.regional.append(list(regional) if regional is not None else [])

    def __len__(self):
        return len(self.data["t"])

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.data[name], dtype=float)

    def tail_average(self, name: str, T: float) -> float:
        return tail_average(self.column("t"), self.column(name), T)


def tail_average(t, values, T: float) -> float:
    """Mean of the samples with ``t >= 7T/8``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = t >= 7.0 * T / 8.0 - 1e-9 * max(T, 1.0)
    if not sel.any():
        raise ValueError("no samples in the averaging window [7T/8, T]")
    w = values[sel]
    # centered on the first sample so a constant series comes back exactly
    return float(w[0] + np.mean(w - w[0]))
