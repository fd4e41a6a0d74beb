"""Domains, signed gaps and neighbor search for disk-shaped cells.

All lengths are in micrometres. Positions are ``(N, 2)`` float arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from numba import njit

HEX_PACKING = math.pi / (2.0 * math.sqrt(3.0))


class GeometryError(ValueError):
    """Raised for degenerate geometric queries (coincident centers, bad shapes)."""


@dataclass(frozen=True)
class PeriodicSquare:
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise GeometryError(f"box length must be positive, got {self.L}")


@dataclass(frozen=True)
class WalledSquare:
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise GeometryError(f"box length must be positive, got {self.L}")


@dataclass(frozen=True)
class Disk:
    R: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.R > 0:
            raise GeometryError(f"disk radius must be positive, got {self.R}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


Shape = Union[PeriodicSquare, WalledSquare, Disk]


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"obstacle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True)
class Domain:
    shape: Shape
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.obstacles and isinstance(self.shape, PeriodicSquare):
            raise GeometryError("periodic domains do not support obstacles")
        for ob in self.obstacles:
            c = np.asarray(ob.center)
            if isinstance(self.shape, WalledSquare):
                inside = np.all(c - ob.radius > 0) and np.all(c + ob.radius < self.shape.L)
            else:
                inside = np.linalg.norm(c - self.shape.center) + ob.radius < self.shape.R
            if not inside:
                raise GeometryError(f"obstacle {ob} is not inside the domain interior")

    @property
    def periodic(self) -> bool:
        return isinstance(self.shape, PeriodicSquare)

    @property
    def box(self) -> float:
        """Periodic box length, 0 for bounded shapes."""
        return self.shape.L if self.periodic else 0.0

    @property
    def center(self) -> np.ndarray:
        if isinstance(self.shape, Disk):
            return np.array(self.shape.center)
        return np.array([self.shape.L / 2.0, self.shape.L / 2.0])

    @property
    def n_walls(self) -> int:
        if isinstance(self.shape, WalledSquare):
            return 4
        return 1 if isinstance(self.shape, Disk) else 0

    def wrap(self, X: np.ndarray) -> np.ndarray:
        if not self.periodic:
            return X
        L = self.shape.L
        Y = np.mod(X, L)
        # np.mod can return exactly L for tiny negative inputs
        Y[Y >= L] -= L
        return Y


def _min_image(d, L):
    # components in (-L/2, L/2]
    return d - L * np.ceil(d / L - 0.5)


def displacement(domain: Domain, a, b) -> np.ndarray:
    """Vector from ``a`` to ``b`` (minimum image in periodic boxes)."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if domain.periodic:
        d = _min_image(d, domain.shape.L)
    return d


def pair_gap(domain: Domain, xi, xj, R0: float) -> tuple[float, np.ndarray]:
    """Signed clearance between cells ``i`` and ``j`` and the unit vector from ``j`` to ``i``.

    The unit vector is the gradient of the gap with respect to ``xi``.
    """
    d = displacement(domain, xj, xi)
    r = float(np.hypot(d[0], d[1]))
    if r == 0.0:
        raise GeometryError("coincident cell centers: state is corrupted")
    return r - 2.0 * R0, d / r


def boundary_gaps(domain: Domain, xi, R0: float) -> list[tuple[float, np.ndarray]]:
    """Gaps and inward unit normals for every wall and obstacle seen by one cell.

    Square walls are ordered ``x=0, x=L, y=0, y=L``; obstacles follow in
    domain order.
    """
    x = np.asarray(xi, dtype=float)
    out: list[tuple[float, np.ndarray]] = []
    shape = domain.shape
    if isinstance(shape, WalledSquare):
        L = shape.L
        out.append((x[0] - R0, np.array([1.0, 0.0])))
        out.append((L - x[0] - R0, np.array([-1.0, 0.0])))
        out.append((x[1] - R0, np.array([0.0, 1.0])))
        out.append((L - x[1] - R0, np.array([0.0, -1.0])))
    elif isinstance(shape, Disk):
        d = x - np.asarray(shape.center)
        r = float(np.hypot(d[0], d[1]))
        if r == 0.0:
            raise GeometryError("cell exactly at the disk center has no boundary normal")
        out.append((shape.R - r - R0, -d / r))
    for ob in domain.obstacles:
        d = x - np.asarray(ob.center)
        r = float(np.hypot(d[0], d[1]))
        if r == 0.0:
            raise GeometryError("cell center coincides with an obstacle center")
        out.append((r - R0 - ob.radius, d / r))
    return out


def area(domain: Domain) -> float:
    """Area available to cells: the shape minus the obstacle disks."""
    shape = domain.shape
    if isinstance(shape, Disk):
        a = math.pi * shape.R**2
    else:
        a = shape.L**2
    return a - sum(math.pi * ob.radius**2 for ob in domain.obstacles)


def density(n: int, R0: float, domain: Domain) -> float:
    return n * math.pi * R0**2 / area(domain)


def n_for_density(rho: float, R0: float, domain: Domain) -> int:
    """Cell count whose packing fraction is closest to ``rho``."""
    return max(1, int(round(rho * area(domain) / (math.pi * R0**2))))


# ---------------------------------------------------------------------------
# vectorized queries used by the time stepper


def pair_vectors(domain: Domain, X: np.ndarray, i: np.ndarray, j: np.ndarray):
    """Return ``(d, r)`` with ``d = X[i] - X[j]`` (minimum image) and ``r = |d|``."""
    d = X[i] - X[j]
    if domain.periodic:
        d = _min_image(d, domain.shape.L)
    r = np.hypot(d[:, 0], d[:, 1])
    return d, r


class PairTable(NamedTuple):
    """Candidate pairs with their separation vectors ``d = X[i] - X[j]`` and lengths."""

    i: np.ndarray
    j: np.ndarray
    d: np.ndarray
    r: np.ndarray

    def within(self, cutoff: float) -> "PairTable":
        if len(self.r) == 0 or self.r.max() <= cutoff:
            return self
        keep = self.r <= cutoff
        return PairTable(self.i[keep], self.j[keep], self.d[keep], self.r[keep])


def pair_table(domain: Domain, X: np.ndarray, pairs, cutoff: float) -> PairTable:
    """Pairs within ``cutoff``.

    ``pairs`` is ``None`` (search from scratch), an ``(M, 2)`` index array
    or a :class:`PairTable`; either of the latter must contain every pair
    within ``cutoff``.
    """
    if isinstance(pairs, PairTable):
        return pairs.within(cutoff)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if pairs is None:
        if len(X) <= BRUTE_MAX:
            return _direct_table(X, cutoff, domain)
        pairs = neighbor_pairs(X, cutoff, domain)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    d, r = pair_vectors(domain, X, pairs[:, 0], pairs[:, 1])
    return PairTable(pairs[:, 0], pairs[:, 1], d, r).within(cutoff)


def boundary_table(domain: Domain, X: np.ndarray, R0: float, activation: float = np.inf):
    """All cell-wall and cell-obstacle rows with gap <= ``activation``.

    Returns
    -------
    cell : int array
    ident : int array
        Wall id (0..3 for squares, 0 for the disk) or obstacle id.
    is_obstacle : bool array
    gap : float array
    normal : (M, 2) float array
        Inward unit normal, i.e. the gradient of the gap w.r.t. the cell position.
    """
    n = X.shape[0]
    cells, idents, obst, gaps, normals = [], [], [], [], []
    shape = domain.shape
    idx = np.arange(n)
    if isinstance(shape, WalledSquare):
        L = shape.L
        walls = (
            (X[:, 0] - R0, (1.0, 0.0)),
            (L - X[:, 0] - R0, (-1.0, 0.0)),
            (X[:, 1] - R0, (0.0, 1.0)),
            (L - X[:, 1] - R0, (0.0, -1.0)),
        )
        for w, (g, nrm) in enumerate(walls):
            sel = g <= activation
            k = int(sel.sum())
            cells.append(idx[sel])
            idents.append(np.full(k, w))
            obst.append(np.zeros(k, dtype=bool))
            gaps.append(g[sel])
            normals.append(np.tile(nrm, (k, 1)))
    elif isinstance(shape, Disk):
        d = X - np.asarray(shape.center)
        r = np.hypot(d[:, 0], d[:, 1])
        g = shape.R - r - R0
        sel = g <= activation
        if np.any(r[sel] == 0.0):
            raise GeometryError("cell exactly at the disk center has no boundary normal")
        cells.append(idx[sel])
        idents.append(np.zeros(int(sel.sum()), dtype=int))
        obst.append(np.zeros(int(sel.sum()), dtype=bool))
        gaps.append(g[sel])
        normals.append(-d[sel] / r[sel, None])
    for o, ob in enumerate(domain.obstacles):
        d = X - np.asarray(ob.center)
        r = np.hypot(d[:, 0], d[:, 1])
        g = r - R0 - ob.radius
        sel = g <= activation
        if np.any(r[sel] == 0.0):
            raise GeometryError("cell center coincides with an obstacle center")
        k = int(sel.sum())
        cells.append(idx[sel])
        idents.append(np.full(k, o))
        obst.append(np.ones(k, dtype=bool))
        gaps.append(g[sel])
        normals.append(d[sel] / r[sel, None])
    if not cells:
        return (np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=bool),
                np.zeros(0), np.zeros((0, 2)))
    return (np.concatenate(cells).astype(np.int64), np.concatenate(idents).astype(np.int64),
            np.concatenate(obst), np.concatenate(gaps), np.concatenate(normals).reshape(-1, 2))


def min_gaps(domain: Domain, X: np.ndarray, R0: float, pairs=None) -> tuple[float, float]:
    """Smallest pair gap and smallest wall/obstacle gap.

    Pair gaps above 1 um are not resolved and give ``inf``, as does a
    domain without walls. ``pairs`` may be an index superset of the pairs
    within ``2 R0 + 1``.
    """
    tab = pair_table(domain, X, pairs, 2.0 * R0 + 1.0)
    if len(tab.r):
        pmin = float(tab.r.min() - 2.0 * R0)
    else:
        pmin = math.inf
    _, _, _, g, _ = boundary_table(domain, X, R0)
    bmin = float(g.min()) if len(g) else math.inf
    return pmin, bmin


# ---------------------------------------------------------------------------
# cell list


@njit(cache=True)
def _bin_particles(pos, origin, width, nx, ny):
    n = pos.shape[0]
    head = np.full(nx * ny, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    for p in range(n):
        bx = int((pos[p, 0] - origin[0]) / width)
        by = int((pos[p, 1] - origin[1]) / width)
        bx = min(max(bx, 0), nx - 1)
        by = min(max(by, 0), ny - 1)
        b = bx + nx * by
        nxt[p] = head[b]
        head[b] = p
    return head, nxt


@njit(cache=True)
def _scan_bins(pos, cutoff, origin, width, nx, ny, box, out_i, out_j, fill):
    """Visit each unordered pair within ``cutoff`` once; count or write them."""
    head, nxt = _bin_particles(pos, origin, width, nx, ny)
    c2 = cutoff * cutoff
    count = 0
    for by in range(ny):
        for bx in range(nx):
            a = head[bx + nx * by]
            while a >= 0:
                for dy in range(-1, 2):
                    qy = by + dy
                    if box > 0.0:
                        qy = qy % ny
                    elif qy < 0 or qy >= ny:
                        continue
                    for dx in range(-1, 2):
                        qx = bx + dx
                        if box > 0.0:
                            qx = qx % nx
                        elif qx < 0 or qx >= nx:
                            continue
                        c = head[qx + nx * qy]
                        while c >= 0:
                            if a < c:
                                ddx = pos[a, 0] - pos[c, 0]
                                ddy = pos[a, 1] - pos[c, 1]
                                if box > 0.0:
                                    ddx -= box * np.ceil(ddx / box - 0.5)
                                    ddy -= box * np.ceil(ddy / box - 0.5)
                                if ddx * ddx + ddy * ddy <= c2:
                                    if fill:
                                        out_i[count] = a
                                        out_j[count] = c
                                    count += 1
                            c = nxt[c]
                a = nxt[a]
    return count


# below this many cells a direct O(N^2) scan beats the cell list and
# yields pairs already in lexicographic order
BRUTE_MAX = 600


@njit(cache=True)
def _brute_table(pos, cutoff, box):
    n = pos.shape[0]
    m = n * (n - 1) // 2
    oi = np.empty(m, dtype=np.int64)
    oj = np.empty(m, dtype=np.int64)
    d = np.empty((m, 2))
    r = np.empty(m)
    c2 = cutoff * cutoff
    count = 0
    for a in range(n):
        for c in range(a + 1, n):
            ddx = pos[a, 0] - pos[c, 0]
            ddy = pos[a, 1] - pos[c, 1]
            if box > 0.0:
                ddx -= box * np.ceil(ddx / box - 0.5)
                ddy -= box * np.ceil(ddy / box - 0.5)
            rr = ddx * ddx + ddy * ddy
            if rr <= c2:
                oi[count] = a
                oj[count] = c
                d[count, 0] = ddx
                d[count, 1] = ddy
                r[count] = np.sqrt(rr)
                count += 1
    return oi[:count].copy(), oj[:count].copy(), d[:count].copy(), r[:count].copy()


def _direct_table(pos, cutoff: float, domain: Domain) -> PairTable:
    box = domain.shape.L if domain.periodic else 0.0
    if domain.periodic:
        pos = domain.wrap(pos.copy())
    return PairTable(*_brute_table(pos, float(cutoff), float(box)))


def neighbor_pairs(positions, cutoff: float, domain: Domain) -> np.ndarray:
    """Index pairs ``(i, j)``, ``i < j``, whose centers lie within ``cutoff``.

    Small systems, and periodic boxes too small for three bins per side,
    use a direct scan. Larger ones use a uniform cell list with bins no
    smaller than ``max(cutoff, L/64)``. Rows are sorted lexicographically.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 2)
    n = pos.shape[0]
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    if n <= BRUTE_MAX or (domain.periodic and domain.shape.L < 3.0 * cutoff):
        t = _direct_table(pos, cutoff, domain)
        return np.stack([t.i, t.j], axis=1)
    empty = np.zeros(0, dtype=np.int64)
    if domain.periodic:
        L = domain.shape.L
        pos = domain.wrap(pos.copy())
        nb = int(L // max(cutoff, L / 64.0))
        width = L / nb
        args = (pos, cutoff, np.zeros(2), width, nb, nb, L)
        count = _scan_bins(*args, empty, empty, False)
        oi = np.empty(count, dtype=np.int64)
        oj = np.empty(count, dtype=np.int64)
        _scan_bins(*args, oi, oj, True)
    else:
        lo = pos.min(axis=0)
        hi = pos.max(axis=0)
        extent = float(max(hi[0] - lo[0], hi[1] - lo[1], cutoff))
        width = max(cutoff, extent / 64.0)
        nx = int((hi[0] - lo[0]) // width) + 1
        ny = int((hi[1] - lo[1]) // width) + 1
        args = (pos, cutoff, lo, width, nx, ny, 0.0)
        count = _scan_bins(*args, empty, empty, False)
        oi = np.empty(count, dtype=np.int64)
        oj = np.empty(count, dtype=np.int64)
        _scan_bins(*args, oi, oj, True)
    order = np.lexsort((oj, oi))
    return np.stack([oi[order], oj[order]], axis=1)
