"""Linearized non-overlap constraints and their Uzawa projection.

For a step of length ``dt`` the admissible velocities satisfy, row by row,
``gap + dt * grad(gap) . V >= 0``, written as ``B V - gap <= 0`` with
``B = -dt * grad(gap)``. Each row touches at most two cells, so ``B`` is
stored as one 2-vector per row plus the indices of the cells it couples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .geometry import Disk, Domain, GeometryError, boundary_table, pair_table, pair_vectors

log = logging.getLogger(__name__)

PAIR, WALL, OBSTACLE = 0, 1, 2


class StateCorrupted(RuntimeError):
    """Overlap beyond tolerance was found where the state must be admissible."""


VARIANTS = ("paper", "gauss_seidel", "nesterov")


@dataclass(frozen=True)
class UzawaParams:
    h: float | None = None      # None = 1/(12 sqrt(2) dt^2)
    rel_tol: float = 1e-2
    max_iter: int = 100_000
    overlap_tol: float = 1e-9   # um
    variant: str = "paper"      # or "gauss_seidel", "nesterov"
    margin: float = 1e-2        # um, clearance targeted inside the solve
    warm_start: bool = True     # seed multipliers with the previous step's values

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError("Uzawa step h must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown Uzawa variant {self.variant!r}")
        if self.margin < 0 or self.overlap_tol < 0:
            raise ValueError("margin and overlap_tol must be non-negative")


@dataclass
class ConstraintSet:
    """Sparse rows of ``B V - gap <= 0``.

    ``normal[m]`` is the gradient of row ``m``'s gap with respect to cell
    ``i[m]``; pair rows also carry ``j[m] >= 0`` whose gradient is the
    opposite vector. Single-cell rows have ``j[m] == -1``.
    """

    kind: np.ndarray
    i: np.ndarray
    j: np.ndarray
    ident: np.ndarray
    gap: np.ndarray
    normal: np.ndarray
    dt: float
    n_cells: int

    def __len__(self):
        return len(self.gap)

    @classmethod
    def empty(cls, n_cells: int, dt: float) -> "ConstraintSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z.astype(np.int8), z, z, z, np.zeros(0), np.zeros((0, 2)), dt, n_cells)

    def matrix(self) -> sp.csr_matrix:
        """``B`` as a sparse ``(m, 2N)`` matrix."""
        m = len(self)
        rows, cols, vals = [], [], []
        for r in range(m):
            for a in range(2):
                rows.append(r)
                cols.append(2 * self.i[r] + a)
                vals.append(-self.dt * self.normal[r, a])
                if self.j[r] >= 0:
                    rows.append(r)
                    cols.append(2 * self.j[r] + a)
                    vals.append(self.dt * self.normal[r, a])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, 2 * self.n_cells))

    def apply(self, V: np.ndarray) -> np.ndarray:
        """``B V`` for velocities of shape ``(N, 2)``."""
        V = np.asarray(V, dtype=float).reshape(-1, 2)
        g = np.einsum("ij,ij->i", self.normal, V[self.i])
        pair = self.j >= 0
        g[pair] -= np.einsum("ij,ij->i", self.normal[pair], V[self.j[pair]])
        return -self.dt * g


def assemble_constraints(X, domain: Domain, dt: float, R0: float, activation: float | None = None,
                         overlap_tol: float = 1e-9, pairs=None,
                         allow_overlap: bool = False) -> ConstraintSet:
    """Collect every pair, wall and obstacle row whose gap is at most ``activation``.

    ``pairs`` may be a precomputed superset of the pairs within
    ``2*R0 + activation``. With ``allow_overlap`` negative gaps are kept
    (used while relaxing an initial configuration); otherwise a gap below
    ``-overlap_tol`` raises :class:`StateCorrupted`.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    n = X.shape[0]
    if activation is None:
        activation = R0
    pi, pj, d, r = pair_table(domain, X, pairs, 2.0 * R0 + activation)
    if len(pi):
        pg = r - 2.0 * R0
        if np.any(r == 0.0):
            raise GeometryError("coincident cell centers: state is corrupted")
        pn = d / r[:, None]
    else:
        pg = np.zeros(0)
        pn = np.zeros((0, 2))
    bc, bid, bobs, bg, bn = boundary_table(domain, X, R0, activation)

    gap = np.concatenate([pg, bg])
    if not allow_overlap and len(gap) and gap.min() < -overlap_tol:
        m = int(np.argmin(gap))
        where = f"pair {pi[m]}-{pj[m]}" if m < len(pg) else f"cell {bc[m - len(pg)]} at boundary"
        raise StateCorrupted(f"overlap {gap[m]:.3e} um at {where}")
    kind = np.concatenate([np.full(len(pg), PAIR), np.where(bobs, OBSTACLE, WALL)]).astype(np.int8)
    return ConstraintSet(
        kind=kind,
        i=np.concatenate([pi, bc]).astype(np.int64),
        j=np.concatenate([pj, np.full(len(bc), -1)]).astype(np.int64),
        ident=np.concatenate([np.full(len(pg), -1), bid]).astype(np.int64),
        gap=gap,
        normal=np.concatenate([pn, bn]).reshape(-1, 2),
        dt=float(dt),
        n_cells=n,
    )


def default_step(dt: float) -> float:
    """Uzawa ascent step ``1 / (12 sqrt(2) dt^2)``.

    Six contacts per disk in two dimensions bound the row norm of ``B``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    return 1.0 / (12.0 * math.sqrt(2.0) * dt * dt)


@dataclass
class UzawaResult:
    V: np.ndarray
    lam: np.ndarray
    iters: int
    converged: bool
    residual: float   # worst row violation beyond its accepted slack, um


@njit(cache=True)
def _uzawa_loop(U, V0, lam0, ci, cj, nrm, target, allow, dt, h, rel_tol, max_iter, relative,
                eps, classical):
    n = U.shape[0]
    m = ci.shape[0]
    V = V0.copy()
    Vn = np.empty_like(U)
    lam = lam0.copy()
    new_lam = np.zeros(m)
    worst = 0.0
    for it in range(1, max_iter + 1):
        # V(j+1) = U - B^T lam(j)
        for k in range(n):
            Vn[k, 0] = U[k, 0]
            Vn[k, 1] = U[k, 1]
        for r in range(m):
            lr = lam[r]
            if lr != 0.0:
                a = dt * lr * nrm[r, 0]
                b = dt * lr * nrm[r, 1]
                Vn[ci[r], 0] += a
                Vn[ci[r], 1] += b
                if cj[r] >= 0:
                    Vn[cj[r], 0] -= a
                    Vn[cj[r], 1] -= b
        worst = -np.inf
        for r in range(m):
            i = ci[r]
            j = cj[r]
            gv = nrm[r, 0] * Vn[i, 0] + nrm[r, 1] * Vn[i, 1]
            if j >= 0:
                gv -= nrm[r, 0] * Vn[j, 0] + nrm[r, 1] * Vn[j, 1]
            res_new = -dt * gv - target[r]
            if res_new - allow[r] > worst:
                worst = res_new - allow[r]
            if classical:
                res = res_new
            else:
                # multiplier ascent on the previous iterate
                gv = nrm[r, 0] * V[i, 0] + nrm[r, 1] * V[i, 1]
                if j >= 0:
                    gv -= nrm[r, 0] * V[j, 0] + nrm[r, 1] * V[j, 1]
                res = -dt * gv - target[r]
            new_lam[r] = max(0.0, lam[r] + h * res)
        diff = 0.0
        norm = 0.0
        for k in range(n):
            dx = Vn[k, 0] - V[k, 0]
            dy = Vn[k, 1] - V[k, 1]
            diff += dx * dx + dy * dy
            norm += Vn[k, 0] * Vn[k, 0] + Vn[k, 1] * Vn[k, 1]
        diff = np.sqrt(diff)
        norm = np.sqrt(norm)
        tol = rel_tol * dt * max(norm, eps) if relative else 0.0
        if diff <= rel_tol * max(norm, eps) and worst <= tol:
            return Vn, lam, it, True, worst
        for k in range(n):
            V[k, 0] = Vn[k, 0]
            V[k, 1] = Vn[k, 1]
        for r in range(m):
            lam[r] = new_lam[r]
    return V, lam, max_iter, False, worst



@njit(cache=True)
def _nesterov_loop(U, V0, lam0, ci, cj, nrm, target, allow, dt, h, rel_tol, max_iter, relative,
                   eps):
    """Projected gradient ascent on the multipliers with Nesterov momentum.

    Momentum restarts whenever the step and the extrapolation disagree.
    Small changes between iterates say little under momentum, so the stop
    uses ``sum y_r |target_r - (B V)_r|`` for the iterate ``V = U - B^T y``,
    the duality gap plus the weighted violation, which bounds
    ``|V - V*|^2 / 2``.
    """
    n = U.shape[0]
    m = ci.shape[0]
    V = V0.copy()
    Vn = np.empty_like(U)
    lam = lam0.copy()
    y = lam0.copy()
    new = np.zeros(m)
    t = 1.0
    worst = 0.0
    for it in range(1, max_iter + 1):
        for k in range(n):
            Vn[k, 0] = U[k, 0]
            Vn[k, 1] = U[k, 1]
        for r in range(m):
            yr = y[r]
            if yr != 0.0:
                a = dt * yr * nrm[r, 0]
                b = dt * yr * nrm[r, 1]
                Vn[ci[r], 0] += a
                Vn[ci[r], 1] += b
                if cj[r] >= 0:
                    Vn[cj[r], 0] -= a
                    Vn[cj[r], 1] -= b
        worst = -np.inf
        comp = 0.0
        ymin = 0.0
        for r in range(m):
            i = ci[r]
            j = cj[r]
            gv = nrm[r, 0] * Vn[i, 0] + nrm[r, 1] * Vn[i, 1]
            if j >= 0:
                gv -= nrm[r, 0] * Vn[j, 0] + nrm[r, 1] * Vn[j, 1]
            res = -dt * gv - target[r]
            if res - allow[r] > worst:
                worst = res - allow[r]
            comp += abs(y[r] * res)
            ymin = min(ymin, y[r])
            new[r] = max(0.0, y[r] + h * res)
        norm = 0.0
        for k in range(n):
            norm += Vn[k, 0] * Vn[k, 0] + Vn[k, 1] * Vn[k, 1]
        norm = max(np.sqrt(norm), eps)
        tol = rel_tol * dt * norm if relative else 0.0
        if worst <= tol and ymin >= 0.0 and 2.0 * comp <= (rel_tol * norm) ** 2:
            for r in range(m):
                lam[r] = max(0.0, y[r])
            return Vn, lam, it, True, worst
        for k in range(n):
            V[k, 0] = Vn[k, 0]
            V[k, 1] = Vn[k, 1]
        agree = 0.0
        for r in range(m):
            agree += (y[r] - new[r]) * (new[r] - lam[r])
        if agree > 0.0:
            t = 1.0
            for r in range(m):
                y[r] = new[r]
        else:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / tn
            for r in range(m):
                y[r] = new[r] + beta * (new[r] - lam[r])
            t = tn
        for r in range(m):
            lam[r] = new[r]
    for r in range(m):
        lam[r] = max(0.0, y[r])
    return V, lam, max_iter, False, worst


def stable_step(cs: ConstraintSet, variant: str = "paper") -> float:
    """Largest ascent step that the Gershgorin bound on ``B B^T`` proves stable.

    Row ``m`` of ``B B^T`` has absolute sum at most ``dt^2`` times the
    number of rows touching the cells of ``m``. The lagged (``"paper"``)
    and accelerated updates are stable for ``h * sigma_max < 1``, the
    classical one for ``< 2``.
    """
    if len(cs) == 0:
        return math.inf
    deg = np.bincount(cs.i, minlength=cs.n_cells)
    pair = cs.j >= 0
    deg += np.bincount(cs.j[pair], minlength=cs.n_cells)
    load = deg[cs.i].astype(float)
    load[pair] += deg[cs.j[pair]]
    bound = cs.dt**2 * float(load.max())
    return (2.0 if variant == "gauss_seidel" else 1.0) * 0.95 / bound


def row_aims(cs: ConstraintSet, margin: float, shrink: bool = False) -> np.ndarray:
    """Clearance each row should keep after the step.

    ``margin`` everywhere, or with ``shrink`` the current gap where that is
    smaller: then ``V = 0`` meets every aim of an admissible state, so the
    shifted problem is feasible even when a cell is wedged in a channel
    barely one diameter wide. Overlapping rows always aim at the margin.
    """
    if not shrink:
        return np.full(len(cs), float(margin))
    return np.where(cs.gap < 0.0, margin, np.minimum(margin, cs.gap))


def uzawa_project(U, cs: ConstraintSet, V_init=None, params: UzawaParams = UzawaParams(),
                  extra_margin=None, eps: float | None = None, lam_init=None,
                  warn: bool = True, shrink: bool = False) -> UzawaResult:
    """Project desired velocities ``U`` onto ``{V : B V <= gap}``.

    The iteration starts from ``V_init`` and ``lam_init`` (zero by
    default), alternates ``V <- U - B^T lam`` and
    ``lam <- max(0, lam + h (B V - target))`` and stops once the relative
    change of ``V`` drops below ``rel_tol`` while every row holds. The
    ``paper`` variant ascends with the previous velocity iterate,
    ``gauss_seidel`` with the fresh one, and ``nesterov`` adds momentum with
    restarts, which is far faster in jammed packings. ``h`` is capped by
    :func:`stable_step`, which only binds when cells carry more rows than a
    hexagonal contact shell.

    With ``margin > 0`` the solve aims at the clearances of :func:`row_aims`
    plus ``extra_margin`` (per row, may be negative) and accepts a row once
    its linearized post-step gap is at least ``extra_margin - overlap_tol/2``.
    With ``margin == 0`` the accepted violation is ``rel_tol * dt * |V|``.
    """
    U = np.ascontiguousarray(U, dtype=float).reshape(-1, 2)
    n = U.shape[0]
    if n != cs.n_cells:
        raise ValueError("velocity and constraint set sizes differ")
    if V_init is None:
        V_init = U
    V_init = np.ascontiguousarray(V_init, dtype=float).reshape(-1, 2)
    if len(cs) == 0:
        return UzawaResult(U.copy(), np.zeros(0), 1, True, -math.inf)
    h = params.h if params.h is not None else default_step(cs.dt)
    h = min(h, stable_step(cs, params.variant))
    if eps is None:
        eps = 1e-12 * max(float(np.sqrt(np.mean(np.sum(U * U, axis=1)))), 1.0) * math.sqrt(n)
    relative = params.margin == 0
    soft = np.zeros(len(cs)) if relative else row_aims(cs, params.margin, shrink)
    # the margin is aimed at but may be given up; extra_margin may not
    allow = soft + (0.0 if relative else 0.5 * params.overlap_tol)
    target = cs.gap - soft
    if extra_margin is not None:
        target = target - extra_margin
    lam0 = np.zeros(len(cs)) if lam_init is None else np.ascontiguousarray(lam_init, dtype=float)
    nrm = np.ascontiguousarray(cs.normal)
    target = np.ascontiguousarray(target)
    allow = np.ascontiguousarray(allow)
    if params.variant == "nesterov":
        V, lam, iters, ok, worst = _nesterov_loop(
            U, V_init, lam0, cs.i, cs.j, nrm, target, allow, cs.dt, h, params.rel_tol,
            int(params.max_iter), relative, eps)
    else:
        V, lam, iters, ok, worst = _uzawa_loop(
            U, V_init, lam0, cs.i, cs.j, nrm, target, allow, cs.dt, h, params.rel_tol,
            int(params.max_iter), relative, eps, params.variant == "gauss_seidel")
    if not ok and warn:
        log.warning("Uzawa stopped after %d iterations, worst violation %.3e um", iters, worst)
    return UzawaResult(V, lam, int(iters), bool(ok), float(worst))


def gaps_after_move(cs: ConstraintSet, X: np.ndarray, V: np.ndarray, domain: Domain,
                    R0: float) -> np.ndarray:
    """Exact (non-linearized) gap of every row after ``X + dt V``."""
    Y = X + cs.dt * V
    out = np.empty(len(cs))
    pair = cs.kind == PAIR
    if pair.any():
        _, r = pair_vectors(domain, Y, cs.i[pair], cs.j[pair])
        out[pair] = r - 2.0 * R0
    wall = cs.kind == WALL
    if wall.any():
        Yw = Y[cs.i[wall]]
        if isinstance(domain.shape, Disk):
            d = Yw - np.asarray(domain.shape.center)
            out[wall] = domain.shape.R - np.hypot(d[:, 0], d[:, 1]) - R0
        else:
            L = domain.shape.L
            w = cs.ident[wall]
            coord = np.where(w < 2, Yw[:, 0], Yw[:, 1])
            out[wall] = np.where(w % 2 == 0, coord, L - coord) - R0
    obs = cs.kind == OBSTACLE
    if obs.any():
        centers = np.array([ob.center for ob in domain.obstacles])
        radii = np.array([ob.radius for ob in domain.obstacles])
        d = Y[cs.i[obs]] - centers[cs.ident[obs]]
        out[obs] = np.hypot(d[:, 0], d[:, 1]) - R0 - radii[cs.ident[obs]]
    return out


def project_admissible(U, cs: ConstraintSet, X, domain: Domain, R0: float, V_init=None,
                       params: UzawaParams = UzawaParams(), eps: float | None = None,
                       lam_init=None, max_rounds: int = 8) -> tuple[UzawaResult, int]:
    """Uzawa projection followed by a check of the exact post-step gaps.

    Linearizing a curved wall seen from inside (the disk boundary)
    overestimates the clearance by about ``(dt |V|)^2 / (2 R)``. Rows whose
    exact gap turns negative get that shortfall added to their target and
    the projection is repeated. A solve that does not converge is retried
    without ``lam_init``, then with shrinking aims (see :func:`row_aims`).
    Returns the final result and the total number of Uzawa iterations.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    extra = np.zeros(len(cs))
    total = 0
    shrink = False
    for _ in range(max_rounds):
        res = uzawa_project(U, cs, V_init, params, extra_margin=extra, eps=eps,
                            lam_init=lam_init, warn=shrink, shrink=shrink)
        total += res.iters
        if not res.converged and lam_init is not None:
            # stale multipliers can stall the ascent; a cold start often converges fast
            log.info("warm-started Uzawa did not converge in %d iterations; retrying cold",
                     res.iters)
            lam_init = None
            res = uzawa_project(U, cs, V_init, params, extra_margin=extra, eps=eps,
                                warn=shrink, shrink=shrink)
            total += res.iters
        if not res.converged and not shrink:
            log.info("Uzawa did not converge in %d iterations; retrying with shrinking aims",
                     res.iters)
            shrink = True
            res = uzawa_project(U, cs, V_init, params, extra_margin=extra, eps=eps,
                                lam_init=lam_init, shrink=True)
            total += res.iters
        if len(cs) == 0:
            return res, total
        g = gaps_after_move(cs, X, res.V, domain, R0)
        bad = g < -0.5 * params.overlap_tol
        if not bad.any():
            return res, total
        extra[bad] += -g[bad] + max(params.margin, 1e-12)
    log.warning("exact-gap repair did not settle after %d rounds", max_rounds)
    return res, total


def row_keys(cs: ConstraintSet) -> np.ndarray:
    """Integer identity of each row, stable across steps while the contact persists."""
    n = cs.n_cells + 1
    return (((cs.kind.astype(np.int64) * n + cs.i) * n + (cs.j + 1)) << 16) + (cs.ident + 1)


def carry_multipliers(keys_prev, lam_prev, keys) -> np.ndarray:
    """Multipliers of rows present in the previous solve; zero for new rows.

    ``keys_prev`` must be sorted.
    """
    lam = np.zeros(len(keys))
    if keys_prev is None or len(keys_prev) == 0 or len(keys) == 0:
        return lam
    idx = np.minimum(np.searchsorted(keys_prev, keys), len(keys_prev) - 1)
    hit = keys_prev[idx] == keys
    lam[hit] = lam_prev[idx[hit]]
    return lam
