"""Soft attraction-repulsion between cell pairs.

The pair potential is the cubic ``W(r) = -kappa * (r**2/2 - r**3/(6*Rc))``,
whose derivative vanishes at ``r = 2*Rc``. Pairs closer than ``2*Rc`` repel,
pairs between ``2*Rc`` and the interaction radius attract.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Domain, GeometryError, neighbor_pairs, pair_table, pair_vectors


@dataclass(frozen=True)
class ForceParams:
    kappa: float = 1.0e4      # pN / um
    gamma: float = 1.0e-5     # um / (pN h)
    Rc: float = 9.5           # um
    Rint_ar: float = 19.0     # um

    def __post_init__(self):
        for name in ("kappa", "gamma", "Rc", "Rint_ar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ForceParams.{name} must be strictly positive")


def potential(r, p: ForceParams):
    r = np.asarray(r, dtype=float)
    return -p.kappa * (r**2 / 2.0 - r**3 / (6.0 * p.Rc))


def potential_derivative(r, p: ForceParams):
    r = np.asarray(r, dtype=float)
    return -p.kappa * (r - r**2 / (2.0 * p.Rc))


def pair_forces(domain: Domain, X: np.ndarray, pairs, p: ForceParams) -> np.ndarray:
    """Force on each cell from candidate ``pairs`` (index array or ``PairTable``).

    Pairs beyond ``Rint_ar`` are ignored.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    F = np.zeros_like(X)
    i, j, d, r = pair_table(domain, X, pairs, p.Rint_ar)
    if len(i) == 0:
        return F
    if np.any(r == 0.0):
        raise GeometryError("coincident cell centers: state is corrupted")
    # magnitude along the unit vector from j to i; positive = repulsive
    f = (-potential_derivative(r, p) / r)[:, None] * d
    n = X.shape[0]
    F[:, 0] = np.bincount(i, f[:, 0], n) - np.bincount(j, f[:, 0], n)
    F[:, 1] = np.bincount(i, f[:, 1], n) - np.bincount(j, f[:, 1], n)
    return F


def total_force(X, domain: Domain, p: ForceParams) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    return pair_forces(domain, X, neighbor_pairs(X, p.Rint_ar, domain), p)


def total_energy(X, domain: Domain, p: ForceParams) -> float:
    """Sum of ``W`` over interacting pairs; ``total_force`` is minus its gradient."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    pairs = neighbor_pairs(X, p.Rint_ar, domain)
    if len(pairs) == 0:
        return 0.0
    _, r = pair_vectors(domain, X, pairs[:, 0], pairs[:, 1])
    return float(np.sum(potential(r, p)))
