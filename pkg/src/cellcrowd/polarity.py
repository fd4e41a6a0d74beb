"""Polarity alignment and the norm-preserving stochastic angle update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Domain, pair_table

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PolarityParams:
    mu: float = 6.2          # rad/h, alignment to local mean polarity
    delta: float = 6.2       # rad/h, alignment to own velocity direction
    D: float = 0.96          # rad^2/h, angular diffusion
    Rint_po: float = 60.0    # um
    c: float = 21.6          # um/h, desired speed

    def __post_init__(self):
        if self.mu < 0 or self.delta < 0 or self.D < 0:
            raise ValueError("mu, delta and D must be non-negative")
        if not self.Rint_po > 0 or not self.c > 0:
            raise ValueError("Rint_po and c must be strictly positive")


class PolarityError(ArithmeticError):
    pass


def polarity_vectors(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def wrap_angle(a):
    """Map angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)


def mean_polarities(X, theta, domain: Domain, p: PolarityParams, pairs=None) -> np.ndarray:
    """Normalized local average polarity of every cell, itself included.

    ``pairs`` may be any superset of the pairs within ``Rint_po``, as an
    index array or a :class:`~cellcrowd.geometry.PairTable`.
    """
    P = polarity_vectors(theta)
    n = len(P)
    tab = pair_table(domain, X, pairs, p.Rint_po)
    S = P.copy()
    if len(tab.i):
        i, j = tab.i, tab.j
        S[:, 0] += np.bincount(i, P[j, 0], n) + np.bincount(j, P[i, 0], n)
        S[:, 1] += np.bincount(i, P[j, 1], n) + np.bincount(j, P[i, 1], n)
    norm = np.hypot(S[:, 0], S[:, 1])
    # cancelling neighborhoods fall back to the cell's own polarity
    degenerate = norm < 1e-12
    norm[degenerate] = 1.0
    S /= norm[:, None]
    S[degenerate] = P[degenerate]
    return S


def mean_polarity(k: int, X, theta, domain: Domain, p: PolarityParams) -> np.ndarray:
    return mean_polarities(X, theta, domain, p)[k]


def angle_step(theta, V, X, dt: float, noise, p: PolarityParams, domain: Domain,
               pairs=None) -> np.ndarray:
    """Advance polarity angles by one step.

    Parameters
    ----------
    theta : (N,) array
        Angles at step n.
    V : (N, 2) array
        Velocities at step n; only their directions enter.
    X : (N, 2) array
        Positions at step n.
    dt : float
    noise : (N,) array
        Standard normal samples, one per cell.
    pairs : optional
        Precomputed superset of the neighbor pairs within ``Rint_po``.

    Returns
    -------
    (N,) array of angles in ``[0, 2*pi)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    theta = np.asarray(theta, dtype=float)
    V = np.asarray(V, dtype=float).reshape(-1, 2)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != theta.shape:
        raise ValueError("need exactly one noise sample per cell")
    P = polarity_vectors(theta)
    drift = np.zeros_like(P)
    if p.mu > 0:
        drift += p.mu * (mean_polarities(X, theta, domain, p, pairs) - P)
    if p.delta > 0:
        speed = np.hypot(V[:, 0], V[:, 1])
        moving = speed >= 1e-9 * p.c
        unit = np.zeros_like(V)
        unit[moving] = V[moving] / speed[moving, None]
        drift[moving] += p.delta * (unit[moving] - P[moving])
    Q = P + 0.5 * dt * drift
    if np.any((Q[:, 0] == 0.0) & (Q[:, 1] == 0.0)):
        raise PolarityError("intermediate polarity vanished; reduce dt*(mu+delta)")
    q_angle = np.arctan2(Q[:, 1], Q[:, 0])
    new = theta + 2.0 * wrap_angle(q_angle - theta) + np.sqrt(2.0 * p.D * dt) * noise
    new = np.mod(new, TWO_PI)
    new[new >= TWO_PI] = 0.0
    return new
