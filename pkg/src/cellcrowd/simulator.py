"""Time stepping: polarity update, projected velocity, position update."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import rng
from .contact import (StateCorrupted, UzawaParams, assemble_constraints, carry_multipliers,
                      project_admissible, row_keys, uzawa_project)
from .forces import ForceParams, pair_forces
from .geometry import (HEX_PACKING, Disk, Domain, WalledSquare, density, min_gaps,
                       pair_table)
from .metrics import (MetricsSeries, equal_area_annuli, mean_speed, polarity_order,
                      regional_rotation_order, rotation_order)
from .polarity import PolarityParams, angle_step, polarity_vectors

log = logging.getLogger(__name__)

# packing fractions at or above this are rejected before sampling
MAX_DENSITY = 0.906
# overlap relaxation: depth (um) below which an overlap is removed in one
# step, and the iteration cap of each relaxation solve
RELAX_DEPTH = 0.1
RELAX_MAX_ITER = 5000
RELAX_SHALLOW = 1.0   # um; unpackable densities stall well above this


class SimulationError(RuntimeError):
    pass


class InfeasiblePacking(SimulationError):
    pass


class RelaxationFailed(SimulationError):
    pass


@dataclass(frozen=True)
class ModelParams:
    n_cells: int = 160
    R0: float = 7.5
    forces: ForceParams = ForceParams()
    polarity: PolarityParams = PolarityParams()
    uzawa: UzawaParams = UzawaParams()
    dt: float = 1e-2
    T: float = 20.0
    seed: int = 0
    activation: Optional[float] = None   # None = R0
    save_every: int = 10
    relax_budget: int = 10_000
    relax_patience: int = 300   # steps allowed without a 10% drop of the worst overlap
                                # (ten times more once it is below RELAX_SHALLOW)

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be at least 1")
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt:
            raise ValueError("T must be at least dt")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.relax_budget < 0 or self.relax_patience < 1:
            raise ValueError("relax_budget must be >= 0 and relax_patience >= 1")
        if self.save_every < 1:
            raise ValueError("save_every must be at least 1")
        if self.activation is not None and not self.activation > 0:
            raise ValueError("activation must be positive")

    @property
    def contact_activation(self) -> float:
        return self.R0 if self.activation is None else self.activation

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9))


@dataclass
class SimState:
    X: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    step: int = 0
    rng_counter: int = 0
    # multipliers of the last contact solve, keyed by sorted row identity;
    # only used to warm-start the next solve
    contact_keys: Optional[np.ndarray] = None
    contact_lam: Optional[np.ndarray] = None

    def copy(self) -> "SimState":
        return SimState(self.X.copy(), self.V.copy(), self.theta.copy(), self.step,
                        self.rng_counter, self.contact_keys, self.contact_lam)


@dataclass
class StepInfo:
    uzawa_iters: int = 0
    n_rows: int = 0
    converged: bool = True
    min_pair_gap: float = math.inf
    min_boundary_gap: float = math.inf


def _search_radius(p: ModelParams) -> float:
    return max(p.polarity.Rint_po, p.forces.Rint_ar, 2.0 * p.R0 + p.contact_activation)


def _advance(state: SimState, p: ModelParams, domain: Domain, channel: int,
             allow_overlap: bool) -> tuple[SimState, StepInfo]:
    X, V, theta = state.X, state.V, state.theta
    n = len(X)
    pol = p.polarity
    radius = _search_radius(p)
    pairs = pair_table(domain, X, None, radius)

    if pol.D > 0:
        noise = rng.stream(p.seed, channel, state.rng_counter).standard_normal(n)
    else:
        noise = np.zeros(n)
    theta_new = angle_step(theta, V, X, p.dt, noise, pol, domain, pairs)

    U = pol.c * polarity_vectors(theta_new) + p.forces.gamma * pair_forces(domain, X, pairs,
                                                                          p.forces)
    cs = assemble_constraints(X, domain, p.dt, p.R0, p.contact_activation,
                              p.uzawa.overlap_tol, pairs, allow_overlap)
    keys = row_keys(cs)
    lam0 = (carry_multipliers(state.contact_keys, state.contact_lam, keys)
            if p.uzawa.warm_start else None)
    eps = 1e-12 * pol.c * math.sqrt(n)
    if allow_overlap:
        # overlaps deeper than RELAX_DEPTH only have to halve per step;
        # removing them all at once is often infeasible when dense
        loosen = -0.5 * np.maximum(0.0, -cs.gap - RELAX_DEPTH)
        res = uzawa_project(U, cs, V, replace(p.uzawa, max_iter=RELAX_MAX_ITER), eps=eps,
                            lam_init=lam0, extra_margin=loosen, warn=False)
        iters = res.iters
    else:
        res, iters = project_admissible(U, cs, X, domain, p.R0, V, p.uzawa, eps=eps,
                                        lam_init=lam0)
    order = np.argsort(keys)
    X_new = domain.wrap(X + p.dt * res.V)
    # a pair that ends within 2 R0 + 1 started within that plus twice the
    # largest displacement, so the old candidates suffice when that fits
    reach = 2.0 * p.R0 + 1.0 + 2.0 * p.dt * float(np.max(np.hypot(res.V[:, 0], res.V[:, 1])))
    audit = np.stack([pairs.i, pairs.j], axis=1)[pairs.r <= reach] if reach <= radius else None
    pmin, bmin = min_gaps(domain, X_new, p.R0, audit)
    info = StepInfo(iters, len(cs), res.converged, pmin, bmin)
    if not allow_overlap and min(pmin, bmin) < -p.uzawa.overlap_tol:
        raise StateCorrupted(
            f"post-step audit at step {state.step + 1}: min pair gap {pmin:.3e} um, "
            f"min boundary gap {bmin:.3e} um, {len(cs)} rows, {iters} Uzawa iterations, "
            f"converged={res.converged}")
    new = SimState(X_new, res.V, theta_new, state.step + 1, state.rng_counter + 1,
                   keys[order], res.lam[order])
    return new, info


def step(state: SimState, p: ModelParams, domain: Domain) -> SimState:
    """One time step from an admissible state."""
    return _advance(state, p, domain, rng.NOISE, False)[0]


def step_with_info(state: SimState, p: ModelParams, domain: Domain) -> tuple[SimState, StepInfo]:
    return _advance(state, p, domain, rng.NOISE, False)


def _sample_positions(p: ModelParams, domain: Domain) -> np.ndarray:
    shape = domain.shape
    R0 = p.R0
    X = np.empty((p.n_cells, 2))
    for k in range(p.n_cells):
        g = rng.stream(p.seed, rng.POSITION, k)
        for _ in range(100_000):
            if isinstance(shape, Disk):
                rr = shape.R - R0
                x = g.uniform(-rr, rr, 2)
                if x @ x > rr * rr:
                    continue
                x = x + np.asarray(shape.center)
            elif isinstance(shape, WalledSquare):
                x = g.uniform(R0, shape.L - R0, 2)
            else:
                x = g.uniform(0.0, shape.L, 2)
            if all(np.hypot(*(x - np.asarray(ob.center))) - R0 - ob.radius >= 0.0
                   for ob in domain.obstacles):
                break
        else:
            raise InfeasiblePacking("could not place a cell clear of the walls and obstacles")
        X[k] = x
    return X


def _initialize(p: ModelParams, domain: Domain) -> tuple[SimState, int]:
    rho = density(p.n_cells, p.R0, domain)
    if rho >= MAX_DENSITY:
        raise InfeasiblePacking(
            f"density {rho:.3f} is at or above the limit {MAX_DENSITY} "
            f"(hexagonal packing {HEX_PACKING:.4f})")
    X = _sample_positions(p, domain)
    theta = rng.stream(p.seed, rng.ANGLE, 0).uniform(0.0, 2.0 * np.pi, p.n_cells)
    V = p.polarity.c * polarity_vectors(theta)
    return relax_overlaps(SimState(X, V, theta), p, domain)


def initialize(p: ModelParams, domain: Domain) -> SimState:
    """Random admissible configuration.

    Centers are uniform over the region clear of walls and obstacles,
    angles uniform on ``[0, 2pi)``, velocities ``c P``. Pair overlaps are
    then removed by running the dynamics (see :func:`relax_overlaps`).
    """
    return _initialize(p, domain)[0]


def relax_overlaps(state: SimState, p: ModelParams, domain: Domain) -> tuple[SimState, int]:
    """Run full time steps until no gap is below ``-overlap_tol``.

    Returns the first admissible state, with its step counter reset to 0,
    and the number of relaxation steps taken. Fails once ``relax_budget``
    steps are spent, or earlier when the worst overlap has not shrunk by
    10% within ``relax_patience`` steps (packings too dense to exist).
    Overlaps shallower than ``RELAX_SHALLOW`` get ten times that patience:
    near-jammed but packable states can sit there for a thousand steps.
    """
    tol = p.uzawa.overlap_tol
    s = state
    best = math.inf
    last_gain = 0
    for k in range(p.relax_budget + 1):
        pmin, bmin = min_gaps(domain, s.X, p.R0)
        overlap = -min(pmin, bmin)
        if overlap <= tol:
            return SimState(s.X, s.V, s.theta, 0, 0, s.contact_keys, s.contact_lam), k
        if overlap < 0.9 * best:
            best, last_gain = overlap, k
        if k == p.relax_budget:
            reason = f"{p.relax_budget} relaxation steps"
            break
        patience = p.relax_patience * (10 if overlap <= RELAX_SHALLOW else 1)
        if k - last_gain >= patience:
            reason = (f"{k} relaxation steps (no progress in the last {patience}, "
                      f"density {density(p.n_cells, p.R0, domain):.3f} is likely unpackable)")
            break
        s, _ = _advance(s, p, domain, rng.RELAX_NOISE, True)
    raise RelaxationFailed(
        f"overlaps remain after {reason}: min pair gap {pmin:.3e} um, "
        f"min boundary gap {bmin:.3e} um")


@dataclass
class Frame:
    step: int
    t: float
    X: np.ndarray
    V: np.ndarray
    theta: np.ndarray


@dataclass
class RunResult:
    state: SimState
    metrics: MetricsSeries
    trajectory: Optional[list[Frame]]
    uzawa_iters: int = 0
    relax_steps: int = 0
    init_seconds: float = 0.0
    sim_seconds: float = 0.0
    unconverged_steps: int = 0


Callback = Callable[[SimState, StepInfo], None]


def run(p: ModelParams, domain: Domain, callbacks: tuple[Callback, ...] = (),
        keep_trajectory: bool = False, annuli=None, progress: Optional[Callable] = None
        ) -> RunResult:
    """Initialize and integrate up to ``T``.

    Metrics are recorded on every saved frame (the initial state and every
    ``save_every`` steps) and at every step inside the averaging window
    ``t >= 7T/8``. ``callbacks`` see each saved frame.
    """
    if p.polarity.D > 0 and math.sqrt(2.0 * p.polarity.D * p.dt) > 0.5:
        log.warning("angular noise per step %.2f rad is large; reduce dt",
                    math.sqrt(2.0 * p.polarity.D * p.dt))
    t0 = time.perf_counter()
    state, relax_steps = _initialize(p, domain)
    t1 = time.perf_counter()

    if annuli is None and isinstance(domain.shape, Disk):
        annuli = equal_area_annuli(domain.shape.R)
    center = domain.center
    series = MetricsSeries()
    frames: Optional[list[Frame]] = [] if keep_trajectory else None
    n_steps = p.n_steps
    tail_start = int(math.ceil(7 * n_steps / 8 - 1e-9))
    pmin, bmin = min_gaps(domain, state.X, p.R0)
    info = StepInfo(0, 0, True, pmin, bmin)
    total_iters = 0
    unconverged = 0

    def record(s: SimState, inf: StepInfo, saved: bool):
        series.append(
            regional=regional_rotation_order(s.theta, s.X, center, annuli) if annuli else None,
            step=s.step, t=s.step * p.dt,
            phi=polarity_order(s.theta), vbar=mean_speed(s.V, p.polarity.c),
            phi_rot=rotation_order(s.theta, s.X, center),
            min_pair_gap=inf.min_pair_gap, min_boundary_gap=inf.min_boundary_gap,
            uzawa_iters=inf.uzawa_iters)
        if saved:
            if frames is not None:
                frames.append(Frame(s.step, s.step * p.dt, s.X.copy(), s.V.copy(),
                                    s.theta.copy()))
            for cb in callbacks:
                cb(s, inf)

    record(state, info, True)
    for n in range(1, n_steps + 1):
        state, info = _advance(state, p, domain, rng.NOISE, False)
        total_iters += info.uzawa_iters
        unconverged += not info.converged
        saved = n % p.save_every == 0
        if saved or n >= tail_start:
            record(state, info, saved)
        if progress is not None:
            progress(n, n_steps)
    t2 = time.perf_counter()
    return RunResult(state, series, frames, total_iters, relax_steps, t1 - t0, t2 - t1,
                     unconverged)
