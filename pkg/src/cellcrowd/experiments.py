"""Single runs and seeded parameter sweeps, with their files on disk.

A run directory holds ``metrics.csv``, optionally ``trajectory.csv``, and
``manifest.json`` (resolved settings, seed, package version, status and
the tail averages). A sweep directory holds one run directory per
(point, replicate) plus ``summary.csv``, ``aggregates.csv``,
``timings.csv`` and ``sweep.json``.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, build
from .contact import StateCorrupted
from .metrics import COLUMNS, MetricsSeries
from .polarity import PolarityError
from .simulator import RunResult, SimulationError, run

log = logging.getLogger(__name__)

TAIL_FIELDS = ("phi", "vbar", "phi_rot")
SUMMARY_FIELDS = ("point", "rep", "seed", "n_cells", "status", "phi", "vbar", "phi_rot",
                  "uzawa_iters", "relax_steps", "error")
RUN_ERRORS = (SimulationError, StateCorrupted, PolarityError, ArithmeticError)


@dataclass
class RunRecord:
    status: str                    # "ok" or "failed"
    seed: int
    n_cells: int
    tails: dict[str, float]
    uzawa_iters: int = 0
    relax_steps: int = 0
    wall_seconds: float = 0.0
    error: str = ""
    run_dir: Optional[str] = None
    result: Optional[RunResult] = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# file formats


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path: Path, series: MetricsSeries) -> None:
    n_regions = max((len(r) for r in series.regional), default=0)
    header = list(COLUMNS) + [f"phi_rot_region{k}" for k in range(n_regions)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(series)):
            row = [series.data[c][k] for c in COLUMNS]
            reg = series.regional[k]
            row += [reg[m] if m < len(reg) else math.nan for m in range(n_regions)]
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> dict[str, np.ndarray]:
    """Numeric columns of a CSV file written by this package; text columns stay as strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    out: dict[str, Any] = {}
    for k, name in enumerate(header):
        col = [r[k] if k < len(r) else "" for r in body]
        try:
            out[name] = np.array([float(v) if v != "" else math.nan for v in col])
        except ValueError:
            out[name] = np.array(col, dtype=object)
    return out


def write_trajectory(path: Path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "t", "id", "x", "y", "vx", "vy", "theta"))
        for fr in result.trajectory or ():
            for k in range(len(fr.X)):
                w.writerow([fr.step, _fmt(fr.t), k, _fmt(float(fr.X[k, 0])),
                            _fmt(float(fr.X[k, 1])), _fmt(float(fr.V[k, 0])),
                            _fmt(float(fr.V[k, 1])), _fmt(float(fr.theta[k]))])


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# single runs


def run_single(cfg: ExperimentConfig, seed: Optional[int] = None,
               out_dir: Optional[Path] = None, trajectory: Optional[bool] = None) -> RunRecord:
    """Run one simulation and, when ``out_dir`` is given, persist it.

    Simulation errors do not propagate: the record (and manifest) carry
    status ``failed`` and the message, and files written so far are kept.
    """
    if seed is not None:
        cfg = cfg.with_overrides({"seed": int(seed)})
    p = cfg.params
    keep = cfg.trajectory if trajectory is None else trajectory
    manifest = {
        "version": __version__, "seed": p.seed, "n_cells": p.n_cells,
        "config": cfg.tree, "digest": cfg.digest(), "status": "running",
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "manifest.json", manifest)
    t0 = time.perf_counter()
    try:
        result = run(p, cfg.domain, keep_trajectory=keep)
    except RUN_ERRORS as e:
        wall = time.perf_counter() - t0
        rec = RunRecord("failed", p.seed, p.n_cells, {k: math.nan for k in TAIL_FIELDS},
                        wall_seconds=wall, error=f"{type(e).__name__}: {e}",
                        run_dir=str(out_dir) if out_dir else None)
        log.error("run with seed %d failed: %s", p.seed, rec.error)
        if out_dir is not None:
            manifest.update(status="failed", error=rec.error, wall_seconds=wall,
                            traceback=traceback.format_exc())
            _write_json(out_dir / "manifest.json", manifest)
        return rec
    wall = time.perf_counter() - t0
    tails = {k: result.metrics.tail_average(k, p.T) for k in TAIL_FIELDS}
    rec = RunRecord("ok", p.seed, p.n_cells, tails, result.uzawa_iters, result.relax_steps,
                    wall, run_dir=str(out_dir) if out_dir else None, result=result)
    if out_dir is not None:
        write_metrics(out_dir / "metrics.csv", result.metrics)
        if keep:
            write_trajectory(out_dir / "trajectory.csv", result)
        manifest.update(status="ok", tails=tails, uzawa_iters=result.uzawa_iters,
                        relax_steps=result.relax_steps, unconverged_steps=result.unconverged_steps,
                        init_seconds=result.init_seconds, sim_seconds=result.sim_seconds,
                        wall_seconds=wall)
        _write_json(out_dir / "manifest.json", manifest)
    return rec


def _record_from_manifest(path: Path, digest: str) -> Optional[RunRecord]:
    try:
        m = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if m.get("digest") != digest or m.get("status") not in ("ok", "failed"):
        return None
    tails = m.get("tails") or {k: math.nan for k in TAIL_FIELDS}
    return RunRecord(m["status"], m["seed"], m["n_cells"], tails, m.get("uzawa_iters", 0),
                     m.get("relax_steps", 0), m.get("wall_seconds", 0.0), m.get("error", ""),
                     str(path.parent))


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepTask:
    point: int
    rep: int
    tree: dict
    run_dir: str
    trajectory: bool


def sweep_points(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Cartesian product of the axes, first axis varying slowest."""
    if not cfg.axes:
        return [{}]
    names = [a.path for a in cfg.axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(a.values for a in cfg.axes))]


def _execute(task: SweepTask) -> tuple[int, int, RunRecord]:
    cfg = build(task.tree)
    out = Path(task.run_dir)
    done = _record_from_manifest(out / "manifest.json", cfg.digest())
    if done is not None:
        return task.point, task.rep, done
    rec = run_single(cfg, out_dir=out, trajectory=task.trajectory)
    rec.result = None   # keep worker replies small
    return task.point, task.rep, rec


def _quartiles(x: np.ndarray) -> tuple[float, float, float, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return (math.nan,) * 4
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return float(np.mean(x)), float(q1), float(med), float(q3)


def run_sweep(cfg: ExperimentConfig, out_root: Path, jobs: Optional[int] = None,
              progress=None) -> dict[str, Any]:
    """Run every (point, replicate) and write the summary tables.

    Replicate ``r`` uses seed ``base_seed + r``. Finished runs found under
    ``out_root`` with a matching settings hash are reused, so rerunning a
    completed sweep does no simulation work. Failed runs become rows with
    status ``failed``; the sweep carries on.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    points = sweep_points(cfg)
    sweep_digest = cfg.digest()
    stamp = out_root / "sweep.json"
    if stamp.exists():
        try:
            prev = json.loads(stamp.read_text())
        except ValueError:
            prev = {}
        if prev.get("digest") == sweep_digest and prev.get("complete") and \
                (out_root / "summary.csv").exists():
            log.info("sweep %s already complete in %s", sweep_digest, out_root)
            return prev
    tasks = []
    for k, point in enumerate(points):
        pcfg = cfg.with_overrides(point) if point else cfg
        for rep in range(cfg.n_reps):
            rcfg = pcfg.with_overrides({"seed": cfg.base_seed + rep})
            tasks.append(SweepTask(k, rep, rcfg.tree,
                                   str(out_root / f"p{k:03d}" / f"rep{rep:03d}"),
                                   cfg.trajectory))
    _write_json(stamp, {"digest": sweep_digest, "complete": False, "n_points": len(points),
                        "n_reps": cfg.n_reps, "version": __version__, "config": cfg.tree})
    jobs = jobs or os.cpu_count() or 1
    records: dict[tuple[int, int], RunRecord] = {}
    if jobs == 1:
        for n, t in enumerate(tasks, 1):
            k, r, rec = _execute(t)
            records[k, r] = rec
            if progress:
                progress(n, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for n, (k, r, rec) in enumerate(pool.map(_execute, tasks), 1):
                records[k, r] = rec
                if progress:
                    progress(n, len(tasks))

    axis_names = [a.path for a in cfg.axes]
    with open(out_root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(axis_names + list(SUMMARY_FIELDS))
        for (k, r) in sorted(records):
            rec = records[k, r]
            w.writerow([_fmt(points[k][a]) for a in axis_names] + [
                k, r, rec.seed, rec.n_cells, rec.status,
                *(_fmt(float(rec.tails[f])) for f in TAIL_FIELDS),
                rec.uzawa_iters, rec.relax_steps, rec.error])
    with open(out_root / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("point", "rep", "wall_seconds"))
        for (k, r) in sorted(records):
            w.writerow([k, r, f"{records[k, r].wall_seconds:.3f}"])
    with open(out_root / "aggregates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        stats = ("mean", "q25", "median", "q75")
        head = axis_names + ["point", "n_ok", "n_failed"]
        for f in TAIL_FIELDS + ("abs_phi_rot",):
            head += [f"{f}_{s}" for s in stats]
        w.writerow(head)
        for k, point in enumerate(points):
            recs = [records[k, r] for r in range(cfg.n_reps)]
            row = [_fmt(point[a]) for a in axis_names]
            row += [k, sum(r.ok for r in recs), sum(not r.ok for r in recs)]
            for f in TAIL_FIELDS + ("abs_phi_rot",):
                src = "phi_rot" if f == "abs_phi_rot" else f
                x = np.array([r.tails[src] for r in recs], dtype=float)
                if f == "abs_phi_rot":
                    x = np.abs(x)
                row += [_fmt(v) for v in _quartiles(x)]
            w.writerow(row)
    info = {"digest": sweep_digest, "complete": True, "n_points": len(points),
            "n_reps": cfg.n_reps, "n_failed": sum(not r.ok for r in records.values()),
            "version": __version__, "config": cfg.tree}
    _write_json(stamp, info)
    return info
