"""Timing and anytime-quality harnesses behind the CLI experiment commands."""

from __future__ import annotations

import math
import statistics
import subprocess
import time
from pathlib import Path

import numpy as np

import cvrpsd
from cvrpsd.instance import CvrpInstance, GiantTour, identity_tour
from cvrpsd.scenarios import DemandModel, sample_scenarios
from cvrpsd.search import SearchConfig, SearchTrace, solve
from cvrpsd.split import DEFAULT_TILE, STRICT, SplitMode, default_workers, split_batch


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{cvrpsd.__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return cvrpsd.__version__


def unique_workers(workers_list) -> list[int]:
    """Resolved worker counts in order, without repeats ("max" may equal 1)."""
    return list(dict.fromkeys(resolve_workers(w) for w in workers_list))


def resolve_workers(spec) -> int:
    if spec in (None, "max"):
        return default_workers()
    w = int(spec)
    if w < 1:
        raise ValueError("worker count must be >= 1")
    return w


def bench_scaling(instance: CvrpInstance, model: DemandModel, m_grid, workers_list=(1, "max"), reps: int = 5,
                  tile_size: int = DEFAULT_TILE, tour: GiantTour | None = None,
                  mode: SplitMode = STRICT) -> tuple[list[dict], list[dict]]:
    """Time split_batch over nested scenario prefixes.

    One warm-up call per (m, workers) is discarded. Returns the raw rows
    and one median row per (m, workers).
    """
    tour = tour or identity_tour(instance)
    grid = sorted(int(m) for m in m_grid)
    workers = unique_workers(workers_list)
    scenarios = sample_scenarios(model, grid[-1])
    raw, summary = [], []
    for m in grid:
        sub = scenarios.head(m)
        for w in workers:
            split_batch(instance, tour, sub, mode=mode, tile_size=tile_size, workers=w)
            times = []
            for rep in range(reps):
                t0 = time.perf_counter()
                split_batch(instance, tour, sub, mode=mode, tile_size=tile_size, workers=w)
                ms = (time.perf_counter() - t0) * 1e3
                times.append(ms)
                raw.append({"m": m, "workers": w, "rep": rep, "wall_ms": ms,
                            "scenarios_per_sec": m / (ms / 1e3)})
            med = statistics.median(times)
            summary.append({"m": m, "workers": w, "reps": reps, "wall_ms": med,
                            "scenarios_per_sec": m / (med / 1e3)})
    return raw, summary


def scaling_ratios(summary: list[dict], workers: int = 1) -> list[tuple[int, int, float]]:
    """(m_lo, m_hi, wall ratio) between consecutive grid points for one worker count."""
    rows = sorted((r for r in summary if r["workers"] == workers), key=lambda r: r["m"])
    return [(a["m"], b["m"], b["wall_ms"] / a["wall_ms"]) for a, b in zip(rows, rows[1:])]


def bench_budget(instance: CvrpInstance, model: DemandModel, m: int, budget: float, seeds,
                 workers_list=(1, "max"), config: SearchConfig | None = None) -> dict:
    """Run the search under one wall-clock budget per (workers, seed).

    Returns {(workers, seed): SearchTrace}. All configurations share the
    training scenarios so only the evaluation throughput differs.
    """
    config = config or SearchConfig()
    train = sample_scenarios(model, m)
    traces = {}
    for w in unique_workers(workers_list):
        for seed in seeds:
            cfg = config.replace(seed=int(seed), workers=w, time_budget=float(budget), generations=None)
            _, trace = solve(instance, train, cfg)
            traces[(w, int(seed))] = trace
    return traces


def median_curve(traces: dict, workers: int, timestamps_ms) -> list[float]:
    """Median over seeds of the best penalized cost at each timestamp."""
    out = []
    for t in timestamps_ms:
        vals = [tr.best_at(t) for (w, _), tr in traces.items() if w == workers]
        vals = [v for v in vals if not math.isnan(v)]
        out.append(statistics.median(vals) if vals else math.nan)
    return out


def budget_summary(traces: dict, budget: float, step_s: float = 0.5) -> list[dict]:
    stamps = np.arange(step_s, budget + 1e-9, step_s) * 1e3
    rows = []
    for w in sorted({w for w, _ in traces}):
        for t, v in zip(stamps, median_curve(traces, w, stamps)):
            rows.append({"workers": w, "elapsed_ms": float(t), "median_best_penalized_cost": v})
    return rows


def trace_to_rows(trace: SearchTrace) -> list[dict]:
    return [dict(zip(SearchTrace.COLUMNS, r)) for r in trace.rows()]
