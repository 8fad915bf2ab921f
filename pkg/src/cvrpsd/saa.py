"""Sample-average statistics of split costs and the train-size experiments."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from cvrpsd.instance import CvrpInstance, GiantTour, make_tour
from cvrpsd.scenarios import DemandModel, ScenarioSet, sample_scenarios
from cvrpsd.split import DEFAULT_TILE, STRICT, SplitMode, split_batch

Z95 = 1.96


class SaaError(ValueError):
    pass


class ProvenanceWarning(UserWarning):
    """Out-of-sample scenarios share a seed with training scenarios."""


@dataclass
class SaaEstimate:
    m: int
    mean: float
    variance: float
    stderr: float
    ci95: tuple[float, float]
    infeasible_count: int = 0
    total: float = 0.0
    tag: str = "in-sample"
    first_stage: float = 0.0
    warnings: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def evaluated(self) -> int:
        """Number of scenarios that entered the mean."""
        return self.m - self.infeasible_count

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


def estimate_from_costs(costs, sentinel=None, first_stage: float = 0.0, tag: str = "in-sample",
                        provenance: dict | None = None) -> SaaEstimate:
    """Mean, variance and a normal 95% interval of per-scenario costs.

    Entries equal to ``sentinel`` count as infeasible and are left out of
    the statistics. Integer costs are summed exactly.
    """
    costs = np.asarray(costs)
    m = costs.shape[0]
    if sentinel is not None:
        ok = costs != sentinel
        vals = costs[ok]
    else:
        vals = costs
    k = vals.shape[0]
    if k == 0:
        raise SaaError(f"all {m} scenarios are infeasible")
    if np.issubdtype(vals.dtype, np.integer):
        total = int(vals.sum(dtype=np.int64))
    else:
        total = math.fsum(vals.tolist())
    mean = total / k
    # shifted by the first value: same variance, and exactly 0 for a constant sample
    shifted = vals.astype(np.float64) - float(vals[0])
    variance = float(np.var(shifted, ddof=1)) if k > 1 else 0.0
    stderr = math.sqrt(variance / k)
    mean += first_stage
    return SaaEstimate(m=m, mean=mean, variance=variance, stderr=stderr,
                       ci95=(mean - Z95 * stderr, mean + Z95 * stderr),
                       infeasible_count=m - k, total=total, tag=tag, first_stage=first_stage,
                       provenance=dict(provenance or {}))


def combine(a: SaaEstimate, b: SaaEstimate) -> float:
    """Size-weighted mean of two recourse estimates, from their exact totals."""
    k = a.evaluated + b.evaluated
    if isinstance(a.total, int) and isinstance(b.total, int):
        return (a.total + b.total) / k
    return math.fsum([a.total, b.total]) / k


def estimate(instance: CvrpInstance, tour, scenarios: ScenarioSet, mode: SplitMode = STRICT,
             first_stage: Callable[[GiantTour], float] | None = None, workers: int | None = 1,
             tile_size: int = DEFAULT_TILE, tag: str = "in-sample") -> SaaEstimate:
    """SAA estimate of the expected recourse cost of ``tour``.

    The first-stage cost defaults to zero: the objective is the expected
    travel cost of the split routes alone.
    """
    if not isinstance(tour, GiantTour):
        tour = make_tour(instance, tour)
    res = split_batch(instance, tour, scenarios, mode=mode, workers=workers, tile_size=tile_size)
    f1 = float(first_stage(tour)) if first_stage is not None else 0.0
    prov = scenarios.provenance() if isinstance(scenarios, ScenarioSet) else {"m": len(res.cost)}
    prov["mode"] = str(mode)
    est = estimate_from_costs(res.cost, res.sentinel, first_stage=f1, tag=tag, provenance=prov)
    est.provenance["wall_ms"] = res.stats["wall_ms"]
    return est


def out_of_sample_eval(instance: CvrpInstance, tour, test_set: ScenarioSet, mode: SplitMode = STRICT,
                       train_seeds: Sequence[int] = (), **kw) -> SaaEstimate:
    """Score a tour on held-out scenarios; overlapping seeds are flagged, not fatal."""
    est = estimate(instance, tour, test_set, mode=mode, tag="out-of-sample", **kw)
    if test_set.seed in set(train_seeds):
        msg = f"test seed {test_set.seed} was also used for training"
        est.warnings.append(msg)
        warnings.warn(msg, ProvenanceWarning, stacklevel=2)
    return est


def convergence_diagnostics(instance: CvrpInstance, model: DemandModel, tour, m_grid: Sequence[int],
                            mode: SplitMode = STRICT, workers: int | None = 1) -> list[dict]:
    """(m, mean, stderr, stderr*sqrt(m)) for one tour over nested scenario prefixes."""
    grid = sorted(int(m) for m in m_grid)
    if not isinstance(tour, GiantTour):
        tour = make_tour(instance, tour)
    full = sample_scenarios(model, grid[-1])
    res = split_batch(instance, tour, full, mode=mode, workers=workers)
    rows = []
    for m in grid:
        est = estimate_from_costs(res.cost[:m], res.sentinel)
        rows.append({"m": m, "mean": est.mean, "stderr": est.stderr,
                     "stderr_sqrt_m": est.stderr * math.sqrt(est.evaluated)})
    return rows


@dataclass
class BiasReport:
    rows: list[dict]
    aggregates: list[dict]
    provenance: dict = field(default_factory=dict)

    CSV_COLUMNS = ("m", "replicate", "train_seed", "in_sample_mean", "oos_mean", "oos_stderr")

    def oos_matrix(self) -> tuple[list[int], np.ndarray]:
        """m values and a replicates x len(m) matrix of out-of-sample means (nan = failed)."""
        ms = sorted({r["m"] for r in self.rows})
        reps = sorted({r["replicate"] for r in self.rows})
        out = np.full((len(reps), len(ms)), np.nan)
        for r in self.rows:
            if r.get("status", "ok") == "ok":
                out[reps.index(r["replicate"]), ms.index(r["m"])] = r["oos_mean"]
        return ms, out

    def write_csv(self, path, header: dict | None = None) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.get(c, "") for c in self.CSV_COLUMNS])
        return path

    def write_json(self, path, header: dict | None = None) -> Path:
        path = Path(path)
        payload = {**(header or {}), "provenance": self.provenance, "rows": self.rows,
                   "aggregates": self.aggregates}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))
        return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def train_seed_for(base_seed: int, replicate: int, m_index: int, n_m: int) -> int:
    # test set uses base_seed itself; training seeds start above it
    return base_seed + 1 + replicate * n_m + m_index


def bias_experiment(instance: CvrpInstance, model: DemandModel, m_list: Sequence[int], replicates: int,
                    test_m: int, config=None, base_seed: int = 0, workers: int | None = 1,
                    test_set: ScenarioSet | None = None, progress: Callable[[dict], None] | None = None
                    ) -> BiasReport:
    """Solve on training sets of each size and score every solution on one shared test set.

    Row (m, replicate) uses its own training seed; the test set uses
    ``base_seed``. The search objective and the reported means both use the
    config's penalized mode.
    """
    from cvrpsd.search import SearchConfig, solve

    m_list = [int(m) for m in m_list]
    if m_list != sorted(m_list) or not m_list or m_list[0] < 1:
        raise SaaError("m_list must be ascending positive scenario counts")
    if replicates < 1:
        raise SaaError("replicates must be >= 1")
    config = config or SearchConfig()
    if test_set is None:
        test_set = sample_scenarios(model.with_seed(base_seed), test_m)
    lam = config.resolve_lambda(instance)
    mode = SplitMode.penalty(lam)

    rows = []
    for rep in range(replicates):
        for j, m in enumerate(m_list):
            seed = train_seed_for(base_seed, rep, j, len(m_list))
            assert seed != test_set.seed
            train = sample_scenarios(model.with_seed(seed), m)
            row = {"m": m, "replicate": rep, "train_seed": seed, "test_seed": test_set.seed}
            try:
                best, _ = solve(instance, train, config.replace(seed=seed))
            except Exception as exc:  # a failed replicate is recorded, not fatal
                row.update(status=f"failed: {exc}", in_sample_mean=math.nan, oos_mean=math.nan,
                           oos_stderr=math.nan)
                rows.append(row)
                continue
            oos = out_of_sample_eval(instance, best.tour, test_set, mode=mode, train_seeds=[seed],
                                     workers=workers)
            oos_strict = estimate(instance, best.tour, test_set, mode=STRICT, workers=workers)
            row.update(status="ok", in_sample_mean=best.fitness, oos_mean=oos.mean,
                       oos_stderr=oos.stderr, oos_strict_mean=oos_strict.mean,
                       tour=best.tour.order.tolist())
            rows.append(row)
            if progress:
                progress(row)

    aggregates = []
    for m in m_list:
        vals = np.array([r["oos_mean"] for r in rows if r["m"] == m and r["status"] == "ok"])
        ins = np.array([r["in_sample_mean"] for r in rows if r["m"] == m and r["status"] == "ok"])
        k = len(vals)
        aggregates.append({
            "m": m, "replicates": k,
            "oos_mean": float(vals.mean()) if k else math.nan,
            "oos_se": float(vals.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
            "in_sample_mean": float(ins.mean()) if k else math.nan,
            "in_sample_se": float(ins.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
        })
    prov = {"instance": instance.name, "n": instance.n, "capacity": instance.capacity,
            "model": model.describe(), "m_list": m_list, "replicates": replicates,
            "test_m": test_set.m, "test_seed": test_set.seed, "base_seed": base_seed,
            "lambda": lam, "search": config.to_dict()}
    return BiasReport(rows, aggregates, prov)
