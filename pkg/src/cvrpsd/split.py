"""Split a giant tour into capacity-feasible routes, one scenario or many.

The DP over states 0..n (state i = first i tour positions served) is

    f(0) = 0
    f(i) = min_p  f(p) + t(p, i)

with t(p, i) the cost of the route serving tour positions p..i-1:
depot -> order[p] -> ... -> order[i-1] -> return depot, evaluated in O(1)
from the tour's chain-cost prefix. In strict mode p ranges over the
capacity-feasible window [mask(i), i-1]; in penalized mode every p is
admissible and overload is charged linearly.

``split_scalar`` checks capacity per candidate, ``split_masked`` uses the
precomputed window, and ``split_batch`` runs the masked form over a whole
scenario matrix in tiles, optionally on a thread pool. Among equal-cost
predecessors all of them keep the largest p.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from cvrpsd import _kernels
from cvrpsd._kernels import INFEASIBLE
from cvrpsd.instance import CvrpInstance, GiantTour, make_tour
from cvrpsd.scenarios import ScenarioError, ScenarioSet, demand_prefix_sums

DEFAULT_TILE = 65_536
BRUTE_FORCE_MAX_N = 20


class ResourceError(RuntimeError):
    """A batch could not be allocated at the requested tile size."""


class RouteRecoveryError(RuntimeError):
    """A predecessor chain does not describe a partition of the tour."""


@dataclass(frozen=True)
class SplitMode:
    penalized: bool = False
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError("penalty lambda must be finite and >= 0")

    @classmethod
    def strict(cls) -> "SplitMode":
        return cls()

    @classmethod
    def penalty(cls, lam: float) -> "SplitMode":
        return cls(True, lam)

    def __str__(self):
        return f"penalized({self.lam:g})" if self.penalized else "strict"


STRICT = SplitMode()


@dataclass
class SplitResult:
    cost: float
    routes: list[tuple[int, ...]] | None
    pred: list[int] | None = None

    @property
    def feasible(self) -> bool:
        return self.routes is not None


@dataclass
class SplitBatchResult:
    cost: np.ndarray
    pred: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def sentinel(self):
        return sentinel_for(self.cost.dtype)

    @property
    def feasible(self) -> np.ndarray:
        return self.cost != self.sentinel


def value_dtype(instance: CvrpInstance, mode: SplitMode = STRICT) -> np.dtype:
    """int64 for integer costs (and an integral penalty), float64 otherwise."""
    if instance.integer_costs and (not mode.penalized or float(mode.lam).is_integer()):
        return np.dtype(np.int64)
    return np.dtype(np.float64)


def sentinel_for(dtype) -> float | int:
    dtype = np.dtype(dtype)
    if np.issubdtype(dtype, np.integer):
        return int(np.iinfo(dtype).max)
    return math.inf


def _python_inputs(instance: CvrpInstance, tour: GiantTour, mode: SplitMode):
    dtype = value_dtype(instance, mode)
    cost = instance.cost.astype(dtype, copy=False)
    dprefix = tour.dist_prefix
    if dprefix.dtype != dtype:
        dprefix = _kernels.dist_prefix(tour.order, cost)
    lam = int(mode.lam) if dtype.kind == "i" else float(mode.lam)
    return cost.tolist(), dprefix.tolist(), lam, sentinel_for(dtype)


def _as_row(demands, n: int) -> list[int]:
    row = np.asarray(demands)
    if row.shape != (n,):
        raise ScenarioError(f"expected {n} tour-ordered demands, got shape {row.shape}")
    if np.any(row < 0):
        raise ScenarioError("demands must be nonnegative")
    return [int(x) for x in row]


def transition_cost(cost, dprefix, order, p: int, i: int):
    """Route over tour positions p..i-1; shared expression order with the kernels."""
    return cost[0][order[p]] + (dprefix[i - 1] - dprefix[p]) + cost[order[i - 1]][len(order) + 1]


def _routes_from_pred(pred, order) -> list[tuple[int, ...]]:
    routes = []
    i = len(order)
    steps = 0
    while i > 0:
        p = pred[i]
        if not 0 <= p < i or steps >= len(order):
            raise RouteRecoveryError(f"corrupt predecessor chain at state {i} (pred {p})")
        routes.append(tuple(int(c) for c in order[p:i]))
        i = p
        steps += 1
    routes.reverse()
    return routes


def recover_routes(pred, tour) -> list[tuple[int, ...]]:
    """Walk predecessors back from state n; each hop is one route."""
    order = list(getattr(tour, "order", tour))
    pred = list(np.asarray(pred).tolist())
    if len(pred) != len(order) + 1:
        raise RouteRecoveryError(f"predecessor row has {len(pred)} entries, expected {len(order) + 1}")
    return _routes_from_pred(pred, order)


def split_scalar(instance: CvrpInstance, tour: GiantTour, demands, capacity: int | None = None,
                 mode: SplitMode = STRICT) -> SplitResult:
    """Reference split for one tour-ordered demand row.

    Every candidate last route is enumerated and its load checked
    explicitly; the result is the infeasible sentinel (with ``routes`` None)
    when some single demand exceeds capacity in strict mode.
    """
    Q = instance.capacity if capacity is None else int(capacity)
    order = tour.order.tolist()
    n = len(order)
    q = _as_row(demands, n)
    cost, dprefix, lam, sentinel = _python_inputs(instance, tour, mode)

    f = [sentinel] * (n + 1)
    pred = [-1] * (n + 1)
    f[0] = 0
    for i in range(1, n + 1):
        best, arg = sentinel, -1
        load = 0
        loads = [0] * i
        for p in range(i - 1, -1, -1):
            load += q[p]
            loads[p] = load
        for p in range(i):
            if f[p] == sentinel:
                continue
            t = transition_cost(cost, dprefix, order, p, i)
            if mode.penalized:
                v = f[p] + (t + lam * max(0, loads[p] - Q))
            elif loads[p] <= Q:
                v = f[p] + t
            else:
                continue
            if v <= best:
                best, arg = v, p
        f[i], pred[i] = best, arg
    if f[n] == sentinel:
        return SplitResult(sentinel, None, None)
    return SplitResult(f[n], _routes_from_pred(pred, order), pred)


def compute_masks(prefix, capacity: int) -> np.ndarray:
    """Earliest feasible predecessor for every state, per scenario.

    ``prefix`` is an m x (n+1) (or length n+1) demand prefix matrix. The
    result is m x n int64 with column i-1 for state i and ``INFEASIBLE``
    where a single customer already exceeds ``capacity``.
    """
    S = np.asarray(prefix, dtype=np.int64)
    squeeze = S.ndim == 1
    if squeeze:
        S = S[None, :]
    if S.ndim != 2 or S.shape[1] < 1:
        raise ScenarioError("prefix matrix must be m x (n+1)")
    if np.any(S[:, 0] != 0):
        raise ScenarioError("prefix rows must start at 0")
    out = np.empty((S.shape[0], S.shape[1] - 1), dtype=np.int64)
    _kernels.masks_batch(np.ascontiguousarray(S), np.int64(capacity), out)
    return out[0] if squeeze else out


def split_masked(instance: CvrpInstance, tour: GiantTour, mask, demands, capacity: int | None = None,
                 mode: SplitMode = STRICT) -> SplitResult:
    """Split with the capacity window taken from ``mask`` rather than checked."""
    Q = instance.capacity if capacity is None else int(capacity)
    order = tour.order.tolist()
    n = len(order)
    q = _as_row(demands, n)
    mask = np.asarray(mask).tolist()
    if len(mask) != n:
        raise ScenarioError(f"mask row must have {n} entries")
    cost, dprefix, lam, sentinel = _python_inputs(instance, tour, mode)
    S = [0] * (n + 1)
    for k in range(n):
        S[k + 1] = S[k] + q[k]

    f = [0] * (n + 1)
    pred = [-1] * (n + 1)
    for i in range(1, n + 1):
        if mode.penalized:
            lo = 0
        else:
            lo = mask[i - 1]
            if lo == INFEASIBLE:
                return SplitResult(sentinel, None, None)
        best, arg = sentinel, -1
        for p in range(lo, i):
            t = transition_cost(cost, dprefix, order, p, i)
            if mode.penalized:
                t = t + lam * max(0, S[i] - S[p] - Q)
            v = f[p] + t
            if v <= best:
                best, arg = v, p
        f[i], pred[i] = best, arg
    return SplitResult(f[n], _routes_from_pred(pred, order), pred)


def brute_force_split(instance: CvrpInstance, tour: GiantTour, demands, capacity: int | None = None,
                      mode: SplitMode = STRICT) -> SplitResult:
    """Exhaustive optimum over all 2^(n-1) contiguous partitions (n <= 20).

    Route costs are accumulated left to right like the DP. Among optimal
    partitions the one with the largest last cut wins, then the largest
    second-to-last, and so on.
    """
    Q = instance.capacity if capacity is None else int(capacity)
    order = tour.order.tolist()
    n = len(order)
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force refused for n={n} > {BRUTE_FORCE_MAX_N}")
    q = _as_row(demands, n)
    cost, dprefix, lam, sentinel = _python_inputs(instance, tour, mode)

    best, best_key, best_cuts = sentinel, None, None
    for bits in itertools.product((0, 1), repeat=n - 1):
        cuts = [0] + [k for k, b in enumerate(bits, start=1) if b] + [n]
        total = 0
        ok = True
        for p, i in zip(cuts[:-1], cuts[1:]):
            load = sum(q[p:i])
            t = transition_cost(cost, dprefix, order, p, i)
            if mode.penalized:
                t = t + lam * max(0, load - Q)
            elif load > Q:
                ok = False
                break
            total = total + t
        if not ok:
            continue
        key = tuple(reversed(cuts))
        if total < best or (total == best and (best_key is None or key > best_key)):
            best, best_key, best_cuts = total, key, cuts
    if best_cuts is None:
        return SplitResult(sentinel, None, None)
    routes = [tuple(order[p:i]) for p, i in zip(best_cuts[:-1], best_cuts[1:])]
    return SplitResult(best, routes, None)


# --- batched execution ----------------------------------------------------

@lru_cache(maxsize=8)
def _executor(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="split")


def default_workers() -> int:
    return os.cpu_count() or 1


def _numpy_tile(demands, order, head, tail, dprefix, capacity, penalized, lam, sentinel,
                out_cost, out_pred, record_pred):
    """One tile as n batched min-plus matrix-vector steps.

    Layer i reduces F[:, :i] (+) T[:i, i] over p, with entries outside the
    capacity window replaced by the sentinel. Reversing the candidate axis
    before argmin keeps the largest p among ties.
    """
    k = demands.shape[0]
    n = len(order)
    S = demand_prefix_sums(demands[:, order - 1])
    # T[p, i-1] = t(p, i) for p < i, same expression order as the kernels
    T = (head[:, None] + (dprefix[None, :] - dprefix[:, None])) + tail[None, :]
    F = np.full((k, n + 1), sentinel, dtype=out_cost.dtype)
    F[:, 0] = 0
    P = np.full((k, n + 1), -1, dtype=np.int32)
    if penalized:
        dead = np.zeros(k, dtype=bool)
    else:
        mask = compute_masks(S, capacity)
        dead = (mask == INFEASIBLE).any(axis=1)
    rows = np.arange(k)
    with np.errstate(over="ignore"):
        for i in range(1, n + 1):
            t = T[:i, i - 1]
            if penalized:
                over = np.maximum(S[:, i : i + 1] - S[:, :i] - capacity, 0)
                cand = F[:, :i] + (t[None, :] + lam * over)
            else:
                valid = (np.arange(i)[None, :] >= mask[:, i - 1 : i]) & ~dead[:, None]
                cand = np.where(valid, F[:, :i] + t[None, :], sentinel)
            j = np.argmin(cand[:, ::-1], axis=1)
            p = i - 1 - j
            F[:, i] = cand[rows, p]
            P[:, i] = p
    res = F[:, n].copy()
    res[dead] = sentinel
    out_cost[:] = res
    if record_pred:
        P[dead] = -1
        out_pred[:] = P


def split_batch(instance: CvrpInstance, tour: GiantTour, scenarios: ScenarioSet | np.ndarray,
                capacity: int | None = None, mode: SplitMode = STRICT, tile_size: int = DEFAULT_TILE,
                workers: int | None = 1, record_pred: bool = False,
                backend: str = "numba") -> SplitBatchResult:
    """Optimal split cost of ``tour`` under every scenario row.

    ``scenarios`` is in customer order. Tiles of ``tile_size`` scenarios are
    processed independently (on ``workers`` threads when > 1) and write
    disjoint slices of the output, so results do not depend on either knob.
    """
    t0 = time.perf_counter()
    if not isinstance(tour, GiantTour):
        tour = make_tour(instance, tour)
    demands = scenarios.demands if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    if demands.ndim != 2 or demands.shape[1] != instance.n or tour.n != instance.n:
        raise ScenarioError(f"scenario matrix {demands.shape} does not match n={instance.n}")
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")

    Q = instance.capacity if capacity is None else int(capacity)
    dtype = value_dtype(instance, mode)
    cost = np.ascontiguousarray(instance.cost, dtype=dtype)
    dprefix = tour.dist_prefix if tour.dist_prefix.dtype == dtype else _kernels.dist_prefix(tour.order, cost)
    lam = dtype.type(mode.lam)
    sentinel = dtype.type(sentinel_for(dtype))
    order = np.ascontiguousarray(tour.order, dtype=np.int64)
    head = np.ascontiguousarray(cost[0, order])
    tail = np.ascontiguousarray(cost[order, instance.n + 1])
    m = demands.shape[0]
    try:
        out_cost = np.empty(m, dtype=dtype)
        out_pred = np.empty((m, instance.n + 1), dtype=np.int32) if record_pred else np.empty((0, 0), np.int32)
    except MemoryError:
        raise ResourceError(f"cannot allocate results for {m} scenarios; "
                            "evaluate in smaller batches or disable predecessor recording") from None

    kernel = _kernels.split_tile if backend == "numba" else _numpy_tile
    bounds = [(s, min(s + tile_size, m)) for s in range(0, m, tile_size)]

    def run(span):
        s, e = span
        try:
            kernel(demands[s:e], order, head, tail, dprefix, Q, mode.penalized, lam, sentinel,
                   out_cost[s:e], out_pred[s:e] if record_pred else out_pred, record_pred)
        except MemoryError:
            raise ResourceError(f"out of memory at tile_size={tile_size}; try a smaller tile") from None

    if workers == 1 or len(bounds) == 1:
        for span in bounds:
            run(span)
    else:
        list(_executor(workers).map(run, bounds))

    stats = {"m": m, "n": instance.n, "tiles": len(bounds), "tile_size": tile_size,
             "workers": workers, "backend": backend,
             "wall_ms": (time.perf_counter() - t0) * 1e3}
    return SplitBatchResult(out_cost, out_pred if record_pred else None, stats)
