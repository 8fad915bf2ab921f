"""Genetic search over giant tours with split-based SAA fitness.

A compact population method: binary tournament, order crossover, random
relocate/swap mutation and a first-improvement local search on the
sequence, with fitness = mean penalized split cost over the training
scenarios. All randomness comes from one generator seeded by the config.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from cvrpsd import _kernels
from cvrpsd.instance import CvrpInstance, GiantTour, check_permutation, make_tour
from cvrpsd.saa import SaaError, estimate_from_costs
from cvrpsd.scenarios import ScenarioSet
from cvrpsd.split import DEFAULT_TILE, STRICT, SplitMode, split_batch

MOVES = ("relocate", "swap", "2opt")


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 25
    offspring_per_generation: int = 40
    elite_fraction: float = 0.4
    mutation_rate: float = 0.3
    moves: tuple[str, ...] = MOVES
    lam: float | None = None  # None -> 10 x mean arc cost
    time_budget: float | None = 10.0
    generations: int | None = None
    screen_size: int = 1024
    move_cap_factor: int = 10
    granular: int = 20
    seed: int = 0
    workers: int = 1
    tile_size: int = DEFAULT_TILE

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.offspring_per_generation < 1:
            raise ValueError("offspring_per_generation must be >= 1")
        for name in ("elite_fraction", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.time_budget is None and self.generations is None:
            raise ValueError("set a time_budget or a generation count")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")
        unknown = set(self.moves) - set(MOVES)
        if unknown:
            raise ValueError(f"unknown local search moves {sorted(unknown)}")

    def replace(self, **kw) -> "SearchConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["moves"] = list(self.moves)
        return d

    def resolve_lambda(self, instance: CvrpInstance) -> float:
        if self.lam is not None:
            return float(self.lam)
        n = instance.n
        arcs = instance.cost[: n + 1, : n + 1]
        mean_arc = float(arcs.sum()) / max(1, (n + 1) * n)
        return 10.0 * mean_arc


@dataclass
class Individual:
    tour: GiantTour
    fitness: float
    eval_m: int

    @property
    def key(self) -> tuple[int, ...]:
        return tuple(self.tour.order.tolist())


@dataclass
class TracePoint:
    elapsed_ms: float
    evaluations: int
    best_penalized_cost: float
    best_strict_cost: float


@dataclass
class SearchTrace:
    points: list[TracePoint] = field(default_factory=list)
    generations: int = 0
    evaluations: int = 0
    elapsed_ms: float = 0.0

    COLUMNS = ("elapsed_ms", "evaluations", "best_penalized_cost", "best_strict_cost")

    def rows(self) -> list[tuple]:
        return [(p.elapsed_ms, p.evaluations, p.best_penalized_cost, p.best_strict_cost)
                for p in self.points]

    def best_at(self, elapsed_ms: float) -> float:
        """Best penalized cost known at a wall-clock offset (nan before the first point)."""
        best = math.nan
        for p in self.points:
            if p.elapsed_ms > elapsed_ms:
                break
            best = p.best_penalized_cost
        return best

    def write_csv(self, path, header: dict | None = None) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            w.writerows(self.rows())
        return path


class Evaluator:
    """Penalized SAA fitness of tours on a fixed scenario set, with a cache."""

    def __init__(self, instance: CvrpInstance, scenarios: ScenarioSet, mode: SplitMode,
                 workers: int = 1, tile_size: int = DEFAULT_TILE):
        self.instance = instance
        self.scenarios = scenarios
        self.mode = mode
        self.workers = workers
        self.tile_size = tile_size
        self.calls = 0
        self._cache: dict[tuple[int, ...], float] = {}
        self._cost_f64 = np.ascontiguousarray(instance.cost, dtype=np.float64)

    @property
    def m(self) -> int:
        return self.scenarios.m

    def __call__(self, tour: GiantTour) -> float:
        key = tuple(tour.order.tolist())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        self.calls += 1
        res = split_batch(self.instance, tour, self.scenarios, mode=self.mode,
                          workers=self.workers, tile_size=self.tile_size)
        value = estimate_from_costs(res.cost, res.sentinel).mean
        self._cache[key] = value
        return value

    def screen(self, order: np.ndarray) -> float:
        """Uncached compiled mean; for ranking neighbours only."""
        self.calls += 1
        return float(_kernels.penalized_mean(self.scenarios.demands, order, self._cost_f64,
                                             self.instance.capacity, float(self.mode.lam)))

    def strict(self, tour: GiantTour) -> float:
        res = split_batch(self.instance, tour, self.scenarios, mode=STRICT,
                          workers=self.workers, tile_size=self.tile_size)
        try:
            return estimate_from_costs(res.cost, res.sentinel).mean
        except SaaError:
            return math.nan


# --- variation operators ---------------------------------------------------

def crossover_ox(parent_a, parent_b, rng: np.random.Generator, cut: tuple[int, int] | None = None) -> np.ndarray:
    """Order crossover: keep ``a[i:j]`` in place and fill the remaining
    positions, starting at j and wrapping, with the other customers in the
    order they appear in ``b`` starting from position j."""
    a = np.asarray(getattr(parent_a, "order", parent_a))
    b = np.asarray(getattr(parent_b, "order", parent_b))
    n = len(a)
    if cut is None:
        i, j = sorted(rng.choice(n + 1, size=2, replace=False))
    else:
        i, j = cut
    if not 0 <= i < j <= n:
        raise ValueError(f"invalid crossover slice {(i, j)} for n={n}")
    child = np.zeros(n, dtype=np.int64)
    child[i:j] = a[i:j]
    kept = set(a[i:j].tolist())
    fill = [c for c in np.roll(b, -j).tolist() if c not in kept]
    positions = [(j + k) % n for k in range(n - (j - i))]
    child[positions] = fill
    return child


def apply_move(order: np.ndarray, move: str, i: int, j: int) -> np.ndarray:
    """relocate: take position i and reinsert it so it ends up at position j;
    swap: exchange positions i and j; 2opt: reverse positions i..j."""
    out = order.copy()
    if move == "relocate":
        c = out[i]
        out = np.insert(np.delete(out, i), j, c)
    elif move == "swap":
        out[i], out[j] = out[j], out[i]
    elif move == "2opt":
        lo, hi = min(i, j), max(i, j)
        out[lo : hi + 1] = out[lo : hi + 1][::-1]
    else:
        raise ValueError(f"unknown move {move!r}")
    return out


def mutate(order: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(order)
    if n < 2:
        return order.copy()
    i, j = rng.choice(n, size=2, replace=False)
    return apply_move(order, "relocate" if rng.random() < 0.5 else "swap", int(i), int(j))


def _neighbor_lists(instance: CvrpInstance, k: int) -> list[np.ndarray]:
    n = instance.n
    c = np.asarray(instance.cost[1 : n + 1, 1 : n + 1], dtype=np.float64).copy()
    np.fill_diagonal(c, np.inf)
    k = min(k, n - 1)
    return [np.argsort(c[u], kind="stable")[:k] + 1 for u in range(n)]


def nearest_neighbor_order(instance: CvrpInstance, start: int) -> np.ndarray:
    """Greedy chain from ``start`` always moving to the closest unvisited customer."""
    n = instance.n
    c = np.asarray(instance.cost[1 : n + 1, 1 : n + 1], dtype=np.float64)
    seen = np.zeros(n, dtype=bool)
    out = [start]
    seen[start - 1] = True
    for _ in range(n - 1):
        row = np.where(seen, np.inf, c[out[-1] - 1])
        nxt = int(np.argmin(row)) + 1
        out.append(nxt)
        seen[nxt - 1] = True
    return np.array(out, dtype=np.int64)


def _moves_for(pos: np.ndarray, u: int, v: int, moves) -> list[tuple[str, int, int]]:
    pu, pv = int(pos[u]), int(pos[v])
    out = []
    if "relocate" in moves:
        # put u right after v
        target = pv + 1 if pv < pu else pv
        if target != pu:
            out.append(("relocate", pu, target))
    if "swap" in moves:
        out.append(("swap", pu, pv))
    if "2opt" in moves and abs(pu - pv) > 1:
        # make u and v adjacent by reversing the stretch after the earlier one
        lo, hi = sorted((pu, pv))
        out.append(("2opt", lo + 1, hi))
    return out


def local_search(instance: CvrpInstance, tour, evaluate, rng: np.random.Generator, moves=MOVES,
                 move_cap: int | None = None, neighbors=None, deadline: float | None = None,
                 fitness: float | None = None) -> tuple[GiantTour, float]:
    """First-improvement descent over relocate/swap/2-opt.

    Customers are visited in random order and each is tried against its
    nearest neighbours; an improving move is applied at once and the sweep
    carries on. ``evaluate`` maps an order array to its (screening)
    fitness. Stops at a local optimum, after ``move_cap`` applied moves
    (default 10n), or at ``deadline`` (a ``time.perf_counter`` value).
    """
    if not isinstance(tour, GiantTour):
        tour = make_tour(instance, tour)
    n = instance.n
    move_cap = 10 * n if move_cap is None else move_cap
    if neighbors is None:
        neighbors = _neighbor_lists(instance, n - 1)
    order = tour.order.copy()
    value = evaluate(order) if fitness is None else fitness
    pos = np.empty(n + 1, dtype=np.int64)
    pos[order] = np.arange(n)
    applied = 0
    improved = True
    while improved and applied < move_cap:
        improved = False
        for u in rng.permutation(np.arange(1, n + 1)):
            for v in neighbors[u - 1]:
                for move, i, j in _moves_for(pos, u, v, moves):
                    if deadline is not None and time.perf_counter() > deadline:
                        return make_tour(instance, order), value
                    cand = apply_move(order, move, i, j)
                    cv = evaluate(cand)
                    if cv < value:
                        order, value = cand, cv
                        pos[order] = np.arange(n)
                        applied += 1
                        improved = True
                        if applied >= move_cap:
                            return make_tour(instance, order), value
                        break
    return make_tour(instance, order), value


# --- driver -------------------------------------------------------------------

def solve(instance: CvrpInstance, train: ScenarioSet, config: SearchConfig | None = None,
          on_improvement=None) -> tuple[Individual, SearchTrace]:
    """Search for the giant tour with least mean penalized split cost on ``train``.

    Runs until ``config.time_budget`` seconds elapse or ``config.generations``
    generations complete, whichever comes first. The trace gets a point on
    every improvement of the best fitness.
    """
    config = config or SearchConfig()
    if train.m < 1:
        raise ValueError("training set is empty")
    if train.n != instance.n:
        raise ValueError(f"training scenarios have n={train.n}, instance has n={instance.n}")
    rng = np.random.default_rng(config.seed)
    lam = config.resolve_lambda(instance)
    mode = SplitMode.penalty(lam)
    full = Evaluator(instance, train, mode, workers=config.workers, tile_size=config.tile_size)
    screen = full if train.m <= config.screen_size else Evaluator(instance, train.head(config.screen_size), mode)
    neighbors = _neighbor_lists(instance, config.granular)
    move_cap = config.move_cap_factor * instance.n

    start = time.perf_counter()
    deadline = start + config.time_budget if config.time_budget is not None else None
    trace = SearchTrace()
    population: list[Individual] = []
    best: Individual | None = None

    def evaluations() -> int:
        return full.calls + (screen.calls if screen is not full else 0)

    def out_of_time() -> bool:
        return deadline is not None and time.perf_counter() > deadline

    def record(ind: Individual) -> None:
        nonlocal best
        if best is not None and ind.fitness == best.fitness and ind.key < best.key:
            # equal fitness: keep the lexicographically smallest tour so ties resolve canonically
            best = ind
        if best is None or ind.fitness < best.fitness:
            best = ind
            point = TracePoint((time.perf_counter() - start) * 1e3, evaluations(), ind.fitness,
                               full.strict(ind.tour))
            trace.points.append(point)
            if on_improvement:
                on_improvement(point)

    def admit(order: np.ndarray) -> Individual:
        tour = make_tour(instance, order)
        check_permutation(tour.order, instance.n)
        if best is None:
            # score the very first tour before improving it, so the trace starts right away
            record(Individual(tour, full(tour), full.m))
        if not out_of_time():
            tour, _ = local_search(instance, tour, screen.screen, rng, config.moves, move_cap, neighbors,
                                   deadline)
        ind = Individual(tour, full(tour), full.m)
        population.append(ind)
        record(ind)
        return ind

    # half greedy chains from random starts, half random permutations
    for k in range(config.population_size):
        if k % 2 == 0:
            admit(nearest_neighbor_order(instance, int(rng.integers(1, instance.n + 1))))
        else:
            admit(rng.permutation(np.arange(1, instance.n + 1)))
        if out_of_time():
            break

    n_elite = max(1, math.ceil(config.elite_fraction * config.population_size))
    gen = 0
    while not out_of_time() and (config.generations is None or gen < config.generations):
        for _ in range(config.offspring_per_generation):
            if out_of_time():
                break
            pa = _tournament(population, rng)
            pb = _tournament(population, rng)
            child = crossover_ox(pa.tour, pb.tour, rng)
            if rng.random() < config.mutation_rate:
                child = mutate(child, rng)
            admit(child)
        population = _survivors(population, config.population_size, n_elite, rng)
        gen += 1

    trace.generations = gen
    trace.evaluations = evaluations()
    trace.elapsed_ms = (time.perf_counter() - start) * 1e3
    return best, trace


def _tournament(population: list[Individual], rng: np.random.Generator) -> Individual:
    if len(population) == 1:
        return population[0]
    i, j = rng.choice(len(population), size=2, replace=False)
    a, b = population[i], population[j]
    return a if a.fitness <= b.fitness else b


def _survivors(population: list[Individual], size: int, n_elite: int,
               rng: np.random.Generator) -> list[Individual]:
    unique: dict[tuple, Individual] = {}
    for ind in sorted(population, key=lambda x: x.fitness):
        unique.setdefault(ind.key, ind)
    ranked = list(unique.values())
    if len(ranked) <= size:
        return ranked
    elite, rest = ranked[:n_elite], ranked[n_elite:]
    picks = rng.choice(len(rest), size=size - len(elite), replace=False)
    return elite + [rest[k] for k in sorted(picks)]
