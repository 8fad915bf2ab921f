"""CVRP instance data, TSPLIB-style parsing and giant tours.

Node indexing: 0 is the departure depot, 1..n are customers and n+1 is the
return depot, which aliases the depot coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cvrpsd._kernels import dist_prefix as _dist_prefix_kernel

ROUNDING_MODES = ("exact-float", "nearest-integer")


class InstanceError(ValueError):
    """Raised for malformed instance files or invalid instance data."""


class TourError(ValueError):
    """Raised when a giant tour is not a permutation of the customers."""


def build_cost_matrix(coords, rounding: str = "exact-float") -> np.ndarray:
    """Pairwise Euclidean costs with the depot duplicated as node n+1.

    ``coords`` holds the depot first, then the customers. The returned
    matrix is (len(coords)+1) square. ``nearest-integer`` rounds half up
    (TSPLIB ``nint``) and returns int64; ``exact-float`` returns float64.
    """
    xy = np.asarray(coords, dtype=np.float64)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise InstanceError(f"coordinates must be an (N, 2) array, got shape {xy.shape}")
    if xy.shape[0] < 1:
        raise InstanceError("at least one node (the depot) is required")
    if not np.all(np.isfinite(xy)):
        bad = int(np.argwhere(~np.isfinite(xy))[0, 0])
        raise InstanceError(f"non-finite coordinate at node {bad}")
    if rounding not in ROUNDING_MODES:
        raise InstanceError(f"unknown rounding mode {rounding!r}; expected one of {ROUNDING_MODES}")

    full = np.vstack([xy, xy[:1]])
    diff = full[:, None, :] - full[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    if rounding == "nearest-integer":
        return np.floor(dist + 0.5).astype(np.int64)
    return dist


@dataclass(frozen=True)
class CvrpInstance:
    """Deterministic CVRP data shared by every scenario.

    ``cost`` is (n+2) x (n+2); rows/columns 0 and n+1 are the same depot.
    ``demands`` holds the nominal customer demands (length n), which serve
    as the baseline for scenario generation.
    """

    name: str
    capacity: int
    coords: np.ndarray
    cost: np.ndarray
    demands: np.ndarray
    rounding: str = "exact-float"

    def __post_init__(self):
        n = self.n
        if self.capacity < 1:
            raise InstanceError("capacity must be positive")
        if self.cost.shape != (n + 2, n + 2):
            raise InstanceError(f"cost matrix must be {(n + 2, n + 2)}, got {self.cost.shape}")
        if not np.all(np.isfinite(self.cost)) or np.any(self.cost < 0):
            raise InstanceError("costs must be finite and nonnegative")
        if np.any(np.diag(self.cost) != 0):
            raise InstanceError("cost[a][a] must be zero")
        if not (np.array_equal(self.cost[0], self.cost[n + 1])
                and np.array_equal(self.cost[:, 0], self.cost[:, n + 1])):
            raise InstanceError("departure and return depot rows must be identical")
        if self.demands.shape != (n,):
            raise InstanceError(f"expected {n} nominal demands, got {self.demands.shape}")
        if np.any(self.demands < 0):
            raise InstanceError("nominal demands must be nonnegative")
        for arr in (self.coords, self.cost, self.demands):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.cost.shape[0]) - 2

    @property
    def integer_costs(self) -> bool:
        return np.issubdtype(self.cost.dtype, np.integer)

    @classmethod
    def from_coords(cls, coords, demands, capacity: int, name: str = "instance",
                    rounding: str = "exact-float") -> "CvrpInstance":
        coords = np.asarray(coords, dtype=np.float64)
        cost = build_cost_matrix(coords, rounding)
        return cls(name=name, capacity=int(capacity), coords=coords, cost=cost,
                   demands=np.asarray(demands, dtype=np.int64), rounding=rounding)

    @classmethod
    def from_cost_matrix(cls, cost, demands, capacity: int, name: str = "matrix") -> "CvrpInstance":
        """Build from an (n+1) x (n+1) depot+customer matrix; the depot is duplicated."""
        cost = np.asarray(cost)
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise InstanceError("cost matrix must be square")
        idx = np.r_[np.arange(cost.shape[0]), 0]
        full = cost[np.ix_(idx, idx)].copy()
        rounding = "nearest-integer" if np.issubdtype(full.dtype, np.integer) else "exact-float"
        if rounding == "nearest-integer":
            full = full.astype(np.int64)
        else:
            full = full.astype(np.float64)
        coords = np.full((cost.shape[0], 2), np.nan)
        return cls(name=name, capacity=int(capacity), coords=coords, cost=full,
                   demands=np.asarray(demands, dtype=np.int64), rounding=rounding)


def random_instance(n: int, seed: int = 0, capacity: int | None = None, demand_range=(1, 30),
                    grid: float = 1000.0, rounding: str = "exact-float", name: str | None = None) -> CvrpInstance:
    """Uniform random coordinates on a square grid with depot at the centre.

    When ``capacity`` is omitted it is chosen so an average route carries
    about eight customers' worth of nominal demand.
    """
    rng = np.random.default_rng(seed)
    coords = np.vstack([[grid / 2, grid / 2], rng.uniform(0, grid, size=(n, 2))])
    demands = rng.integers(demand_range[0], demand_range[1] + 1, size=n)
    if capacity is None:
        capacity = max(int(demands.max()), int(round(8 * demands.mean())))
    return CvrpInstance.from_coords(coords, demands, capacity,
                                    name=name or f"synthetic-n{n}-s{seed}", rounding=rounding)


# --- TSPLIB text format ---------------------------------------------------

_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")


def parse_instance(text: str, rounding: str = "exact-float") -> CvrpInstance:
    """Parse a TSPLIB-style CVRP file (EUC_2D coordinates)."""
    header: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    demands: dict[int, int] = {}
    depots: list[int] = []
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        upper = line.upper()
        if upper == "EOF":
            break
        if upper in _SECTIONS:
            section = upper
            continue
        if ":" in line:
            key, _, value = line.partition(":")
            header[key.strip().upper()] = value.strip()
            section = None
            continue
        parts = line.split()
        try:
            if section == "NODE_COORD_SECTION":
                if len(parts) != 3:
                    raise ValueError
                node = int(parts[0])
                if node in coords:
                    raise InstanceError(f"line {lineno}: duplicate node {node}")
                coords[node] = (float(parts[1]), float(parts[2]))
            elif section == "DEMAND_SECTION":
                if len(parts) != 2:
                    raise ValueError
                node, dem = int(parts[0]), int(parts[1])
                if dem < 0:
                    raise InstanceError(f"line {lineno}: negative demand {dem} for node {node}")
                demands[node] = dem
            elif section == "DEPOT_SECTION":
                if len(parts) != 1:
                    raise ValueError
                value = int(parts[0])
                if value != -1:
                    depots.append(value)
            else:
                raise InstanceError(f"line {lineno}: unexpected content {line!r}")
        except ValueError as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(f"line {lineno}: malformed {section} entry {line!r}") from None

    if "CAPACITY" not in header:
        raise InstanceError("missing CAPACITY")
    try:
        capacity = int(header["CAPACITY"])
    except ValueError:
        raise InstanceError(f"CAPACITY is not an integer: {header['CAPACITY']!r}") from None
    if capacity < 1:
        raise InstanceError("capacity must be positive")
    ewt = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if ewt != "EUC_2D":
        raise InstanceError(f"unsupported EDGE_WEIGHT_TYPE {ewt}")
    if not coords:
        raise InstanceError("missing NODE_COORD_SECTION")

    ids = sorted(coords)
    first = ids[0]
    if ids != list(range(first, first + len(ids))):
        missing = sorted(set(range(first, ids[-1] + 1)) - set(ids))
        raise InstanceError(f"non-contiguous node ids; missing {missing[:5]}")
    if "DIMENSION" in header and int(header["DIMENSION"]) != len(ids):
        raise InstanceError(f"DIMENSION {header['DIMENSION']} does not match {len(ids)} coordinate lines")
    if set(demands) != set(ids):
        raise InstanceError("DEMAND_SECTION must list every node exactly once")
    depot = depots[0] if depots else first
    if len(depots) > 1:
        raise InstanceError("multiple depots are not supported")
    if depot not in coords:
        raise InstanceError(f"depot {depot} has no coordinates")

    order = [depot] + [i for i in ids if i != depot]
    xy = np.array([coords[i] for i in order], dtype=np.float64)
    nominal = np.array([demands[i] for i in order[1:]], dtype=np.int64)
    return CvrpInstance.from_coords(xy, nominal, capacity, name=header.get("NAME", "instance"),
                                    rounding=rounding)


def load_instance(path, rounding: str = "exact-float") -> CvrpInstance:
    return parse_instance(Path(path).read_text(), rounding=rounding)


def render_instance(instance: CvrpInstance) -> str:
    """Write an instance back to TSPLIB text; floats use repr so parsing round-trips."""
    n = instance.n
    lines = [
        f"NAME : {instance.name}",
        "TYPE : CVRP",
        f"DIMENSION : {n + 1}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        f"CAPACITY : {instance.capacity}",
        "NODE_COORD_SECTION",
    ]
    lines += [f"{i + 1} {float(x)!r} {float(y)!r}" for i, (x, y) in enumerate(instance.coords)]
    lines.append("DEMAND_SECTION")
    lines.append("1 0")
    lines += [f"{i + 2} {int(d)}" for i, d in enumerate(instance.demands)]
    lines += ["DEPOT_SECTION", "1", "-1", "EOF", ""]
    return "\n".join(lines)


# --- giant tours -------------------------------------------------------------

@dataclass(frozen=True)
class GiantTour:
    """A first-stage customer permutation with its chain-cost prefix.

    ``dist_prefix[k]`` is the travel cost along the tour from position 0 to
    position k (0-based), so the chain cost of positions p..i-1 is
    ``dist_prefix[i-1] - dist_prefix[p]``.
    """

    order: np.ndarray
    dist_prefix: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(int(c) for c in self.order)


def check_permutation(order: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(order)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise TourError("tour must be a 1-D sequence of integer customer ids")
    seen: set[int] = set()
    problems = []
    for c in arr.tolist():
        if c < 1 or c > n:
            problems.append(f"customer {c} out of range 1..{n}")
        elif c in seen:
            problems.append(f"duplicate customer {c}")
        seen.add(c)
    missing = sorted(set(range(1, n + 1)) - seen)
    if missing:
        problems.append("missing customers " + ", ".join(map(str, missing)))
    if problems:
        raise TourError("; ".join(problems))
    return arr.astype(np.int64)


def make_tour(instance: CvrpInstance, order: Iterable[int]) -> GiantTour:
    order_arr = check_permutation(list(order), instance.n)
    prefix = _dist_prefix_kernel(order_arr, instance.cost)
    order_arr.setflags(write=False)
    prefix.setflags(write=False)
    return GiantTour(order=order_arr, dist_prefix=prefix)


def identity_tour(instance: CvrpInstance) -> GiantTour:
    return make_tour(instance, range(1, instance.n + 1))


def read_tour(path) -> list[int]:
    """Whitespace/comma separated customer ids; ``#`` starts a comment."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].replace(",", " ")
        tokens += line.split()
    return [int(t) for t in tokens]


def route_cost(instance: CvrpInstance, route: Sequence[int]):
    """Depot -> route -> return depot travel cost, summed left to right."""
    c = instance.cost
    total = c[0, route[0]]
    for a, b in zip(route[:-1], route[1:]):
        total = total + c[a, b]
    return total + c[route[-1], instance.n + 1]
