"""Demand scenario generation, reordering, prefix sums and persistence.

Demands are stored as uint16 in customer-id order, one scenario per row.
Sampling is counter based: scenarios are drawn in fixed-size blocks, each
block seeded from (seed, block index) alone, so the first m' rows of a
size-m sample do not depend on m.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Q_MAX = 2**16 - 1
BLOCK = 4096

KINDS = ("fixed", "uniform", "normal", "correlated")
_KIND_TAGS = {k: i for i, k in enumerate(KINDS)}


class ScenarioError(ValueError):
    """Invalid scenario parameters or a dimension mismatch."""


class ScenarioFileError(ScenarioError):
    """A scenario file is corrupt, truncated or of the wrong format."""


@dataclass(frozen=True)
class DemandModel:
    """Scenario generation law around a nominal demand vector.

    kind:
      fixed        every scenario equals ``nominal``
      uniform      integers uniform on [nint(lo*nom), nint(hi*nom)]
      normal       nom*(1 + cv*z), clamped to [0, 2*nom], rounded
      correlated   nom*(1 + rho*g + (1-rho)*e) with g ~ N(0, cv^2) shared by
                   the scenario and e ~ N(0, cv^2) per customer, clamped at 0
    """

    kind: str
    nominal: np.ndarray
    seed: int = 0
    lo: float = 1.0
    hi: float = 1.0
    cv: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown demand model {self.kind!r}; expected one of {KINDS}")
        nominal = np.asarray(self.nominal, dtype=np.int64)
        if nominal.ndim != 1:
            raise ScenarioError("nominal demands must be a vector")
        if np.any(nominal < 0):
            raise ScenarioError("nominal demands must be nonnegative")
        if np.any(nominal > Q_MAX):
            raise ScenarioError(f"nominal demands must be <= {Q_MAX}")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must fit in 64 unsigned bits")
        if self.kind == "uniform" and not 0 <= self.lo <= self.hi:
            raise ScenarioError("uniform model needs 0 <= lo <= hi")
        if self.cv < 0:
            raise ScenarioError("cv must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise ScenarioError("rho must lie in [0, 1]")
        nominal.setflags(write=False)
        object.__setattr__(self, "nominal", nominal)

    @property
    def n(self) -> int:
        return len(self.nominal)

    @property
    def deterministic(self) -> bool:
        return (self.kind == "fixed"
                or (self.kind == "uniform" and self.lo == self.hi)
                or (self.kind in ("normal", "correlated") and self.cv == 0))

    def with_seed(self, seed: int) -> "DemandModel":
        return DemandModel(self.kind, self.nominal, seed, self.lo, self.hi, self.cv, self.rho)

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "uniform":
            d.update(lo=self.lo, hi=self.hi)
        elif self.kind == "normal":
            d.update(cv=self.cv)
        elif self.kind == "correlated":
            d.update(cv=self.cv, rho=self.rho)
        return d


def parse_model(spec: str, nominal, seed: int = 0) -> DemandModel:
    """``fixed``, ``uniform:LO,HI``, ``normal:CV`` or ``correlated:CV,RHO``."""
    kind, _, args = spec.partition(":")
    kind = kind.strip().lower()
    aliases = {"uniform-integer": "uniform", "truncated-normal": "normal",
               "common-factor-correlated": "correlated"}
    kind = aliases.get(kind, kind)
    try:
        vals = [float(a) for a in args.split(",")] if args.strip() else []
    except ValueError:
        raise ScenarioError(f"bad model parameters in {spec!r}") from None
    expected = {"fixed": 0, "uniform": 2, "normal": 1, "correlated": 2}
    if kind not in expected:
        raise ScenarioError(f"unknown demand model {kind!r}")
    if len(vals) != expected[kind]:
        raise ScenarioError(f"model {kind!r} takes {expected[kind]} parameters, got {len(vals)}")
    kw = {}
    if kind == "uniform":
        kw = dict(lo=vals[0], hi=vals[1])
    elif kind == "normal":
        kw = dict(cv=vals[0])
    elif kind == "correlated":
        kw = dict(cv=vals[0], rho=vals[1])
    return DemandModel(kind, np.asarray(nominal), seed, **kw)


@dataclass(frozen=True)
class ScenarioSet:
    demands: np.ndarray
    model: DemandModel | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = self.demands
        if d.ndim != 2:
            raise ScenarioError("demands must be an m x n matrix")
        if d.dtype != np.uint16:
            if np.any(d < 0) or np.any(d > Q_MAX):
                raise ScenarioError(f"demands must be integers in [0, {Q_MAX}]")
            d = np.ascontiguousarray(d, dtype=np.uint16)
        elif not d.flags.c_contiguous:
            d = np.ascontiguousarray(d)
        d.setflags(write=False)
        object.__setattr__(self, "demands", d)

    @property
    def m(self) -> int:
        return self.demands.shape[0]

    @property
    def n(self) -> int:
        return self.demands.shape[1]

    def head(self, m: int) -> "ScenarioSet":
        return ScenarioSet(self.demands[:m], self.model, self.seed, dict(self.meta))

    def provenance(self) -> dict:
        return {"m": self.m, "n": self.n, "seed": self.seed,
                "model": self.model.describe() if self.model else None, **self.meta}


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _sample_block(model: DemandModel, block: int, rows: int) -> np.ndarray:
    nominal = model.nominal.astype(np.float64)
    n = model.n
    if model.kind == "fixed":
        return np.broadcast_to(model.nominal, (rows, n)).astype(np.int64)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(model.seed, spawn_key=(block,))))
    if model.kind == "uniform":
        lo = _round_half_up(model.lo * nominal).astype(np.int64)
        hi = _round_half_up(model.hi * nominal).astype(np.int64)
        return rng.integers(lo, hi, size=(rows, n), endpoint=True)
    if model.kind == "normal":
        z = rng.standard_normal((rows, n))
        x = nominal * (1.0 + model.cv * z)
        return _round_half_up(np.clip(x, 0.0, 2.0 * nominal)).astype(np.int64)
    g = rng.standard_normal((rows, 1)) * model.cv
    e = rng.standard_normal((rows, n)) * model.cv
    x = nominal * (1.0 + model.rho * g + (1.0 - model.rho) * e)
    return _round_half_up(np.maximum(x, 0.0)).astype(np.int64)


def sample_scenarios(model: DemandModel, m: int) -> ScenarioSet:
    """Draw ``m`` scenarios; deterministic in (model, m) and prefix stable in m."""
    if m < 1:
        raise ScenarioError("scenario count m must be at least 1")
    out = np.empty((m, model.n), dtype=np.uint16)
    for b, start in enumerate(range(0, m, BLOCK)):
        stop = min(start + BLOCK, m)
        block = _sample_block(model, b, BLOCK)[: stop - start]
        np.clip(block, 0, Q_MAX, out=block)
        out[start:stop] = block
    return ScenarioSet(out, model, model.seed)


def permute_to_tour_order(scenarios: ScenarioSet | np.ndarray, tour) -> np.ndarray:
    """Contiguous copy whose column k holds the demand of customer ``tour.order[k]``."""
    demands = scenarios.demands if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    order = np.asarray(getattr(tour, "order", tour))
    if demands.ndim != 2 or demands.shape[1] != len(order):
        raise ScenarioError(f"scenario width {demands.shape[-1]} does not match tour length {len(order)}")
    return np.ascontiguousarray(demands[:, order - 1])


def demand_prefix_sums(tour_demands) -> np.ndarray:
    """m x (n+1) int64 prefix matrix with a leading zero column."""
    q = np.asarray(tour_demands)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2:
        raise ScenarioError("expected an m x n demand matrix")
    out = np.zeros((q.shape[0], q.shape[1] + 1), dtype=np.int64)
    np.cumsum(q, axis=1, dtype=np.int64, out=out[:, 1:])
    return out


# --- binary file format -----------------------------------------------------
#
# "SCNS" | version u16 | m u64 | n u32 | q_max u16 | seed u64
# | kind u8 | lo f64 | hi f64 | cv f64 | rho f64 | nominal u32 * n
# | payload u16 * m * n (row-major) | crc32 u32 over everything before it
# All little-endian.

MAGIC = b"SCNS"
VERSION = 1
_HEADER = struct.Struct("<4sHQIHQ")
_MODEL = struct.Struct("<Bdddd")
_CRC = struct.Struct("<I")


def header_size(n: int) -> int:
    return _HEADER.size + _MODEL.size + 4 * n


def file_size(m: int, n: int) -> int:
    return header_size(n) + 2 * m * n + _CRC.size


def save_scenarios(scenarios: ScenarioSet, path) -> Path:
    path = Path(path)
    model = scenarios.model
    m, n = scenarios.demands.shape
    q_max = int(scenarios.demands.max()) if scenarios.demands.size else 0
    head = _HEADER.pack(MAGIC, VERSION, m, n, q_max, scenarios.seed)
    if model is None:
        head += _MODEL.pack(255, 0.0, 0.0, 0.0, 0.0) + np.zeros(n, "<u4").tobytes()
    else:
        head += _MODEL.pack(_KIND_TAGS[model.kind], model.lo, model.hi, model.cv, model.rho)
        head += model.nominal.astype("<u4").tobytes()
    payload = memoryview(np.ascontiguousarray(scenarios.demands, dtype="<u2")).cast("B")
    crc = zlib.crc32(payload, zlib.crc32(head))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload)
        fh.write(_CRC.pack(crc))
    return path


def load_scenarios(path) -> ScenarioSet:
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        fixed = fh.read(_HEADER.size)
        if len(fixed) < _HEADER.size:
            raise ScenarioFileError(f"{path}: truncated header")
        magic, version, m, n, q_max, seed = _HEADER.unpack(fixed)
        if magic != MAGIC:
            raise ScenarioFileError(f"{path}: bad magic {magic!r}, not a scenario file")
        if version != VERSION:
            raise ScenarioFileError(f"{path}: unsupported version {version}")
        if size != file_size(m, n):
            raise ScenarioFileError(f"{path}: truncated or oversized file "
                                    f"({size} bytes, expected {file_size(m, n)})")
        model_raw = fh.read(_MODEL.size)
        nominal_raw = fh.read(4 * n)
        payload = bytearray(2 * m * n)
        if fh.readinto(payload) != len(payload):
            raise ScenarioFileError(f"{path}: truncated payload")
        (crc,) = _CRC.unpack(fh.read(_CRC.size))

    running = zlib.crc32(fixed + model_raw + nominal_raw)
    if zlib.crc32(payload, running) != crc:
        raise ScenarioFileError(f"{path}: checksum mismatch")
    tag, lo, hi, cv, rho = _MODEL.unpack(model_raw)
    model = None
    if tag != 255:
        if tag >= len(KINDS):
            raise ScenarioFileError(f"{path}: unknown model tag {tag}")
        nominal = np.frombuffer(nominal_raw, dtype="<u4").astype(np.int64)
        model = DemandModel(KINDS[tag], nominal, seed, lo=lo, hi=hi, cv=cv, rho=rho)
    demands = np.frombuffer(payload, dtype="<u2").reshape(m, n)
    if q_max and demands.size and int(demands.max()) > q_max:
        raise ScenarioFileError(f"{path}: demand exceeds recorded q_max {q_max}")
    return ScenarioSet(demands, model, seed, {"source": str(path)})
