"""Per-color (approximate) nearest-neighbor solvers over a colored database.

Three interchangeable engines, each answering "for one query feature, how
far is the nearest point of every image (color) that has one within
range":

* :class:`BruteForceIndex` -- exact linear scan, the ground-truth oracle.
* :class:`RsIndex` -- range search via a point-id random grid at radius R:
  enumerate candidates, filter by exact distance (default), keep per-color
  minima.
* :class:`LadderIndex` -- a geometric ladder of color-only grids at radii
  r*c^t up to R; the first (smallest) level at which a color appears gives
  its distance estimate, so no descriptor-space distances are computed.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .grids import (
    DEFAULT_GRIDS,
    GridIndex,
    PointGridIndex,
    build_colored_grid,
    build_point_grid,
)

EXACT = "exact"
BUCKET = "bucket-radius"

# Feature-chunk sizing for ladder queries: bound the (features x colors)
# bucket matrix near 64M int16 entries.
_BUCKET_ELEMENTS = 64_000_000


class ColoredPoint(NamedTuple):
    """One database element: a descriptor and the image id it came from."""

    descriptor: np.ndarray
    color: int


def split_points(points) -> tuple[np.ndarray, np.ndarray]:
    """(vectors, colors) arrays from a ColoredPoint sequence or a pair."""
    if isinstance(points, tuple) and len(points) == 2:
        return (
            np.ascontiguousarray(points[0], dtype=np.float32),
            np.ascontiguousarray(points[1], dtype=np.uint32),
        )
    vectors = np.stack([np.asarray(p.descriptor, dtype=np.float32) for p in points])
    colors = np.array([p.color for p in points], dtype=np.uint32)
    return vectors, colors


@dataclass(frozen=True)
class QueryOutcome:
    """Per-color distance estimates for one query feature.

    ``colors`` is ascending with at most one entry per color; ``kind``
    records whether distances are exact or the reporting level's bucket
    radius (in which case the true distance is at most c * distance).
    """

    colors: np.ndarray
    distances: np.ndarray
    kind: str

    def __len__(self) -> int:
        return len(self.colors)

    def as_dict(self) -> dict[int, float]:
        return {int(c): float(d) for c, d in zip(self.colors, self.distances)}


_EMPTY_DISTS = np.empty(0, dtype=np.float64)


def _empty_outcome(kind: str) -> QueryOutcome:
    return QueryOutcome(np.empty(0, dtype=np.uint32), _EMPTY_DISTS, kind)


@dataclass
class BruteForceIndex:
    """Exact per-color nearest neighbors by linear scan (the test oracle)."""

    vectors: np.ndarray = field(repr=False)
    colors: np.ndarray = field(repr=False)
    R: float

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.vectors) == 0:
            raise ValueError("database must be a non-empty (n, d) array")
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint32)
        self._x64 = self.vectors.astype(np.float64)
        self._colors64 = self.colors.astype(np.int64)
        self.n_colors = int(self.colors.max()) + 1
        self.dim = self.vectors.shape[1]

    def query(self, q: np.ndarray) -> QueryOutcome:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have dimension {self.dim}")
        diff = self._x64 - q
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        keep = dists <= self.R
        if not keep.any():
            return _empty_outcome(EXACT)
        cols = self._colors64[keep]
        ds = dists[keep]
        order = np.lexsort((ds, cols))
        cols = cols[order]
        ds = ds[order]
        first = np.empty(len(cols), dtype=bool)
        first[0] = True
        np.not_equal(cols[1:], cols[:-1], out=first[1:])
        return QueryOutcome(cols[first].astype(np.uint32), ds[first], EXACT)

    def multi_query(self, Q: np.ndarray, threads: int = 1) -> list[QueryOutcome]:
        return multi_query(self, Q, threads)


def brute_force_colored_nn(points, q: np.ndarray, R: float) -> QueryOutcome:
    """Exact minimum distance per color within R of q (ground truth)."""
    vectors, colors = split_points(points)
    return BruteForceIndex(vectors, colors, R).query(q)


@dataclass
class RsIndex:
    """Range-search solver: point grid at radius R plus exact filtering."""

    grid: PointGridIndex
    exact_filter: bool = True
    _local: threading.local = field(default_factory=threading.local, repr=False)

    @property
    def R(self) -> float:
        return self.grid.radius

    @property
    def c(self) -> float:
        return self.grid.c

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n_colors(self) -> int:
        return self.grid.n_colors

    def _ensure_scratch(self):
        # one scratch per thread: multi_query may fan query_batch out
        scratch = getattr(self._local, "scratch", None)
        if scratch is None:
            scratch = _kernels._RsScratch(self.grid.n_points, self.n_colors)
            self._local.scratch = scratch
        return scratch

    def query(self, q: np.ndarray, exact: bool | None = None) -> QueryOutcome:
        return self.query_batch(np.asarray(q, dtype=np.float64).reshape(1, -1), exact)[0]

    def query_batch(self, Q: np.ndarray, exact: bool | None = None) -> list[QueryOutcome]:
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise ValueError(f"queries must be (m, {self.dim})")
        exact = self.exact_filter if exact is None else exact
        kern = _kernels.get_backend()
        cells = self.grid.cells
        qkeys = self.grid.bank.compute_keys(Q)
        scratch = self._ensure_scratch()
        kind = EXACT if exact else BUCKET
        out = []
        for i in range(Q.shape[0]):
            cols, ds = kern.rs_query_one(
                cells.keys,
                cells.key_off,
                cells.starts,
                cells.starts_off,
                cells.values,
                self.grid.vectors,
                self.grid.point_colors,
                Q[i],
                qkeys[:, i],
                self.R,
                exact,
                scratch,
            )
            if not exact:
                ds = np.full(len(cols), self.R, dtype=np.float64)
            out.append(QueryOutcome(cols.astype(np.uint32), ds, kind))
        return out

    def multi_query(self, Q: np.ndarray, threads: int = 1) -> list[QueryOutcome]:
        return multi_query(self, Q, threads)


def build_cann_rs(
    points,
    R: float,
    c: float = 1.1,
    L: int = DEFAULT_GRIDS,
    seed: int = 0,
    color_width: int = 16,
    exact_filter: bool = True,
) -> RsIndex:
    vectors, colors = split_points(points)
    grid = build_point_grid(vectors, colors, R, c, L, seed, color_width)
    return RsIndex(grid=grid, exact_filter=exact_filter)


def query_cann_rs(index: RsIndex, q: np.ndarray) -> QueryOutcome:
    return index.query(q)


@dataclass(frozen=True)
class RgConfig:
    """Ladder parameters: radii r*c^t up to R, L grids per level.

    ``gamma`` is the target failure probability; the whole level is
    replicated ``rep = ceil(ln(1/gamma))`` times with fresh seeds. The
    default gamma of 1/e keeps rep at 1.
    """

    r: float
    c: float
    R: float
    L: int = DEFAULT_GRIDS
    gamma: float = 1.0 / math.e
    seed: int = 0
    color_width: int = 16

    def __post_init__(self):
        if not (0 < self.r <= self.R):
            raise ValueError("ladder needs 0 < r <= R")
        if not self.c > 1:
            raise ValueError("approximation factor c must exceed 1")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1)")
        if self.L < 1:
            raise ValueError("need at least one grid per level")

    @property
    def rep(self) -> int:
        return max(1, math.ceil(math.log(1.0 / self.gamma)))

    def level_radii(self) -> np.ndarray:
        """Geometric radii r*c^t; the last is the first value >= R."""
        if self.r == self.R:
            return np.array([self.R], dtype=np.float64)
        steps = math.ceil(math.log(self.R / self.r) / math.log(self.c) - 1e-9)
        return self.r * self.c ** np.arange(steps + 1, dtype=np.float64)


@dataclass
class LadderIndex:
    """CANN-RG: color grids at geometrically increasing radii.

    Querying walks levels small to large; the first level whose cells
    contain a color assigns that color the level radius as its distance
    estimate. The exact distance of a reported color is at most c times
    the assigned radius; distances never get computed in descriptor space.
    """

    config: RgConfig
    dim: int
    n_points: int
    n_colors: int
    levels: list[GridIndex]

    @property
    def radii(self) -> np.ndarray:
        return np.array([lvl.radius for lvl in self.levels], dtype=np.float64)

    def query(self, q: np.ndarray) -> QueryOutcome:
        return self.query_batch(np.asarray(q, dtype=np.float64).reshape(1, -1))[0]

    def query_batch(self, Q: np.ndarray) -> list[QueryOutcome]:
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise ValueError(f"queries must be (m, {self.dim})")
        kern = _kernels.get_backend()
        F = Q.shape[0]
        chunk = max(1, _BUCKET_ELEMENTS // max(self.n_colors, 1))
        radii = self.radii
        out: list[QueryOutcome] = []
        for lo in range(0, F, chunk):
            hi = min(lo + chunk, F)
            block = Q[lo:hi]
            bucket = np.full((hi - lo, self.n_colors), -1, dtype=np.int16)
            for t, level in enumerate(self.levels):
                qkeys = level.bank.compute_keys(block)
                kern.ladder_level_walk(
                    level.cells.keys,
                    level.cells.key_off,
                    level.cells.starts,
                    level.cells.starts_off,
                    level.cells.values,
                    qkeys,
                    bucket,
                    np.int16(t),
                )
            for i in range(hi - lo):
                cols = np.flatnonzero(bucket[i] >= 0)
                if len(cols) == 0:
                    out.append(_empty_outcome(BUCKET))
                    continue
                ds = radii[bucket[i, cols]]
                out.append(QueryOutcome(cols.astype(np.uint32), ds, BUCKET))
        return out

    def multi_query(self, Q: np.ndarray, threads: int = 1) -> list[QueryOutcome]:
        return multi_query(self, Q, threads)


def build_cann_rg(points, config: RgConfig) -> LadderIndex:
    """Build one color grid per ladder level (L*rep grids each)."""
    vectors, colors = split_points(points)
    levels = []
    for t, radius in enumerate(config.level_radii()):
        levels.append(
            build_colored_grid(
                vectors,
                colors,
                float(radius),
                config.c,
                config.L * config.rep,
                config.seed,
                config.color_width,
                level=t,
            )
        )
    return LadderIndex(
        config=config,
        dim=vectors.shape[1],
        n_points=vectors.shape[0],
        n_colors=int(colors.max()) + 1,
        levels=levels,
    )


def query_cann_rg(index: LadderIndex, q: np.ndarray) -> QueryOutcome:
    return index.query(q)


def multi_query(index, Q: np.ndarray, threads: int = 1) -> list[QueryOutcome]:
    """Apply the solver to each query feature, preserving order.

    ``threads`` only fans the work out; results are identical for any
    worker count.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    if Q.ndim != 2:
        raise ValueError("queries must be a (m, d) array")
    if Q.shape[0] == 0:
        return []
    if hasattr(index, "query_batch"):
        if threads <= 1 or Q.shape[0] < 2 * threads:
            return index.query_batch(Q)
        chunks = np.array_split(np.arange(Q.shape[0]), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: index.query_batch(Q[idx]), chunks))
        return [o for part in parts for o in part]
    if threads <= 1:
        return [index.query(q) for q in Q]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(index.query, Q))
