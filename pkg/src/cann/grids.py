"""Randomly rotated and shifted grid hashing over d-dimensional points.

A grid level at radius ``l`` uses cells of width ``w = l*c/sqrt(d)``, so
two points hashed to the same cell under the same transform are at most
``w*sqrt(d) = c*l`` apart (the cell diameter). Building ``L`` independent
random grids per level trades storage for the probability that a true
neighbor shares at least one cell with the query.

Two index flavors share the machinery: :class:`GridIndex` keeps only the
distinct colors per cell (no coordinates), :class:`PointGridIndex` keeps
point ids plus a side table of coordinates for exact filtering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DEFAULT_GRIDS = 16
DEFAULT_INTRINSIC_DIM = 8

# Rows per matmul chunk are sized so the transformed-coordinate buffer
# stays near 64 MB regardless of how many grids a level stacks.
_CHUNK_ELEMENTS = 8_000_000

_SEED_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.uint64) -> np.uint64:
    x = np.uint64(x)
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def derive_seed(base_seed: int, *indices: int) -> int:
    """Deterministic 64-bit child seed from a base seed and index path."""
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(base_seed & 0xFFFFFFFFFFFFFFFF))
        for i in indices:
            h = _splitmix64(h + _SEED_GAMMA * np.uint64(i + 1))
    return int(h)


def grids_for_dimension(d_eff: int = DEFAULT_INTRINSIC_DIM, c: float = 1.1) -> int:
    """Grid count e^(d_eff/c) suggested by the capture analysis.

    ``d_eff`` is the intrinsic dimension of the data, which in practice is
    far below the ambient one; the ambient worst case is astronomically
    large, so callers normally keep the configurable default of
    ``DEFAULT_GRIDS`` grids and treat this as an upper-bound reference.
    """
    return int(math.ceil(math.exp(d_eff / c)))


def cell_width(radius: float, c: float, d: int) -> float:
    return radius * c / math.sqrt(d)


@dataclass(frozen=True)
class RandomTransform:
    """One random rotation + per-coordinate shift in [0, cell_width)."""

    rotation: np.ndarray
    shift: np.ndarray
    seed: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.rotation.T + self.shift


def make_transform(seed: int, d: int, cell_width: float) -> RandomTransform:
    """Deterministic random transform for one grid.

    The rotation is the orthogonal factor of a Gaussian matrix (sign-fixed
    so the distribution is uniform over the orthogonal group), the shift
    uniform per coordinate in [0, cell_width).
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not cell_width > 0:
        raise ValueError("cell_width must be positive")
    rng = np.random.default_rng(np.uint64(seed))
    gauss = rng.standard_normal((d, d))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    shift = rng.uniform(0.0, cell_width, d)
    return RandomTransform(rotation=q, shift=shift, seed=int(seed))


def cell_key(transform: RandomTransform, cell_width: float, x: np.ndarray) -> int:
    """64-bit key of the grid cell that x falls into under the transform."""
    y = transform.apply(x) / cell_width
    return _kernels.mix_coords(np.floor(y).astype(np.int64))


class TransformBank:
    """Stacked transforms of one grid level, pre-scaled for key hashing.

    Keeps the G rotations/shifts both individually (for the public
    per-transform API) and as one (d, G*d) matrix so that keys for a batch
    of points take a single BLAS call per chunk.
    """

    def __init__(self, transforms: list[RandomTransform], cell_width: float):
        self.transforms = transforms
        self.cell_width = float(cell_width)
        G = len(transforms)
        d = transforms[0].rotation.shape[0]
        self.G = G
        self.d = d
        mat = np.empty((d, G * d), dtype=np.float64)
        shift = np.empty(G * d, dtype=np.float64)
        for g, t in enumerate(transforms):
            mat[:, g * d : (g + 1) * d] = t.rotation.T / self.cell_width
            shift[g * d : (g + 1) * d] = t.shift / self.cell_width
        self._mat = mat
        self._shift = shift
        self.seeds = np.array([t.seed for t in transforms], dtype=np.uint64)

    @classmethod
    def create(cls, base_seed: int, level: int, G: int, d: int, width: float):
        transforms = [
            make_transform(derive_seed(base_seed, level, g), d, width)
            for g in range(G)
        ]
        return cls(transforms, width)

    def compute_keys(self, X: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Cell keys for every (grid, point); returns int64 (G, n)."""
        X = np.ascontiguousarray(X)
        n = X.shape[0]
        if out is None:
            out = np.empty((self.G, n), dtype=np.int64)
        kern = _kernels.get_backend()
        chunk = max(1, _CHUNK_ELEMENTS // (self.G * self.d))
        buf = np.empty((min(chunk, n), self.G * self.d), dtype=np.float64)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            rows = hi - lo
            xc = X[lo:hi].astype(np.float64, copy=False)
            yb = buf[:rows]
            np.matmul(xc, self._mat, out=yb)
            yb += self._shift
            kern.floor_keys(yb, self.G, self.d, out[:, lo:hi])
        return out


@dataclass
class CellTable:
    """CSR cell storage for a bank of G grids.

    Grid g's cells are ``keys[key_off[g]:key_off[g+1]]`` (ascending); cell
    i of grid g holds ``values[starts[starts_off[g]+i] : ...+i+1]``. Starts
    are absolute into ``values``; values are ascending within a cell.
    """

    keys: np.ndarray
    key_off: np.ndarray
    starts: np.ndarray
    starts_off: np.ndarray
    values: np.ndarray

    @classmethod
    def build(cls, all_keys: np.ndarray, vals: np.ndarray) -> "CellTable":
        kern = _kernels.get_backend()
        G = all_keys.shape[0]
        per_grid = []
        for g in range(G):
            pk, pv = kern.dedupe_pairs(all_keys[g], vals)
            per_grid.append(_kernels.canonical_csr(pk, pv))
        key_off = np.zeros(G + 1, dtype=np.int64)
        starts_off = np.zeros(G + 1, dtype=np.int64)
        val_base = 0
        keys_parts, starts_parts, val_parts = [], [], []
        for g, (ukeys, starts, v) in enumerate(per_grid):
            key_off[g + 1] = key_off[g] + len(ukeys)
            starts_off[g + 1] = starts_off[g] + len(starts)
            keys_parts.append(ukeys)
            starts_parts.append(starts + val_base)
            val_parts.append(v)
            val_base += len(v)
        return cls(
            keys=np.concatenate(keys_parts) if keys_parts else np.empty(0, np.int64),
            key_off=key_off,
            starts=np.concatenate(starts_parts),
            starts_off=starts_off,
            values=np.concatenate(val_parts) if val_parts else vals[:0],
        )

    @property
    def n_cells(self) -> int:
        return len(self.keys)

    @property
    def n_entries(self) -> int:
        return len(self.values)

    def cell_values(self, g: int, key: int):
        """Values stored in grid g's cell with the given key (may be empty)."""
        kg = self.keys[self.key_off[g] : self.key_off[g + 1]]
        pos = int(np.searchsorted(kg, key))
        if pos >= len(kg) or kg[pos] != key:
            return self.values[:0]
        row = int(self.starts_off[g]) + pos
        return self.values[self.starts[row] : self.starts[row + 1]]


def _validate_points(vectors: np.ndarray, colors: np.ndarray, color_width: int):
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    colors = np.ascontiguousarray(colors, dtype=np.uint32)
    if colors.shape != (vectors.shape[0],):
        raise ValueError("colors must be one id per point")
    limit = (1 << color_width) - 1
    if colors.max(initial=0) > limit:
        raise ValueError(
            f"color {int(colors.max())} exceeds the configured "
            f"{color_width}-bit color width"
        )
    return vectors, colors


@dataclass
class GridIndex:
    """Color-only random grid structure for one radius level.

    Stores, per cell, the distinct colors of the points that fell into it;
    point coordinates are not kept. Every color reported for a query has a
    point within ``c * radius`` of it (cell diameter); a color with a
    point within ``radius`` is reported with a probability that grows with
    the number of grids.
    """

    radius: float
    c: float
    dim: int
    color_width: int
    n_points: int
    n_colors: int
    bank: TransformBank
    cells: CellTable
    level: int = 0

    @property
    def cell_width(self) -> float:
        return cell_width(self.radius, self.c, self.dim)

    @property
    def n_grids(self) -> int:
        return self.bank.G

    @property
    def transforms(self) -> list[RandomTransform]:
        return self.bank.transforms

    def query_colors(self, q: np.ndarray) -> np.ndarray:
        """Distinct colors sharing a cell with q in any grid, ascending."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have dimension {self.dim}")
        qkeys = self.bank.compute_keys(q.reshape(1, -1))
        bucket = np.full((1, self.n_colors), -1, dtype=np.int16)
        _kernels.get_backend().ladder_level_walk(
            self.cells.keys,
            self.cells.key_off,
            self.cells.starts,
            self.cells.starts_off,
            self.cells.values,
            qkeys,
            bucket,
            np.int16(0),
        )
        return np.flatnonzero(bucket[0] >= 0).astype(np.uint32)


def build_colored_grid(
    vectors: np.ndarray,
    colors: np.ndarray,
    radius: float,
    c: float = 1.1,
    L: int = DEFAULT_GRIDS,
    base_seed: int = 0,
    color_width: int = 16,
    level: int = 0,
) -> GridIndex:
    """Index the distinct color of every point per (grid, cell)."""
    if not c > 1:
        raise ValueError("approximation factor c must exceed 1")
    if L < 1:
        raise ValueError("need at least one grid")
    if not radius > 0:
        raise ValueError("radius must be positive")
    vectors, colors = _validate_points(vectors, colors, color_width)
    n, d = vectors.shape
    width = cell_width(radius, c, d)
    bank = TransformBank.create(base_seed, level, L, d, width)
    stored = colors.astype(np.uint16 if color_width == 16 else np.uint32)
    all_keys = bank.compute_keys(vectors)
    cells = CellTable.build(all_keys, stored)
    return GridIndex(
        radius=float(radius),
        c=float(c),
        dim=d,
        color_width=color_width,
        n_points=n,
        n_colors=int(colors.max()) + 1,
        bank=bank,
        cells=cells,
        level=level,
    )


@dataclass
class PointGridIndex:
    """Random grid structure whose cells hold point ids.

    Candidate generation for exhaustive range search: the cells give a
    superset of the points within ``radius`` (everything sharing a cell is
    within ``c * radius``); exact filtering against the retained
    coordinates is the caller's job.
    """

    radius: float
    c: float
    dim: int
    color_width: int
    vectors: np.ndarray = field(repr=False)
    point_colors: np.ndarray = field(repr=False)
    bank: TransformBank = field(repr=False)
    cells: CellTable = field(repr=False)
    base_seed: int = 0

    @property
    def n_points(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_colors(self) -> int:
        return int(self.point_colors.max()) + 1 if len(self.point_colors) else 0

    @property
    def cell_width(self) -> float:
        return cell_width(self.radius, self.c, self.dim)

    @property
    def n_grids(self) -> int:
        return self.bank.G

    def query_candidates(self, q: np.ndarray) -> np.ndarray:
        """De-duplicated point ids sharing a cell with q, ascending."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have dimension {self.dim}")
        qkeys = self.bank.compute_keys(q.reshape(1, -1))[:, 0]
        parts = [
            self.cells.cell_values(g, int(qkeys[g])) for g in range(self.bank.G)
        ]
        ids = np.concatenate(parts) if parts else np.empty(0, np.int32)
        return np.unique(ids)


def build_point_grid(
    vectors: np.ndarray,
    colors: np.ndarray,
    radius: float,
    c: float = 1.1,
    L: int = DEFAULT_GRIDS,
    base_seed: int = 0,
    color_width: int = 16,
) -> PointGridIndex:
    """Index point ids per (grid, cell), keeping coordinates on the side."""
    if not c > 1:
        raise ValueError("approximation factor c must exceed 1")
    if L < 1:
        raise ValueError("need at least one grid")
    if not radius > 0:
        raise ValueError("radius must be positive")
    vectors, colors = _validate_points(vectors, colors, color_width)
    n, d = vectors.shape
    width = cell_width(radius, c, d)
    bank = TransformBank.create(base_seed, 0, L, d, width)
    ids = np.arange(n, dtype=np.int32)
    all_keys = bank.compute_keys(vectors)
    cells = CellTable.build(all_keys, ids)
    return PointGridIndex(
        radius=float(radius),
        c=float(c),
        dim=d,
        color_width=color_width,
        vectors=vectors,
        point_colors=colors,
        bank=bank,
        cells=cells,
        base_seed=int(base_seed),
    )
