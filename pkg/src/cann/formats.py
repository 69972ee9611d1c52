"""File formats: descriptors, color maps, rankings, poses, and indexes.

Everything binary is little-endian and versioned; readers reject unknown
magics/versions instead of guessing.

Descriptor file layout (extension-agnostic)::

    magic   4 bytes  b"CANN"
    version u32      1
    dim     u32      descriptor dimension d
    count   u64      number of records n
    scalar  4 bytes  b"f32\\0" (only float32 descriptors exist today)
    body    n records of (color u32, d float32 values)

Index file layout::

    magic  8 bytes  b"CANNIDX\\0"
    version u32, algo u32 (1=RS 2=RG), dim u32, color_width u32,
    n u64, n_colors u64, c f64, R f64, r f64, L u32, rep u32,
    gamma f64, seed u64, n_levels u32
    then per level: radius f64, G u32, cells u64, starts u64, values u64,
    seeds u64[G], rotations f64[G*d*d], shifts f64[G*d],
    key_off i64[G+1], keys i64[cells], starts_off i64[G+1],
    starts i64[starts], values (u16/u32 colors for RG, i32 ids for RS)
    and for RS a trailing side table: point colors u32[n], vectors f32[n*d]

Color maps are text ("image_name<TAB>color_id", ids dense from 0),
rankings are text ("query<TAB>rank<TAB>image<TAB>score" with 6-decimal
scores and ranks starting at 1), poses are whitespace-separated
("name tx ty tz qw qx qy qz").
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlgorithmTagError,
    BadMagicError,
    FormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .grids import CellTable, GridIndex, PointGridIndex, RandomTransform, TransformBank
from .grids import cell_width as _cell_width
from .solvers import LadderIndex, RgConfig, RsIndex

DESCRIPTOR_MAGIC = b"CANN"
DESCRIPTOR_VERSION = 1
SCALAR_TAG = b"f32\x00"

INDEX_MAGIC = b"CANNIDX\x00"
INDEX_VERSION = 1
ALGO_RS = 1
ALGO_RG = 2

_DESC_HEADER = struct.Struct("<4sIIQ4s")
_INDEX_HEADER = struct.Struct("<8sIIIIQQdddIIdQI")
_LEVEL_HEADER = struct.Struct("<dIQQQ")


def _read_exact(f, nbytes: int, what: str) -> bytes:
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def _read_array(f, dtype, count: int, what: str) -> np.ndarray:
    dtype = np.dtype(dtype)
    raw = _read_exact(f, dtype.itemsize * count, what)
    return np.frombuffer(raw, dtype=dtype).copy()


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------


def write_descriptors(path, vectors: np.ndarray, colors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    colors = np.ascontiguousarray(colors, dtype="<u4")
    if vectors.ndim != 2:
        raise ValueError("vectors must be (n, d)")
    if colors.shape != (vectors.shape[0],):
        raise ValueError("need exactly one color per vector")
    n, d = vectors.shape
    record = np.dtype([("color", "<u4"), ("vec", "<f4", (d,))])
    body = np.empty(n, dtype=record)
    body["color"] = colors
    body["vec"] = vectors
    with open(path, "wb") as f:
        f.write(_DESC_HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, d, n, SCALAR_TAG))
        f.write(body.tobytes())


def read_descriptors(path) -> tuple[np.ndarray, np.ndarray]:
    """Vectors (n, d) float32 and colors (n,) uint32 from a descriptor file."""
    with open(path, "rb") as f:
        header = _read_exact(f, _DESC_HEADER.size, "descriptor header")
        magic, version, d, n, scalar = _DESC_HEADER.unpack(header)
        if magic != DESCRIPTOR_MAGIC:
            raise BadMagicError(f"not a descriptor file (magic {magic!r})")
        if version != DESCRIPTOR_VERSION:
            raise VersionMismatchError(f"unsupported descriptor version {version}")
        if scalar != SCALAR_TAG:
            raise FormatError(f"unsupported scalar type {scalar!r}", code="scalar_tag")
        record = np.dtype([("color", "<u4"), ("vec", "<f4", (d,))])
        body = _read_array(f, record, n, "descriptor records")
        if f.read(1):
            raise FormatError("trailing bytes after descriptor body", code="trailing")
    return body["vec"].reshape(n, d).copy(), body["color"].copy()


# ---------------------------------------------------------------------------
# color maps (image name <-> dense id)
# ---------------------------------------------------------------------------


def write_color_map(path, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, name in enumerate(names):
            if "\t" in name or "\n" in name:
                raise ValueError(f"image name may not contain tabs/newlines: {name!r}")
            f.write(f"{name}\t{i}\n")


def read_color_map(path) -> list[str]:
    """Image names indexed by color id; ids must be dense from 0."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"color map line {lineno}: expected name<TAB>id")
            try:
                pairs.append((parts[0], int(parts[1])))
            except ValueError:
                raise FormatError(f"color map line {lineno}: bad id {parts[1]!r}") from None
    pairs.sort(key=lambda p: p[1])
    names = [name for name, _ in pairs]
    ids = [i for _, i in pairs]
    if ids != list(range(len(ids))):
        raise FormatError("color ids must be dense from 0")
    if len(set(names)) != len(names):
        raise FormatError("image names must be unique")
    return names


# ---------------------------------------------------------------------------
# rankings
# ---------------------------------------------------------------------------


def write_rankings(path, rankings, names: list[str] | None = None) -> None:
    """One line per (query, rank, image, score), 6-decimal scores."""
    with open(path, "w", encoding="utf-8") as f:
        for ranking in rankings:
            for rank, (color, score) in enumerate(ranking.entries, start=1):
                image = names[color] if names is not None else str(color)
                f.write(f"{ranking.query_id}\t{rank}\t{image}\t{score:.6f}\n")


def read_rankings(path) -> dict[str, list[tuple[str, float]]]:
    """Per-query ordered (image, score) lists; validates ranks and order."""
    out: dict[str, list[tuple[str, float]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"ranking line {lineno}: expected 4 tab-separated fields")
            query, rank_s, image, score_s = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise FormatError(f"ranking line {lineno}: bad rank/score") from None
            entries = out.setdefault(query, [])
            if rank != len(entries) + 1:
                raise FormatError(f"ranking line {lineno}: ranks must be contiguous per query")
            if entries and score > entries[-1][1]:
                raise FormatError(f"ranking line {lineno}: scores must be non-increasing")
            entries.append((image, score))
    return out


# ---------------------------------------------------------------------------
# poses and global score tables
# ---------------------------------------------------------------------------


def write_poses(path, poses: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name, pose in poses.items():
            tx, ty, tz = pose.position
            qw, qx, qy, qz = pose.orientation
            f.write(f"{name} {tx!r} {ty!r} {tz!r} {qw!r} {qx!r} {qy!r} {qz!r}\n")


def read_poses(path) -> dict:
    from .evaluate import Pose

    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 8:
                raise FormatError(f"pose line {lineno}: expected name + 7 numbers")
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError:
                raise FormatError(f"pose line {lineno}: bad number") from None
            out[parts[0]] = Pose(
                position=np.array(vals[:3]), orientation=np.array(vals[3:])
            )
    return out


def read_global_scores(path) -> dict[str, dict[str, float]]:
    """Per-query image scores ("query<TAB>image<TAB>score" lines)."""
    out: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"global score line {lineno}: expected 3 fields")
            try:
                out.setdefault(parts[0], {})[parts[1]] = float(parts[2])
            except ValueError:
                raise FormatError(f"global score line {lineno}: bad score") from None
    return out


# ---------------------------------------------------------------------------
# index serialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _IndexMeta:
    algo: int
    dim: int
    color_width: int
    n: int
    n_colors: int
    c: float
    R: float
    r: float
    L: int
    rep: int
    gamma: float
    seed: int
    n_levels: int


def _write_level(f, bank: TransformBank, cells: CellTable, radius: float) -> None:
    f.write(
        _LEVEL_HEADER.pack(
            radius, bank.G, cells.n_cells, len(cells.starts), cells.n_entries
        )
    )
    f.write(np.ascontiguousarray(bank.seeds, dtype="<u8").tobytes())
    rot = np.stack([t.rotation for t in bank.transforms])
    shift = np.stack([t.shift for t in bank.transforms])
    f.write(np.ascontiguousarray(rot, dtype="<f8").tobytes())
    f.write(np.ascontiguousarray(shift, dtype="<f8").tobytes())
    f.write(np.ascontiguousarray(cells.key_off, dtype="<i8").tobytes())
    f.write(np.ascontiguousarray(cells.keys, dtype="<i8").tobytes())
    f.write(np.ascontiguousarray(cells.starts_off, dtype="<i8").tobytes())
    f.write(np.ascontiguousarray(cells.starts, dtype="<i8").tobytes())
    f.write(cells.values.astype(cells.values.dtype.newbyteorder("<")).tobytes())


def _read_level(f, dim: int, value_dtype) -> tuple[float, TransformBank, CellTable]:
    radius, G, n_cells, n_starts, n_values = _LEVEL_HEADER.unpack(
        _read_exact(f, _LEVEL_HEADER.size, "level header")
    )
    seeds = _read_array(f, "<u8", G, "level seeds")
    rot = _read_array(f, "<f8", G * dim * dim, "rotations").reshape(G, dim, dim)
    shift = _read_array(f, "<f8", G * dim, "shifts").reshape(G, dim)
    key_off = _read_array(f, "<i8", G + 1, "key offsets")
    keys = _read_array(f, "<i8", n_cells, "cell keys")
    starts_off = _read_array(f, "<i8", G + 1, "start offsets")
    starts = _read_array(f, "<i8", n_starts, "cell starts")
    values = _read_array(f, value_dtype, n_values, "cell values")
    transforms = [
        RandomTransform(rotation=rot[g], shift=shift[g], seed=int(seeds[g]))
        for g in range(G)
    ]
    cells = CellTable(
        keys=keys, key_off=key_off, starts=starts, starts_off=starts_off, values=values
    )
    return radius, transforms, cells


def save_index(path, index: RsIndex | LadderIndex) -> None:
    if isinstance(index, RsIndex):
        meta = _IndexMeta(
            algo=ALGO_RS,
            dim=index.dim,
            color_width=index.grid.color_width,
            n=index.grid.n_points,
            n_colors=index.n_colors,
            c=index.c,
            R=index.R,
            r=index.R,
            L=index.grid.n_grids,
            rep=1,
            gamma=1.0,
            seed=index.grid.base_seed,
            n_levels=1,
        )
    elif isinstance(index, LadderIndex):
        cfg = index.config
        meta = _IndexMeta(
            algo=ALGO_RG,
            dim=index.dim,
            color_width=cfg.color_width,
            n=index.n_points,
            n_colors=index.n_colors,
            c=cfg.c,
            R=cfg.R,
            r=cfg.r,
            L=cfg.L,
            rep=cfg.rep,
            gamma=cfg.gamma,
            seed=cfg.seed,
            n_levels=len(index.levels),
        )
    else:
        raise TypeError(f"cannot serialize {type(index).__name__}")
    with open(path, "wb") as f:
        f.write(
            _INDEX_HEADER.pack(
                INDEX_MAGIC,
                INDEX_VERSION,
                meta.algo,
                meta.dim,
                meta.color_width,
                meta.n,
                meta.n_colors,
                meta.c,
                meta.R,
                meta.r,
                meta.L,
                meta.rep,
                meta.gamma,
                meta.seed,
                meta.n_levels,
            )
        )
        if isinstance(index, RsIndex):
            _write_level(f, index.grid.bank, index.grid.cells, index.R)
            f.write(np.ascontiguousarray(index.grid.point_colors, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(index.grid.vectors, dtype="<f4").tobytes())
        else:
            for level in index.levels:
                _write_level(f, level.bank, level.cells, level.radius)


def _read_meta(f) -> _IndexMeta:
    header = _read_exact(f, _INDEX_HEADER.size, "index header")
    (magic, version, algo, dim, color_width, n, n_colors, c, R, r, L, rep, gamma,
     seed, n_levels) = _INDEX_HEADER.unpack(header)
    if magic != INDEX_MAGIC:
        raise BadMagicError(f"not an index file (magic {magic!r})")
    if version != INDEX_VERSION:
        raise VersionMismatchError(f"unsupported index version {version}")
    if algo not in (ALGO_RS, ALGO_RG):
        raise AlgorithmTagError(f"unknown algorithm tag {algo}")
    return _IndexMeta(algo, dim, color_width, n, n_colors, c, R, r, L, rep, gamma,
                      seed, n_levels)


def load_index(path, expect: str | None = None) -> RsIndex | LadderIndex:
    """Load an RS or RG index; ``expect`` ('rs'/'rg') pins the algorithm."""
    with open(path, "rb") as f:
        meta = _read_meta(f)
        if expect is not None:
            want = ALGO_RS if expect == "rs" else ALGO_RG
            if meta.algo != want:
                raise AlgorithmTagError(
                    f"index holds algorithm tag {meta.algo}, expected {expect}"
                )
        color_dtype = "<u2" if meta.color_width == 16 else "<u4"
        if meta.algo == ALGO_RS:
            radius, transforms, cells = _read_level(f, meta.dim, "<i4")
            point_colors = _read_array(f, "<u4", meta.n, "point colors")
            vectors = _read_array(f, "<f4", meta.n * meta.dim, "vectors").reshape(
                meta.n, meta.dim
            )
            if f.read(1):
                raise FormatError("trailing bytes after index body", code="trailing")
            width = _cell_width(radius, meta.c, meta.dim)
            grid = PointGridIndex(
                radius=radius,
                c=meta.c,
                dim=meta.dim,
                color_width=meta.color_width,
                vectors=vectors,
                point_colors=point_colors,
                bank=TransformBank(transforms, width),
                cells=cells,
                base_seed=meta.seed,
            )
            return RsIndex(grid=grid)
        levels = []
        for t in range(meta.n_levels):
            radius, transforms, cells = _read_level(f, meta.dim, color_dtype)
            width = _cell_width(radius, meta.c, meta.dim)
            levels.append(
                GridIndex(
                    radius=radius,
                    c=meta.c,
                    dim=meta.dim,
                    color_width=meta.color_width,
                    n_points=meta.n,
                    n_colors=meta.n_colors,
                    bank=TransformBank(transforms, width),
                    cells=cells,
                    level=t,
                )
            )
        if f.read(1):
            raise FormatError("trailing bytes after index body", code="trailing")
        config = RgConfig(
            r=meta.r,
            c=meta.c,
            R=meta.R,
            L=meta.L,
            gamma=meta.gamma,
            seed=meta.seed,
            color_width=meta.color_width,
        )
        return LadderIndex(
            config=config,
            dim=meta.dim,
            n_points=meta.n,
            n_colors=meta.n_colors,
            levels=levels,
        )
