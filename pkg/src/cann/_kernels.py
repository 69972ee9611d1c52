"""Hot inner loops, in two interchangeable backends.

The numba backend JIT-compiles the irregular loops (hash de-duplication,
cell lookup walks, candidate filtering); the numpy backend expresses the
same operations with vectorized array code. Select with the environment
variable ``CANN_BACKEND`` (``numba`` or ``numpy``; default picks numba
when importable) or programmatically via :func:`set_backend` /
:func:`use_backend`.

Both backends consume identical integer cell keys (the floating-point
rotation work is shared BLAS code in :mod:`cann.grids`) and produce
identical index structures; ``benchmarks/backend_bench.py`` compares
their speed.
"""

from __future__ import annotations

import contextlib
import os
import warnings

import numpy as np

# Fixed multiply-xor mixing constants for cell keys (splitmix64-style
# avalanche per coordinate, chained with a running multiplier). Changing
# any of these invalidates serialized indexes.
KEY_INIT = np.uint64(0x8445D61A4E774912)
KEY_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
KEY_C1 = np.uint64(0xBF58476D1CE4E5B9)
KEY_C2 = np.uint64(0x94D049BB133111EB)
KEY_CHAIN = np.uint64(0xFF51AFD7ED558CCD)

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S29 = np.uint64(29)


def _next_pow2(x: int) -> int:
    return 1 << max(int(x) - 1, 1).bit_length()


def mix_coords(coords) -> int:
    """Key of one integer coordinate vector (reference for tests/docs).

    Each coordinate is avalanched on its own before entering the chain;
    plain per-step multiply-xor is not enough, small signed coordinates
    can cancel across dimensions.
    """
    h = KEY_INIT
    with np.errstate(over="ignore"):
        for z in np.asarray(coords, dtype=np.int64):
            x = np.uint64(z.astype(np.uint64)) + KEY_GOLDEN
            x = (x ^ (x >> _S30)) * KEY_C1
            x = (x ^ (x >> _S27)) * KEY_C2
            x ^= x >> _S31
            h = (h * KEY_CHAIN) ^ x
        h ^= h >> _S29
    return int(h.astype(np.int64))


def gather_ranges(starts: np.ndarray, ends: np.ndarray):
    """Flat indices covering [starts[i], ends[i]) for every i, plus lengths."""
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), lens
    base = np.repeat(starts, lens)
    offset = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(lens) - lens, lens)
    return base + offset, lens


def canonical_csr(keys: np.ndarray, vals: np.ndarray):
    """Canonical grouped form of (cell key, value) pairs.

    Returns (unique_keys ascending, starts of length m+1, values) where
    values are distinct and ascending within each cell. Both backends
    funnel through this, so index structures are bit-identical no matter
    which backend produced the raw pairs.
    """
    if len(keys) == 0:
        return (
            np.empty(0, dtype=np.int64),
            np.zeros(1, dtype=np.int64),
            np.empty(0, dtype=vals.dtype),
        )
    order = np.lexsort((vals, keys))
    k = keys[order]
    v = vals[order]
    keep = np.empty(len(k), dtype=bool)
    keep[0] = True
    np.logical_or(k[1:] != k[:-1], v[1:] != v[:-1], out=keep[1:])
    k = k[keep]
    v = v[keep]
    head = np.empty(len(k), dtype=bool)
    head[0] = True
    np.not_equal(k[1:], k[:-1], out=head[1:])
    ukeys = k[head]
    starts = np.flatnonzero(head).astype(np.int64)
    starts = np.append(starts, np.int64(len(k)))
    return ukeys, starts, v


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _floor_keys_np(Y: np.ndarray, G: int, d: int, out: np.ndarray) -> None:
    """Cell keys from transformed/scaled coordinates.

    Y has shape (m, G*d): for each of G grids, d already-scaled coordinates
    per point. out has shape (G, m), int64.
    """
    Ci = np.floor(Y).astype(np.int64)
    m = Y.shape[0]
    h = np.empty(m, dtype=np.uint64)
    x = np.empty(m, dtype=np.uint64)
    for g in range(G):
        h[:] = KEY_INIT
        block = Ci[:, g * d : (g + 1) * d]
        for j in range(d):
            x[:] = block[:, j].astype(np.uint64)
            x += KEY_GOLDEN
            x ^= x >> _S30
            x *= KEY_C1
            x ^= x >> _S27
            x *= KEY_C2
            x ^= x >> _S31
            h *= KEY_CHAIN
            h ^= x
        h ^= h >> _S29
        out[g] = h.view(np.int64)


def _dedupe_pairs_np(keys: np.ndarray, vals: np.ndarray):
    # canonical_csr de-duplicates while sorting; nothing to pre-shrink here.
    return keys, vals


def _ladder_level_walk_np(
    keys_flat, key_off, starts_flat, starts_off, colors_flat, qkeys, bucket, level
) -> None:
    """Stamp colors first observed at this level into the bucket matrix.

    bucket is (n_features, n_colors) int16, -1 where a color is unseen;
    entries are only ever written once (levels are walked in ascending
    radius order by the caller).
    """
    G, F = qkeys.shape
    for g in range(G):
        kg = keys_flat[key_off[g] : key_off[g + 1]]
        if len(kg) == 0:
            continue
        qk = qkeys[g]
        pos = np.searchsorted(kg, qk)
        inside = pos < len(kg)
        found = inside.copy()
        found[inside] = kg[pos[inside]] == qk[inside]
        feats = np.flatnonzero(found)
        if len(feats) == 0:
            continue
        srow = starts_off[g] + pos[feats]
        flat_idx, lens = gather_ranges(starts_flat[srow], starts_flat[srow + 1])
        if len(flat_idx) == 0:
            continue
        cols = colors_flat[flat_idx].astype(np.int64)
        fs = np.repeat(feats, lens)
        new = bucket[fs, cols] < 0
        bucket[fs[new], cols[new]] = level


def _lookup_cells_np(keys_flat, key_off, qkeys):
    """Per (grid, feature) cell hit: row index into the starts table, or -1."""
    G, F = qkeys.shape
    rows = np.full((G, F), -1, dtype=np.int64)
    for g in range(G):
        kg = keys_flat[key_off[g] : key_off[g + 1]]
        if len(kg) == 0:
            continue
        pos = np.searchsorted(kg, qkeys[g])
        inside = pos < len(kg)
        ok = inside.copy()
        ok[inside] = kg[pos[inside]] == qkeys[g][inside]
        rows[g, ok] = pos[ok]
    return rows


def _rs_query_one_np(
    keys_flat,
    key_off,
    starts_flat,
    starts_off,
    ids_flat,
    vectors,
    point_colors,
    q,
    qkeys,
    radius,
    exact,
    scratch=None,
):
    """Candidates of one query feature -> per-color minimum exact distance.

    With exact=False the distance step is skipped entirely and only the
    distinct candidate colors are returned (dists comes back empty).
    """
    G = qkeys.shape[0]
    rows = _lookup_cells_np(keys_flat, key_off, qkeys.reshape(G, 1))[:, 0]
    hit = np.flatnonzero(rows >= 0)
    if len(hit) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    srow = starts_off[hit] + rows[hit]
    flat_idx, _ = gather_ranges(starts_flat[srow], starts_flat[srow + 1])
    ids = np.unique(ids_flat[flat_idx])
    if not exact:
        cols = np.unique(point_colors[ids].astype(np.int64))
        return cols, np.empty(0, dtype=np.float64)
    diff = vectors[ids].astype(np.float64) - q
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    keep = dists <= radius
    if not keep.any():
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    cols = point_colors[ids[keep]].astype(np.int64)
    ds = dists[keep]
    order = np.lexsort((ds, cols))
    cols = cols[order]
    ds = ds[order]
    first = np.empty(len(cols), dtype=bool)
    first[0] = True
    np.not_equal(cols[1:], cols[:-1], out=first[1:])
    return cols[first], ds[first]


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_NUMBA_CACHE: dict[str, object] = {}


def _build_numba_namespace():
    import numba as nb

    KEY_INIT_C = np.uint64(KEY_INIT)
    KEY_GOLDEN_C = np.uint64(KEY_GOLDEN)
    KEY_C1_C = np.uint64(KEY_C1)
    KEY_C2_C = np.uint64(KEY_C2)
    KEY_CHAIN_C = np.uint64(KEY_CHAIN)

    @nb.njit(cache=True, nogil=True, parallel=True)
    def floor_keys(Y, G, d, out):
        m = Y.shape[0]
        for i in nb.prange(m):
            for g in range(G):
                h = KEY_INIT_C
                base = g * d
                for j in range(d):
                    x = np.uint64(np.int64(np.floor(Y[i, base + j]))) + KEY_GOLDEN_C
                    x = (x ^ (x >> np.uint64(30))) * KEY_C1_C
                    x = (x ^ (x >> np.uint64(27))) * KEY_C2_C
                    x ^= x >> np.uint64(31)
                    h = (h * KEY_CHAIN_C) ^ x
                h ^= h >> np.uint64(29)
                out[g, i] = np.int64(h)

    @nb.njit(cache=True, nogil=True)
    def dedupe_pairs(keys, vals, cap):
        mask = np.uint64(cap - 1)
        table_k = np.empty(cap, np.int64)
        table_v = np.empty(cap, vals.dtype)
        used = np.zeros(cap, np.uint8)
        out_k = np.empty(keys.shape[0], np.int64)
        out_v = np.empty(keys.shape[0], vals.dtype)
        m = 0
        for i in range(keys.shape[0]):
            k = keys[i]
            v = vals[i]
            slot = np.int64(
                ((np.uint64(k) * KEY_GOLDEN_C) ^ (np.uint64(v) * KEY_C2_C)) & mask
            )
            while True:
                if used[slot] == 0:
                    used[slot] = 1
                    table_k[slot] = k
                    table_v[slot] = v
                    out_k[m] = k
                    out_v[m] = v
                    m += 1
                    break
                if table_k[slot] == k and table_v[slot] == v:
                    break
                slot = np.int64((np.uint64(slot) + np.uint64(1)) & mask)
        return out_k[:m], out_v[:m]

    @nb.njit(cache=True, nogil=True, parallel=True)
    def ladder_level_walk(
        keys_flat, key_off, starts_flat, starts_off, colors_flat, qkeys, bucket, level
    ):
        G, F = qkeys.shape
        for g in nb.prange(G):
            base = key_off[g]
            hi = key_off[g + 1]
            if hi == base:
                continue
            order = np.argsort(qkeys[g])
            carry = base
            for oi in range(F):
                f = order[oi]
                k = qkeys[g, f]
                lo = carry
                up = hi
                while lo < up:
                    mid = (lo + up) >> 1
                    if keys_flat[mid] < k:
                        lo = mid + 1
                    else:
                        up = mid
                carry = lo
                if lo < hi and keys_flat[lo] == k:
                    srow = starts_off[g] + (lo - base)
                    for j in range(starts_flat[srow], starts_flat[srow + 1]):
                        col = colors_flat[j]
                        if bucket[f, col] < 0:
                            bucket[f, col] = level

    @nb.njit(cache=True, nogil=True)
    def rs_query_one(
        keys_flat,
        key_off,
        starts_flat,
        starts_off,
        ids_flat,
        vectors,
        point_colors,
        q,
        qkeys,
        radius,
        exact,
        seen,
        color_slot,
        color_best,
        found_cols,
        tag,
    ):
        G = qkeys.shape[0]
        d = vectors.shape[1]
        n_found = 0
        for g in range(G):
            base = key_off[g]
            hi = key_off[g + 1]
            if hi == base:
                continue
            k = qkeys[g]
            lo = base
            up = hi
            while lo < up:
                mid = (lo + up) >> 1
                if keys_flat[mid] < k:
                    lo = mid + 1
                else:
                    up = mid
            if lo >= hi or keys_flat[lo] != k:
                continue
            srow = starts_off[g] + (lo - base)
            for j in range(starts_flat[srow], starts_flat[srow + 1]):
                pid = ids_flat[j]
                if seen[pid] == tag:
                    continue
                seen[pid] = tag
                col = np.int64(point_colors[pid])
                if exact:
                    acc = 0.0
                    for t in range(d):
                        delta = q[t] - np.float64(vectors[pid, t])
                        acc += delta * delta
                    dist = np.sqrt(acc)
                    if dist > radius:
                        continue
                    if color_slot[col] != tag:
                        color_slot[col] = tag
                        color_best[col] = dist
                        found_cols[n_found] = col
                        n_found += 1
                    elif dist < color_best[col]:
                        color_best[col] = dist
                else:
                    if color_slot[col] != tag:
                        color_slot[col] = tag
                        found_cols[n_found] = col
                        n_found += 1
        cols = np.sort(found_cols[:n_found])
        if not exact:
            return cols, np.empty(0, np.float64)
        dists = np.empty(n_found, np.float64)
        for i in range(n_found):
            dists[i] = color_best[cols[i]]
        return cols, dists

    def rs_query_one_bound(
        keys_flat,
        key_off,
        starts_flat,
        starts_off,
        ids_flat,
        vectors,
        point_colors,
        q,
        qkeys,
        radius,
        exact,
        scratch,
    ):
        tag = scratch.next_tag()
        return rs_query_one(
            keys_flat,
            key_off,
            starts_flat,
            starts_off,
            ids_flat,
            vectors,
            point_colors,
            q,
            qkeys,
            radius,
            exact,
            scratch.seen,
            scratch.color_slot,
            scratch.color_best,
            scratch.found,
            np.int32(tag),
        )

    return _Backend(
        name="numba",
        floor_keys=floor_keys,
        dedupe_pairs=lambda keys, vals: dedupe_pairs(
            keys, vals, _next_pow2(2 * max(len(keys), 2))
        ),
        ladder_level_walk=ladder_level_walk,
        rs_query_one=rs_query_one_bound,
    )


class _Backend:
    def __init__(self, name, floor_keys, dedupe_pairs, ladder_level_walk, rs_query_one):
        self.name = name
        self.floor_keys = floor_keys
        self.dedupe_pairs = dedupe_pairs
        self.ladder_level_walk = ladder_level_walk
        self.rs_query_one = rs_query_one


class _RsScratch:
    """Reusable stamp/best buffers for the numba candidate filter."""

    def __init__(self, n_points: int, n_colors: int):
        self.seen = np.zeros(n_points, dtype=np.int32)
        self.color_slot = np.zeros(n_colors, dtype=np.int32)
        self.color_best = np.zeros(n_colors, dtype=np.float64)
        self.found = np.zeros(n_colors, dtype=np.int64)
        self.tag = 0

    def next_tag(self) -> int:
        self.tag += 1
        if self.tag == np.iinfo(np.int32).max:
            self.seen[:] = 0
            self.color_slot[:] = 0
            self.tag = 1
        return self.tag


_NUMPY_BACKEND = _Backend(
    name="numpy",
    floor_keys=_floor_keys_np,
    dedupe_pairs=_dedupe_pairs_np,
    ladder_level_walk=_ladder_level_walk_np,
    rs_query_one=_rs_query_one_np,
)

_active: _Backend | None = None


def _numba_backend() -> _Backend:
    ns = _NUMBA_CACHE.get("ns")
    if ns is None:
        ns = _build_numba_namespace()
        _NUMBA_CACHE["ns"] = ns
    return ns


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        import numba  # noqa: F401

        names.insert(0, "numba")
    except ImportError:
        pass
    return names


def _resolve_default() -> _Backend:
    requested = os.environ.get("CANN_BACKEND", "").strip().lower()
    if requested == "numpy":
        return _NUMPY_BACKEND
    if requested == "numba":
        return _numba_backend()
    if requested not in ("", "auto"):
        raise ValueError(f"CANN_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    try:
        return _numba_backend()
    except ImportError:
        warnings.warn("numba not importable; falling back to the numpy backend")
        return _NUMPY_BACKEND


def get_backend() -> _Backend:
    global _active
    if _active is None:
        _active = _resolve_default()
    return _active


def backend_name() -> str:
    return get_backend().name


def set_backend(name: str | None) -> None:
    """Force a backend ('numba' or 'numpy'); None re-reads the environment."""
    global _active
    if name is None:
        _active = None
        return
    if name == "numpy":
        _active = _NUMPY_BACKEND
    elif name == "numba":
        _active = _numba_backend()
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch backends (used by tests and the backend benchmark)."""
    previous = get_backend()
    set_backend(name)
    try:
        yield
    finally:
        global _active
        _active = previous
