import numpy as np
import pytest

from cann.grids import (
    build_colored_grid,
    build_point_grid,
    cell_key,
    cell_width,
    grids_for_dimension,
)


def brute_colors_within(X, colors, q, radius):
    dists = np.linalg.norm(X.astype(np.float64) - q, axis=1)
    return set(int(c) for c in np.unique(colors[dists <= radius]))


def scan_cells(index):
    """All (grid, key, values) triples stored in a CellTable."""
    cells = index.cells
    for g in range(index.n_grids):
        keys = cells.keys[cells.key_off[g] : cells.key_off[g + 1]]
        for i, key in enumerate(keys):
            row = int(cells.starts_off[g]) + i
            yield g, int(key), cells.values[cells.starts[row] : cells.starts[row + 1]]


class TestBuildColoredGrid:
    def test_single_point_single_grid(self):
        X = np.array([[0.5, 0.5]], dtype=np.float32)
        g = build_colored_grid(X, np.array([7], dtype=np.uint32), 1.0, 1.5, L=1)
        cells = list(scan_cells(g))
        assert len(cells) == 1
        _, _, values = cells[0]
        assert list(values) == [7]

    def test_same_color_same_cell_stored_once(self):
        X = np.array([[0.0, 0.0], [1e-6, 1e-6]], dtype=np.float32)
        g = build_colored_grid(X, np.array([3, 3], dtype=np.uint32), 1.0, 1.5, L=4)
        for _, _, values in scan_cells(g):
            assert len(values) == 1 and values[0] == 3

    def test_structure_matches_reference_build(self):
        # independent reconstruction with dict-of-sets and per-point cell_key
        rng = np.random.default_rng(4)
        n, d, L = 1000, 6, 3
        X = (rng.standard_normal((n, d)) * 0.8).astype(np.float32)
        colors = rng.integers(0, 10, n).astype(np.uint32)
        radius, c = 0.6, 1.4
        g = build_colored_grid(X, colors, radius, c, L=L, base_seed=11)
        width = cell_width(radius, c, d)
        expected = [dict() for _ in range(L)]
        for gi, t in enumerate(g.transforms):
            for i in range(n):
                key = cell_key(t, width, X[i].astype(np.float64))
                expected[gi].setdefault(key, set()).add(int(colors[i]))
        got = [dict() for _ in range(L)]
        total_entries = 0
        for gi, key, values in scan_cells(g):
            assert list(values) == sorted(set(int(v) for v in values))  # distinct, sorted
            got[gi][key] = set(int(v) for v in values)
            total_entries += len(values)
        assert got == expected
        assert total_entries <= L * n

    def test_rejects_bad_input(self):
        X = np.zeros((2, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            build_colored_grid(X, np.array([0, 70000], dtype=np.uint32), 1.0, 1.1, L=1)
        with pytest.raises(ValueError):
            build_colored_grid(np.zeros((0, 3), np.float32), np.zeros(0, np.uint32), 1.0, 1.1)
        with pytest.raises(ValueError):
            build_colored_grid(X, np.zeros(2, np.uint32), 1.0, 0.9)

    def test_wide_colors_allowed_with_32bit_width(self):
        X = np.zeros((2, 3), dtype=np.float32)
        g = build_colored_grid(
            X, np.array([0, 70000], dtype=np.uint32), 1.0, 1.1, L=1, color_width=32
        )
        assert g.cells.values.dtype == np.uint32

    def test_cell_width_recomputable(self):
        X = np.zeros((1, 4), dtype=np.float32)
        g = build_colored_grid(X, np.zeros(1, np.uint32), 2.0, 1.2, L=1)
        assert g.cell_width == 2.0 * 1.2 / np.sqrt(4)

    def test_deterministic_rebuild(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((300, 8)).astype(np.float32)
        colors = rng.integers(0, 12, 300).astype(np.uint32)
        a = build_colored_grid(X, colors, 0.5, 1.1, L=4, base_seed=5)
        b = build_colored_grid(X, colors, 0.5, 1.1, L=4, base_seed=5)
        np.testing.assert_array_equal(a.cells.keys, b.cells.keys)
        np.testing.assert_array_equal(a.cells.starts, b.cells.starts)
        np.testing.assert_array_equal(a.cells.values, b.cells.values)


class TestQueryColors:
    def test_indexed_point_always_found(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((200, 8)).astype(np.float32)
        colors = rng.integers(0, 20, 200).astype(np.uint32)
        g = build_colored_grid(X, colors, 0.5, 1.2, L=6, base_seed=1)
        for i in range(0, 200, 17):
            got = g.query_colors(X[i].astype(np.float64))
            assert colors[i] in got

    def test_far_color_never_reported(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, (100, 4)).astype(np.float32)
        colors = np.zeros(100, dtype=np.uint32)
        colors[50:] = 7
        X[50:] += 100.0  # color 7 sits far outside c * radius of the origin
        g = build_colored_grid(X, colors, 1.0, 1.3, L=8, base_seed=2)
        q = np.zeros(4)
        assert 7 not in g.query_colors(q)

    def test_every_report_has_witness_within_c_radius(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            n, d = 500, int(rng.choice([4, 8, 16]))
            X = (rng.standard_normal((n, d)) * rng.uniform(0.5, 2)).astype(np.float32)
            colors = rng.integers(0, 25, n).astype(np.uint32)
            radius = float(rng.uniform(0.3, 1.5))
            c = float(rng.uniform(1.05, 2.0))
            g = build_colored_grid(X, colors, radius, c, L=4, base_seed=trial)
            for _ in range(20):
                q = rng.standard_normal(d) * 1.2
                witnesses = brute_colors_within(X, colors, q, c * radius * (1 + 1e-9))
                assert set(int(x) for x in g.query_colors(q)) <= witnesses

    def test_planted_recall_with_analysis_grid_count(self):
        # ambient dimension equals the intrinsic one; plants inside a third
        # of the radius, where per-grid capture is non-negligible
        d_eff, c = 8, 1.1
        L = grids_for_dimension(d_eff, c)
        assert L == 1441
        rng = np.random.default_rng(12)
        n = 400
        X = (rng.standard_normal((n, d_eff)) * 5.0).astype(np.float32)
        colors = np.arange(n, dtype=np.uint32) % 40
        radius = 1.0
        g = build_colored_grid(X, colors, radius, c, L=L, base_seed=3)
        hits = 0
        trials = 1000
        for t in range(trials):
            i = int(rng.integers(0, n))
            direction = rng.standard_normal(d_eff)
            direction /= np.linalg.norm(direction)
            q = X[i].astype(np.float64) + direction * rng.uniform(0, radius / 3)
            hits += int(colors[i] in g.query_colors(q))
        assert hits / trials >= 0.9


class TestPointGrid:
    def test_single_point_stored_per_grid(self):
        X = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
        g = build_point_grid(X, np.array([4], dtype=np.uint32), 1.0, 1.5, L=3)
        assert g.cells.n_entries == 3  # one id per grid
        np.testing.assert_array_equal(g.query_candidates(X[0].astype(np.float64)), [0])

    def test_duplicate_descriptors_both_kept(self):
        X = np.array([[0.1, 0.1], [0.1, 0.1]], dtype=np.float32)
        g = build_point_grid(X, np.array([1, 2], dtype=np.uint32), 1.0, 1.5, L=2)
        ids = g.query_candidates(np.array([0.1, 0.1]))
        np.testing.assert_array_equal(ids, [0, 1])

    def test_empty_result_far_away(self):
        X = np.zeros((5, 3), dtype=np.float32)
        g = build_point_grid(X, np.zeros(5, np.uint32), 0.5, 1.2, L=2)
        assert len(g.query_candidates(np.full(3, 1e6))) == 0

    def test_candidates_cover_in_range_points(self):
        # clustered plants: queries at cluster centers, in-range points nearby
        rng = np.random.default_rng(21)
        d = 8
        centers = rng.standard_normal((20, d)) * 50
        X = np.concatenate([c + rng.normal(0, 0.1, (50, d)) for c in centers])
        colors = np.repeat(np.arange(20), 50).astype(np.uint32)
        radius = 1.0
        g = build_point_grid(X.astype(np.float32), colors, radius, c=2.0, L=16, base_seed=9)
        covered = 0
        total = 0
        for q in centers:
            in_range = set(
                np.flatnonzero(np.linalg.norm(X - q, axis=1) <= radius).tolist()
            )
            got = set(int(i) for i in g.query_candidates(q))
            covered += len(in_range & got)
            total += len(in_range)
        assert total > 500
        assert covered / total >= 0.9

    def test_storage_bounded_by_L_times_n(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((400, 5)).astype(np.float32)
        g = build_point_grid(X, rng.integers(0, 9, 400).astype(np.uint32), 1.0, 1.3, L=7)
        assert g.cells.n_entries <= 7 * 400
