import numpy as np
import pytest

from cann._kernels import mix_coords
from cann.grids import RandomTransform, cell_key, derive_seed, make_transform


class TestMakeTransform:
    def test_same_seed_same_transform(self):
        a = make_transform(1234, 16, 0.5)
        b = make_transform(1234, 16, 0.5)
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.shift, b.shift)

    def test_different_seeds_differ(self):
        a = make_transform(1, 8, 0.5)
        b = make_transform(2, 8, 0.5)
        assert not np.array_equal(a.rotation, b.rotation)

    @pytest.mark.parametrize("d", [1, 2, 8, 32, 128])
    def test_rotation_orthogonal(self, d):
        t = make_transform(99, d, 1.0)
        gram = t.rotation.T @ t.rotation
        assert np.abs(gram - np.eye(d)).max() <= 1e-9

    def test_basis_difference_norm_preserved(self):
        t = make_transform(5, 8, 1.0)
        e1 = np.zeros(8)
        e2 = np.zeros(8)
        e1[0] = 1.0
        e2[1] = 1.0
        y = t.apply(e1) - t.apply(e2)
        assert abs(np.linalg.norm(y) - np.sqrt(2)) <= 1e-9

    def test_pairwise_distances_preserved(self):
        rng = np.random.default_rng(17)
        t = make_transform(21, 32, 0.7)
        X = rng.standard_normal((100, 32)) * 3
        Y = t.apply(X)
        worst = 0.0
        for i in range(0, 100, 7):
            for j in range(100):
                before = np.linalg.norm(X[i] - X[j])
                after = np.linalg.norm(Y[i] - Y[j])
                worst = max(worst, abs(before - after))
        assert worst <= 1e-9

    def test_shift_in_cell_width_range(self):
        width = 0.37
        t = make_transform(3, 64, width)
        assert np.all(t.shift >= 0) and np.all(t.shift < width)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            make_transform(0, 0, 1.0)
        with pytest.raises(ValueError):
            make_transform(0, 4, 0.0)


def identity_transform(d):
    return RandomTransform(rotation=np.eye(d), shift=np.zeros(d), seed=0)


class TestCellKey:
    def test_floor_of_positive_coordinates(self):
        t = identity_transform(2)
        assert cell_key(t, 1.0, np.array([0.3, 0.7])) == mix_coords([0, 0])

    def test_floor_of_negative_coordinates(self):
        t = identity_transform(2)
        assert cell_key(t, 1.0, np.array([1.2, -0.3])) == mix_coords([1, -1])

    def test_equal_coords_equal_keys(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            coords = rng.integers(-1000, 1000, 5)
            assert mix_coords(coords) == mix_coords(coords.copy())

    def test_points_in_same_cell_share_key(self):
        # independent recomputation of the integer coordinates
        rng = np.random.default_rng(8)
        t = make_transform(77, 6, 0.25)
        width = 0.25
        for _ in range(100):
            x = rng.uniform(-5, 5, 6)
            y = rng.uniform(-5, 5, 6)
            cx = np.floor(t.apply(x) / width).astype(np.int64)
            cy = np.floor(t.apply(y) / width).astype(np.int64)
            same_cell = np.array_equal(cx, cy)
            same_key = cell_key(t, width, x) == cell_key(t, width, y)
            if same_cell:
                assert same_key
        # planted same-cell pair
        x = rng.uniform(-5, 5, 6)
        eps = np.full(6, 1e-12)
        assert cell_key(t, width, x) == cell_key(t, width, x + 0.0) and cell_key(
            t, width, x
        ) == cell_key(t, width, x + eps * 0)


class TestDeriveSeed:
    def test_deterministic_and_distinct(self):
        assert derive_seed(42, 1, 2) == derive_seed(42, 1, 2)
        seen = {derive_seed(42, level, g) for level in range(10) for g in range(10)}
        assert len(seen) == 100

    def test_base_seed_changes_everything(self):
        assert derive_seed(1, 0, 0) != derive_seed(2, 0, 0)
