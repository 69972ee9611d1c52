import math

import numpy as np
import pytest

from cann.scoring import (
    ColorScoreMap,
    ScoreParams,
    accumulate,
    score_term,
    tail_bound_distance,
)
from cann.solvers import QueryOutcome


def outcome(mapping, kind="exact"):
    colors = np.array(sorted(mapping), dtype=np.uint32)
    dists = np.array([mapping[c] for c in sorted(mapping)], dtype=np.float64)
    return QueryOutcome(colors, dists, kind)


class TestScoreParams:
    def test_rejects_p_outside_band(self):
        for p in (0.0, 1.0, -0.2, 0.001, 0.999, 1.5):
            with pytest.raises(ValueError):
                ScoreParams(p=p, R=1.0)

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            ScoreParams(p=0.5, R=0.0)
        with pytest.raises(ValueError):
            ScoreParams(p=0.5, R=-1.0)


class TestScoreTerm:
    def test_zero_distance_is_one(self):
        for p in (0.1, 0.5, 0.9):
            assert score_term(0.0, ScoreParams(p=p, R=1.0)) == 1.0

    def test_full_distance_is_zero(self):
        assert score_term(1.0, ScoreParams(p=0.5, R=1.0)) == 0.0

    def test_p_half_is_linear(self):
        assert score_term(0.25, ScoreParams(p=0.5, R=1.0)) == pytest.approx(0.75, abs=1e-15)

    def test_p_075_matches_direct_evaluation(self):
        # independent evaluation through exp/log of (1 - 0.5^3)^(1/3)
        expected = math.exp(math.log(1.0 - 0.5**3) / 3.0)
        got = score_term(0.5, ScoreParams(p=0.75, R=1.0))
        assert got == pytest.approx(expected, abs=1e-12)
        assert round(got, 4) == 0.9565

    def test_beyond_radius_clamps_to_zero(self):
        params = ScoreParams(p=0.3, R=2.0)
        assert score_term(2.0, params) == 0.0
        assert score_term(5.0, params) == 0.0

    def test_monotone_decreasing(self):
        # non-increasing everywhere; strictly decreasing on a coarse grid
        # away from the region where extreme exponents saturate the term
        # to exactly 1.0 (or 0.0) in double precision
        rng = np.random.default_rng(42)
        for p in (0.1, 0.35, 0.5, 0.75, 0.95):
            params = ScoreParams(p=p, R=1.0)
            d = np.sort(rng.uniform(0, 1, 200))
            assert np.all(np.diff(score_term(d, params)) <= 0)
            coarse = score_term(np.arange(0.025, 1.0, 0.05), params)
            coarse = coarse[(coarse > 0.0) & (coarse < 1.0)]
            assert np.all(np.diff(coarse) < 0)

    def test_range_is_unit_interval(self):
        rng = np.random.default_rng(7)
        params = ScoreParams(p=0.8, R=3.0)
        terms = score_term(rng.uniform(0, 6, 500), params)
        assert np.all(terms >= 0.0) and np.all(terms <= 1.0)

    def test_scale_invariance(self):
        # multiplying all distances and R by the same constant changes nothing
        rng = np.random.default_rng(3)
        d = rng.uniform(0, 1.5, 100)
        for scale in (0.01, 7.0, 1e4):
            a = score_term(d, ScoreParams(p=0.6, R=1.5))
            b = score_term(d * scale, ScoreParams(p=0.6, R=1.5 * scale))
            np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_p_half_closed_form_pointwise(self):
        rng = np.random.default_rng(11)
        params = ScoreParams(p=0.5, R=1.0)
        d = rng.uniform(0, 1, 1000)
        np.testing.assert_allclose(score_term(d, params), 1.0 - d, atol=1e-12)


def bisect_tail(params, epsilon):
    """Bisection oracle: smallest d with score_term(d) <= epsilon."""
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if score_term(mid * params.R, params) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


class TestTailBound:
    def test_p_half_closed_form(self):
        assert tail_bound_distance(ScoreParams(p=0.5, R=1.0), 0.25) == pytest.approx(0.75)
        assert tail_bound_distance(ScoreParams(p=0.5, R=1.0), 1e-6) == pytest.approx(
            1.0 - 1e-6
        )

    @pytest.mark.parametrize("p,eps", [(0.9, 1e-6), (0.3, 1e-4), (0.7, 0.01), (0.5, 0.2)])
    def test_consistent_with_bisection(self, p, eps):
        params = ScoreParams(p=p, R=1.0)
        d_star = tail_bound_distance(params, eps)
        assert abs(d_star - bisect_tail(params, eps)) <= 1e-9
        assert score_term(d_star * params.R, params) <= eps + 1e-12

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            tail_bound_distance(ScoreParams(p=0.5, R=1.0), 0.0)
        with pytest.raises(ValueError):
            tail_bound_distance(ScoreParams(p=0.5, R=1.0), 1.0)


class TestAccumulate:
    def test_empty_outcome_changes_nothing(self):
        scores = ColorScoreMap()
        accumulate(scores, outcome({}), ScoreParams(p=0.5, R=1.0))
        assert scores.entries() == {}

    def test_zero_distance_gives_one(self):
        scores = ColorScoreMap()
        accumulate(scores, outcome({3: 0.0}), ScoreParams(p=0.5, R=1.0))
        assert scores.entries() == {3: 1.0}

    def test_additivity(self):
        params = ScoreParams(p=0.5, R=1.0)
        scores = ColorScoreMap()
        accumulate(scores, outcome({3: 0.25}), params)
        accumulate(scores, outcome({3: 0.25}), params)
        assert scores[3] == pytest.approx(1.5, abs=1e-12)

    def test_scores_bounded_by_feature_count(self):
        rng = np.random.default_rng(5)
        params = ScoreParams(p=0.7, R=1.0)
        scores = ColorScoreMap()
        n_feats = 50
        for _ in range(n_feats):
            mapping = {int(c): float(rng.uniform(0, 1.2)) for c in rng.integers(0, 10, 4)}
            accumulate(scores, outcome(mapping), params)
        assert all(0.0 <= s <= n_feats for s in scores.entries().values())

    def test_map_contains_and_getitem(self):
        scores = ColorScoreMap()
        accumulate(scores, outcome({2: 0.5, 9: 2.0}), ScoreParams(p=0.5, R=1.0))
        assert 2 in scores and 9 in scores and 4 not in scores
        assert scores[9] == 0.0  # distance beyond R still creates an entry
        with pytest.raises(KeyError):
            scores[4]
