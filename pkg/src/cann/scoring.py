"""Per-image scoring from nearest-neighbor distances.

An image's score for a query is the sum, over query features, of a
monotone-decreasing transform of the feature's distance to the nearest
descriptor of that image:

    term(d) = (1 - (d/R)^(p/(1-p)))^((1-p)/p)

with shape parameter ``p`` in (0, 1) and cutoff distance ``R``. The term
is 1 at distance zero and 0 at distance R and beyond, so images whose
descriptors all sit outside R contribute nothing; that cutoff is what
lets a range-limited search stand in for a full scan when ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

P_MIN = 0.01
P_MAX = 0.99


@dataclass(frozen=True)
class ScoreParams:
    """Shape parameter p and cutoff distance R of the score term.

    p is restricted to [0.01, 0.99]: outside that band the exponents
    p/(1-p) and (1-p)/p become extreme enough to over/underflow doubles.
    """

    p: float
    R: float

    def __post_init__(self):
        if not (P_MIN <= self.p <= P_MAX):
            raise ValueError(f"p must lie in [{P_MIN}, {P_MAX}], got {self.p}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")

    @property
    def inner_exponent(self) -> float:
        return self.p / (1.0 - self.p)

    @property
    def outer_exponent(self) -> float:
        return (1.0 - self.p) / self.p


def score_term(distance, params: ScoreParams):
    """Score contribution of a single feature at the given distance.

    Accepts a scalar or an ndarray of non-negative distances; distances at
    or beyond R clamp to a term of 0 rather than raising (range structures
    may legitimately report colors up to c*R away).
    """
    d_norm = np.minimum(np.asarray(distance, dtype=np.float64) / params.R, 1.0)
    inner = 1.0 - d_norm**params.inner_exponent
    out = np.maximum(inner, 0.0) ** params.outer_exponent
    if np.ndim(distance) == 0:
        return float(out)
    return out


def tail_bound_distance(params: ScoreParams, epsilon: float) -> float:
    """Smallest normalized distance whose score term is at most epsilon.

    Inverts term(d) = epsilon on the monotone branch: every normalized
    distance >= the returned value scores <= epsilon. Used to check that a
    tuned p makes truncating the search at R sound.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    a = params.inner_exponent
    return float((1.0 - epsilon**a) ** (1.0 / a))


class ColorScoreMap:
    """Accumulated score per color (image id), addressed by integer color.

    Backed by a dense double array that grows on demand; a color has an
    entry once any term (even 0.0) has been added for it.
    """

    def __init__(self, capacity_hint: int = 0):
        self._scores = np.zeros(max(capacity_hint, 1), dtype=np.float64)
        self._touched = np.zeros(max(capacity_hint, 1), dtype=bool)

    def _ensure(self, max_color: int):
        if max_color >= self._scores.shape[0]:
            new_cap = max(max_color + 1, 2 * self._scores.shape[0])
            scores = np.zeros(new_cap, dtype=np.float64)
            touched = np.zeros(new_cap, dtype=bool)
            scores[: self._scores.shape[0]] = self._scores
            touched[: self._touched.shape[0]] = self._touched
            self._scores = scores
            self._touched = touched

    def add(self, colors: np.ndarray, terms: np.ndarray):
        if len(colors) == 0:
            return
        colors = np.asarray(colors, dtype=np.int64)
        self._ensure(int(colors.max()))
        np.add.at(self._scores, colors, terms)
        self._touched[colors] = True

    def entries(self) -> dict[int, float]:
        idx = np.flatnonzero(self._touched)
        return {int(c): float(self._scores[c]) for c in idx}

    def __len__(self) -> int:
        return int(self._touched.sum())

    def __getitem__(self, color: int) -> float:
        if color >= self._scores.shape[0] or not self._touched[color]:
            raise KeyError(color)
        return float(self._scores[color])

    def __contains__(self, color: int) -> bool:
        return color < self._touched.shape[0] and bool(self._touched[color])


def accumulate(scores: ColorScoreMap, outcome, params: ScoreParams) -> ColorScoreMap:
    """Add one query feature's per-color score terms into ``scores``.

    ``outcome`` maps colors to (approximate) nearest-neighbor distances;
    colors it does not mention contribute nothing.
    """
    scores.add(outcome.colors, score_term(outcome.distances, params))
    return scores
