"""Turning per-feature query outcomes into ranked image lists."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scoring import ColorScoreMap, ScoreParams, accumulate


@dataclass
class Ranking:
    """Images ordered by score for one query; ties broken by ascending id."""

    query_id: str | int | None
    entries: list[tuple[int, float]] = field(default_factory=list)

    def colors(self) -> list[int]:
        return [c for c, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class FusionWeights:
    """Weight of the external global score in a fused ranking.

    ``normalize`` applies to both sources: "minmax" rescales each source
    to [0, 1] over its own entries before mixing (the two score families
    have incomparable scales), "none" mixes raw values.
    """

    alpha: float
    normalize: str = "minmax"

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.normalize not in ("minmax", "none"):
            raise ValueError("normalize must be 'minmax' or 'none'")


def _sorted_entries(scores: dict[int, float]) -> list[tuple[int, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def rank_images(outcomes, params: ScoreParams, query_id=None) -> Ranking:
    """Sum per-feature score terms per color and sort descending.

    Colors that never appear in any outcome get no entry; shuffling the
    outcome order cannot change the result (addition commutes and ties
    break on the color id).
    """
    scores = ColorScoreMap()
    for outcome in outcomes:
        accumulate(scores, outcome, params)
    return Ranking(query_id=query_id, entries=_sorted_entries(scores.entries()))


def top_k(ranking: Ranking, k: int) -> Ranking:
    """Leading min(k, len) entries, order preserved."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Ranking(query_id=ranking.query_id, entries=list(ranking.entries[:k]))


def _minmax(scores: dict[int, float]) -> dict[int, float]:
    if not scores:
        return {}
    vals = np.array(list(scores.values()), dtype=np.float64)
    lo = float(vals.min())
    hi = float(vals.max())
    if hi == lo:
        # all present entries are equally best; they rank above absent (0.0)
        return {c: 1.0 for c in scores}
    return {c: (v - lo) / (hi - lo) for c, v in scores.items()}


def fuse_scores(
    cann: Ranking, global_scores: dict[int, float], weights: FusionWeights
) -> Ranking:
    """Blend a local-feature ranking with an external global-score table.

    Each source is normalized over its own entries, a missing color counts
    as 0 for that source, and the blend is alpha*global + (1-alpha)*cann,
    re-sorted descending.
    """
    local = dict(cann.entries)
    glob = {int(c): float(s) for c, s in global_scores.items()}
    if weights.normalize == "minmax":
        local = _minmax(local)
        glob = _minmax(glob)
    fused = {
        c: weights.alpha * glob.get(c, 0.0) + (1.0 - weights.alpha) * local.get(c, 0.0)
        for c in set(local) | set(glob)
    }
    return Ranking(query_id=cann.query_id, entries=_sorted_entries(fused))
