"""Evaluation against the exact oracle, pose-barycenter error, and benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .retrieval import Ranking, rank_images
from .scoring import ScoreParams
from .solvers import multi_query


@dataclass(frozen=True)
class Pose:
    """Camera position (meters) and orientation (unit quaternion, wxyz)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64)
        )
        object.__setattr__(
            self, "orientation", np.asarray(self.orientation, dtype=np.float64)
        )
        if self.position.shape != (3,):
            raise ValueError("position must be a 3-vector")
        if self.orientation.shape != (4,):
            raise ValueError("orientation must be a wxyz quaternion")
        norm = float(np.linalg.norm(self.orientation))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion must be unit length, |q| = {norm}")


def ewb_error(top_k: list[Pose], ground_truth: Pose) -> tuple[float, float]:
    """Equal-weighted barycenter error of the top-k poses.

    Translation error is the distance from the unweighted mean position to
    the ground truth; rotation error is the angle (degrees) between the
    sign-aligned mean quaternion and the ground-truth orientation. With
    k=1 this reduces to the plain pose error of the top image.
    """
    if not top_k:
        raise ValueError("need at least one pose")
    positions = np.stack([p.position for p in top_k])
    translation = float(np.linalg.norm(positions.mean(axis=0) - ground_truth.position))
    quats = np.stack([p.orientation for p in top_k])
    signs = np.sign(quats @ quats[0])
    signs[signs == 0] = 1.0
    mean_q = (quats * signs[:, None]).mean(axis=0)
    mean_q /= np.linalg.norm(mean_q)
    dot = abs(float(mean_q @ ground_truth.orientation))
    rotation = float(np.degrees(2.0 * np.arccos(min(dot, 1.0))))
    return translation, rotation


@dataclass
class AgreementMetrics:
    top1_agreement: float
    topk_overlap: float
    k: int
    n_queries: int


def compare_to_oracle(
    candidate: list[Ranking], oracle: list[Ranking], k: int
) -> AgreementMetrics:
    """Top-1 agreement and mean top-k overlap against oracle rankings."""
    cand = {r.query_id: r for r in candidate}
    orac = {r.query_id: r for r in oracle}
    if set(cand) != set(orac):
        raise ValueError("candidate and oracle cover different query sets")
    if not cand:
        raise ValueError("empty query set")
    top1 = 0
    overlap = 0.0
    for qid, oracle_ranking in orac.items():
        c = cand[qid]
        if c.entries and oracle_ranking.entries:
            top1 += c.entries[0][0] == oracle_ranking.entries[0][0]
        elif not c.entries and not oracle_ranking.entries:
            top1 += 1
        c_top = {col for col, _ in c.entries[:k]}
        o_top = {col for col, _ in oracle_ranking.entries[:k]}
        overlap += len(c_top & o_top) / k
    n = len(orac)
    return AgreementMetrics(
        top1_agreement=top1 / n, topk_overlap=overlap / n, k=k, n_queries=n
    )


def colored_reporting_quality(
    index, queries: np.ndarray, oracle_fn, R: float, c: float
) -> tuple[float, float]:
    """Micro-averaged recall/precision of colored range reporting.

    ``oracle_fn(q, radius)`` must return the exact outcome (the brute-force
    scan). Recall counts oracle colors within R that the index reports;
    precision counts reported colors with an exact witness within c*R (a
    tiny relative slack absorbs floating-point rounding at the boundary).
    """
    reported_total = 0
    recalled = 0
    oracle_total = 0
    precise = 0
    slack = 1.0 + 1e-9
    for q in queries:
        if hasattr(index, "query_colors"):
            reported = set(int(x) for x in index.query_colors(q))
        else:
            reported = set(int(x) for x in index.query(q).colors)
        within_r = set(int(x) for x in oracle_fn(q, R).colors)
        within_cr = set(int(x) for x in oracle_fn(q, c * R * slack).colors)
        oracle_total += len(within_r)
        recalled += len(within_r & reported)
        reported_total += len(reported)
        precise += len(reported & within_cr)
    recall = recalled / oracle_total if oracle_total else 1.0
    precision = precise / reported_total if reported_total else 1.0
    return recall, precision


@dataclass
class LatencyStats:
    index_seconds: float
    query_ms: list[float] = field(repr=False)
    threads: int = 1

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.query_ms))

    @property
    def median_ms(self) -> float:
        return float(np.median(self.query_ms))

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.query_ms, 95))


def bench(
    index_builder,
    query_set: list[tuple[str, np.ndarray]],
    repetitions: int = 1,
    params: ScoreParams | None = None,
    threads: int = 1,
) -> LatencyStats:
    """Wall-clock index build time and per-query-image latency.

    One query image costs a multi-feature query plus ranking. The first
    pass over the query set is a warm-up and is not recorded.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    t0 = time.perf_counter()
    index = index_builder()
    index_seconds = time.perf_counter() - t0
    if params is None:
        params = ScoreParams(p=0.5, R=getattr(index, "R", 1.0))

    def run_one(Q):
        outcomes = multi_query(index, Q, threads=threads)
        return rank_images(outcomes, params)

    for _, Q in query_set:  # warm-up
        run_one(Q)
    latencies = []
    for _ in range(repetitions):
        for _, Q in query_set:
            t0 = time.perf_counter()
            run_one(Q)
            latencies.append((time.perf_counter() - t0) * 1e3)
    return LatencyStats(index_seconds=index_seconds, query_ms=latencies, threads=threads)


@dataclass
class EvalReport:
    """Flat bundle of evaluation numbers; any field may be missing."""

    top1_agreement: float | None = None
    topk_overlap: float | None = None
    k: int | None = None
    n_queries: int | None = None
    recall_within_R: float | None = None
    precision_within_cR: float | None = None
    mean_ewb_translation_error: float | None = None
    mean_ewb_rotation_error_deg: float | None = None
    index_seconds: float | None = None
    query_ms_mean: float | None = None
    query_ms_median: float | None = None
    query_ms_p95: float | None = None
    threads: int | None = None

    def items(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def to_csv(self) -> str:
        keys = [k for k, _ in self.items()]
        vals = [str(v) for _, v in self.items()]
        return ",".join(keys) + "\n" + ",".join(vals) + "\n"
