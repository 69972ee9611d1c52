"""Colored approximate nearest neighbor search for image retrieval.

Index a database of local feature descriptors tagged with image ids
("colors"), then rank database images for a query feature set by summed
per-image nearest-neighbor scores. Three engines share one interface: an
exact brute-force oracle, exhaustive range search (RS), and the random
grid radius ladder (RG) that never computes descriptor-space distances.
"""

from ._kernels import available_backends, backend_name, set_backend, use_backend
from .evaluate import (
    EvalReport,
    LatencyStats,
    Pose,
    bench,
    colored_reporting_quality,
    compare_to_oracle,
    ewb_error,
)
from .grids import (
    GridIndex,
    PointGridIndex,
    RandomTransform,
    build_colored_grid,
    build_point_grid,
    cell_key,
    grids_for_dimension,
    make_transform,
)
from .retrieval import FusionWeights, Ranking, fuse_scores, rank_images, top_k
from .scoring import ColorScoreMap, ScoreParams, accumulate, score_term, tail_bound_distance
from .solvers import (
    BruteForceIndex,
    ColoredPoint,
    LadderIndex,
    QueryOutcome,
    RgConfig,
    RsIndex,
    brute_force_colored_nn,
    build_cann_rg,
    build_cann_rs,
    multi_query,
    query_cann_rg,
    query_cann_rs,
)

__version__ = "0.1.0"

__all__ = [
    "BruteForceIndex",
    "ColorScoreMap",
    "ColoredPoint",
    "EvalReport",
    "FusionWeights",
    "GridIndex",
    "LadderIndex",
    "LatencyStats",
    "PointGridIndex",
    "Pose",
    "QueryOutcome",
    "RandomTransform",
    "Ranking",
    "RgConfig",
    "RsIndex",
    "ScoreParams",
    "accumulate",
    "available_backends",
    "backend_name",
    "bench",
    "brute_force_colored_nn",
    "build_cann_rg",
    "build_cann_rs",
    "build_colored_grid",
    "build_point_grid",
    "cell_key",
    "colored_reporting_quality",
    "compare_to_oracle",
    "ewb_error",
    "fuse_scores",
    "grids_for_dimension",
    "make_transform",
    "multi_query",
    "query_cann_rg",
    "query_cann_rs",
    "rank_images",
    "score_term",
    "set_backend",
    "tail_bound_distance",
    "top_k",
    "use_backend",
]
