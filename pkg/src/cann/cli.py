"""Command-line surface: index, rank, eval, bench.

Databases and query sets both travel as descriptor files (for queries the
color field holds the query image id). Rankings, color maps, poses and
global-score tables are the text formats in :mod:`cann.formats`.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from functools import partial

import numpy as np

from . import formats
from .errors import CannError
from .evaluate import (
    EvalReport,
    bench,
    colored_reporting_quality,
    compare_to_oracle,
    ewb_error,
)
from .retrieval import FusionWeights, Ranking, fuse_scores, rank_images, top_k
from .scoring import ScoreParams
from .solvers import (
    BruteForceIndex,
    RgConfig,
    build_cann_rg,
    build_cann_rs,
    multi_query,
)


class CliError(CannError):
    """Bad flag combination or unusable input; exits with status 2."""


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _approx_factor(text):
    value = float(text)
    if not value > 1.0:
        raise argparse.ArgumentTypeError(f"approximation factor must exceed 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cann",
        description="Colored approximate nearest neighbor image retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_build_flags(p, algos):
        p.add_argument("--algo", choices=algos, required=True)
        p.add_argument("--radius", type=_positive(float), help="maximum match distance R")
        p.add_argument("--approx", type=_approx_factor, default=1.1,
                       help="approximation factor c (> 1)")
        p.add_argument("--grids", type=_positive(int), default=16,
                       help="random grids per level")
        p.add_argument("--ladder-min", type=_positive(float), default=None,
                       help="smallest ladder radius r (rg only; default R/16)")
        p.add_argument("--gamma", type=float, default=1.0 / math.e,
                       help="target failure probability; rep = ceil(ln(1/gamma))")
        p.add_argument("--seed", type=int, default=0)

    p_index = sub.add_parser("index", help="build and save an index")
    add_build_flags(p_index, ("rg", "rs"))
    p_index.add_argument("--db", required=True, help="database descriptor file")
    p_index.add_argument("--out", required=True, help="output index file")

    p_rank = sub.add_parser("rank", help="rank database images per query image")
    p_rank.add_argument("--queries", required=True, help="query descriptor file")
    p_rank.add_argument("--index", help="index file (rg/rs)")
    p_rank.add_argument("--algo", choices=("oracle",), default=None,
                        help="use the exact oracle instead of an index")
    p_rank.add_argument("--db", help="database descriptor file (oracle)")
    p_rank.add_argument("--radius", type=_positive(float), help="oracle radius R")
    p_rank.add_argument("--p", type=float, default=0.5, help="score shape parameter")
    p_rank.add_argument("--top-k", type=int, default=0, help="truncate rankings (0 = all)")
    p_rank.add_argument("--fuse-global", help="global score table to fuse")
    p_rank.add_argument("--alpha", type=float, default=0.5,
                        help="weight of the global source in fusion")
    p_rank.add_argument("--threads", type=_positive(int), default=1)
    p_rank.add_argument("--db-names", help="database color map")
    p_rank.add_argument("--query-names", help="query color map")
    p_rank.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate rankings / reporting quality")
    p_eval.add_argument("--ranking", help="candidate ranking file")
    p_eval.add_argument("--oracle-ranking", help="reference ranking file")
    p_eval.add_argument("--top-k", type=_positive(int), default=5)
    p_eval.add_argument("--db-poses", help="database pose file (EWB)")
    p_eval.add_argument("--query-poses", help="query pose file (EWB)")
    p_eval.add_argument("--index", help="index file for reporting quality")
    p_eval.add_argument("--db", help="database descriptors for reporting quality")
    p_eval.add_argument("--queries", help="query descriptors for reporting quality")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--csv", help="also write the report as CSV")

    p_bench = sub.add_parser("bench", help="time index build and queries")
    add_build_flags(p_bench, ("rg", "rs", "oracle"))
    p_bench.add_argument("--db", required=True)
    p_bench.add_argument("--queries", required=True)
    p_bench.add_argument("--repetitions", type=_positive(int), default=1)
    p_bench.add_argument("--p", type=float, default=0.5)
    p_bench.add_argument("--threads", type=_positive(int), default=1)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--csv", help="also write the stats as CSV")
    return parser


def _require(condition, message):
    if not condition:
        raise CliError(message)


def _color_width_for(colors: np.ndarray) -> int:
    return 16 if (len(colors) == 0 or int(colors.max()) <= 0xFFFF) else 32


def _build_index(args, vectors, colors):
    width = _color_width_for(colors)
    if args.algo == "rs":
        _require(args.ladder_min is None, "--ladder-min only applies to --algo rg")
        return build_cann_rs(
            (vectors, colors),
            R=args.radius,
            c=args.approx,
            L=args.grids,
            seed=args.seed,
            color_width=width,
        )
    r = args.ladder_min if args.ladder_min is not None else args.radius / 16.0
    _require(r <= args.radius, "--ladder-min cannot exceed --radius")
    config = RgConfig(
        r=r,
        c=args.approx,
        R=args.radius,
        L=args.grids,
        gamma=args.gamma,
        seed=args.seed,
        color_width=width,
    )
    return build_cann_rg((vectors, colors), config)


def _group_queries(qvectors, qcolors, names):
    """Per query image: (name, features) in ascending query id order."""
    out = []
    for qid in np.unique(qcolors):
        name = names[qid] if names is not None else f"q{int(qid)}"
        out.append((name, qvectors[qcolors == qid]))
    return out


def cmd_index(args) -> int:
    _require(args.radius is not None, "--radius is required to build an index")
    vectors, colors = formats.read_descriptors(args.db)
    index = _build_index(args, vectors, colors)
    formats.save_index(args.out, index)
    n_levels = len(index.levels) if hasattr(index, "levels") else 1
    print(f"indexed {vectors.shape[0]} points, algo={args.algo}, levels={n_levels}")
    return 0


def _load_rank_engine(args):
    if args.algo == "oracle":
        _require(args.index is None, "--algo oracle does not take --index")
        _require(args.db is not None, "--algo oracle requires --db")
        _require(args.radius is not None, "--algo oracle requires --radius")
        vectors, colors = formats.read_descriptors(args.db)
        return BruteForceIndex(vectors, colors, args.radius)
    _require(args.index is not None, "either --index or --algo oracle is required")
    _require(args.radius is None, "--radius only applies to --algo oracle")
    return formats.load_index(args.index)


def _rank_queries(index, query_images, params, args, db_names):
    global_scores = None
    if args.fuse_global:
        by_name = formats.read_global_scores(args.fuse_global)
        name_to_color = (
            {n: i for i, n in enumerate(db_names)}
            if db_names is not None
            else None
        )
        global_scores = {}
        for qname, table in by_name.items():
            if name_to_color is None:
                global_scores[qname] = {int(img): s for img, s in table.items()}
            else:
                global_scores[qname] = {
                    name_to_color[img]: s for img, s in table.items() if img in name_to_color
                }
    rankings = []
    for name, feats in query_images:
        outcomes = multi_query(index, feats, threads=args.threads)
        ranking = rank_images(outcomes, params, query_id=name)
        if global_scores is not None:
            ranking = fuse_scores(
                ranking, global_scores.get(name, {}), FusionWeights(alpha=args.alpha)
            )
        if args.top_k > 0:
            ranking = top_k(ranking, args.top_k)
        rankings.append(ranking)
    return rankings


def cmd_rank(args) -> int:
    index = _load_rank_engine(args)
    qvectors, qcolors = formats.read_descriptors(args.queries)
    _require(
        qvectors.shape[1] == index.dim,
        f"query dimension {qvectors.shape[1]} does not match index dimension {index.dim}",
    )
    query_names = formats.read_color_map(args.query_names) if args.query_names else None
    db_names = formats.read_color_map(args.db_names) if args.db_names else None
    params = ScoreParams(p=args.p, R=index.R if hasattr(index, "R") else args.radius)
    query_images = _group_queries(qvectors, qcolors, query_names)
    rankings = _rank_queries(index, query_images, params, args, db_names)
    formats.write_rankings(args.out, rankings, names=db_names)
    print(f"ranked {len(rankings)} query images -> {args.out}")
    return 0


def _rankings_from_file(path) -> list[Ranking]:
    return [
        Ranking(query_id=q, entries=[(img, s) for img, s in entries])
        for q, entries in formats.read_rankings(path).items()
    ]


def cmd_eval(args) -> int:
    report = EvalReport()
    did_anything = False
    rankings = _rankings_from_file(args.ranking) if args.ranking else None
    if args.oracle_ranking:
        _require(args.ranking is not None, "--oracle-ranking requires --ranking")
        reference = _rankings_from_file(args.oracle_ranking)
        metrics = compare_to_oracle(rankings, reference, args.top_k)
        report.top1_agreement = metrics.top1_agreement
        report.topk_overlap = metrics.topk_overlap
        report.k = metrics.k
        report.n_queries = metrics.n_queries
        did_anything = True
    if args.db_poses or args.query_poses:
        _require(
            args.db_poses and args.query_poses and args.ranking,
            "pose evaluation requires --ranking, --db-poses and --query-poses",
        )
        db_poses = formats.read_poses(args.db_poses)
        query_poses = formats.read_poses(args.query_poses)
        terrs, rerrs = [], []
        for ranking in rankings:
            _require(
                ranking.query_id in query_poses,
                f"no ground-truth pose for query {ranking.query_id}",
            )
            names = [img for img, _ in ranking.entries[: args.top_k]]
            missing = [n for n in names if n not in db_poses]
            _require(not missing, f"no pose for images: {missing[:3]}")
            terr, rerr = ewb_error(
                [db_poses[n] for n in names], query_poses[ranking.query_id]
            )
            terrs.append(terr)
            rerrs.append(rerr)
        report.mean_ewb_translation_error = float(np.mean(terrs))
        report.mean_ewb_rotation_error_deg = float(np.mean(rerrs))
        did_anything = True
    if args.index:
        _require(
            args.db and args.queries,
            "reporting quality requires --index, --db and --queries",
        )
        index = formats.load_index(args.index)
        vectors, colors = formats.read_descriptors(args.db)
        qvectors, _ = formats.read_descriptors(args.queries)
        from .solvers import BruteForceIndex as _BF

        def oracle_fn(q, radius, _v=vectors, _c=colors):
            return _BF(_v, _c, radius).query(q)

        recall, precision = colored_reporting_quality(
            index, qvectors.astype(np.float64), oracle_fn, index.R, index.c
        )
        report.recall_within_R = recall
        report.precision_within_cR = precision
        did_anything = True
    _require(did_anything, "nothing to evaluate; pass ranking/pose/index inputs")
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def cmd_bench(args) -> int:
    _require(args.radius is not None, "--radius is required")
    vectors, colors = formats.read_descriptors(args.db)
    qvectors, qcolors = formats.read_descriptors(args.queries)
    query_images = _group_queries(qvectors, qcolors, None)
    params = ScoreParams(p=args.p, R=args.radius)

    if args.algo == "oracle":
        _require(args.ladder_min is None, "--ladder-min only applies to --algo rg")
        builder = lambda: BruteForceIndex(vectors, colors, args.radius)  # noqa: E731
    else:
        builder = partial(_build_index, args, vectors, colors)

    stats = bench(
        builder,
        query_images,
        repetitions=args.repetitions,
        params=params,
        threads=args.threads,
    )
    # a digest of the rankings makes "same seed, same results" checkable
    # from the report even though timings move around
    index = builder()
    digest = hashlib.sha256()
    for name, feats in query_images:
        ranking = rank_images(multi_query(index, feats), params, query_id=name)
        for color, score in ranking.entries:
            digest.update(f"{name}|{color}|{score:.6f}\n".encode())
    report = EvalReport(
        index_seconds=stats.index_seconds,
        query_ms_mean=stats.mean_ms,
        query_ms_median=stats.median_ms,
        query_ms_p95=stats.p95_ms,
        threads=args.threads,
    )
    text = report.to_text() + f"rankings_sha256={digest.hexdigest()}\n"
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(report.to_csv())
    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "index": cmd_index,
        "rank": cmd_rank,
        "eval": cmd_eval,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (CannError, OSError, ValueError) as exc:
        print(f"cann {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
