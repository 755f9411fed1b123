"""Command-line entry point: ``compass {gen-data,build,gt,bench,query}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .bundle import (
    BundleError,
    decode_ground_truth,
    encode_ground_truth,
    load_bundle,
    read_bundle_info,
    save_bundle,
)
from .core import Dataset, PredicateError, SearchConfig, predicate_from_json
from .search import CompassIndex
from .workload import (
    DataFormatError,
    compose_workload,
    dataset_hash,
    deduplicate,
    gaussian_mixture,
    generate_attributes,
    nominal_passrate,
    read_attributes_csv,
    read_fvecs,
    read_workload,
    workload_hash,
    write_attributes_csv,
    write_fvecs,
    write_workload,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_dataset(args) -> Dataset:
    vectors = read_fvecs(args.data)
    attrs, schema = read_attributes_csv(args.attrs)
    if attrs.shape[0] != vectors.shape[0]:
        raise DataFormatError(f"{args.attrs} has {attrs.shape[0]} rows but {args.data} has {vectors.shape[0]} vectors")
    return Dataset(vectors, attrs, schema)


def _config(args) -> SearchConfig:
    return SearchConfig(
        ef=args.ef if args.ef is not None else 100,
        alpha=args.alpha,
        beta=args.beta,
        delta_efs=args.delta_efs,
        efi=args.efi,
    )


def _gt_path(args) -> Path:
    if getattr(args, "gt", None):
        return Path(args.gt)
    return Path(str(args.workload) + ".gt")


# --- commands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.from_fvecs:
        raw = read_fvecs(args.from_fvecs).astype(np.float64)
        vectors, _ = deduplicate(raw)
        if vectors.shape[0] <= args.n_queries:
            raise DataFormatError(f"{args.from_fvecs}: only {vectors.shape[0]} distinct vectors")
        rng = np.random.default_rng(args.seed)
        held = np.zeros(vectors.shape[0], dtype=bool)
        held[rng.choice(vectors.shape[0], args.n_queries, replace=False)] = True
        base, queries = vectors[~held], vectors[held]
        print(f"read {raw.shape[0]} vectors, {raw.shape[0] - vectors.shape[0]} duplicates removed")
    else:
        x = gaussian_mixture(args.n + args.n_queries, args.dim, args.components, args.spread, args.seed)
        base, queries = x[: args.n], x[args.n :]
    attrs = generate_attributes(base.shape[0], args.m, args.seed + 1)
    wl = compose_workload(queries, args.mode, args.n_attrs, args.passrate, args.k, args.seed + 2, args.m)
    write_fvecs(out / "base.fvecs", base)
    write_fvecs(out / "queries.fvecs", queries)
    write_attributes_csv(out / "attrs.csv", attrs)
    write_workload(out / "workload.jsonl", wl)
    print(f"wrote {base.shape[0]} base vectors, {queries.shape[0]} queries (d={base.shape[1]}) to {out}")
    print(f"workload: {args.mode} over {args.n_attrs} attribute(s), nominal passrate "
          f"{nominal_passrate(wl.meta['mode'], args.n_attrs, args.passrate):.4f}")
    return EXIT_OK


def cmd_build(args) -> int:
    ds = _load_dataset(args)
    t0 = time.perf_counter()
    index = CompassIndex.build(ds, M=args.M, efc=args.efc, nlist=args.nlist, seed=args.seed)
    elapsed = time.perf_counter() - t0
    info = save_bundle(args.out, index)
    total = Path(args.out).stat().st_size
    print(f"built n={info.n} d={info.d} m={info.m} M={info.M} efc={info.efc} nlist={info.nlist} in {elapsed:.1f}s")
    print(f"{'header':<8}{info.header_size:>14} bytes")
    for tag, (_, length) in info.sections.items():
        print(f"{tag:<8}{length:>14} bytes  {length / 2**20:9.2f} MiB")
    print(f"{'total':<8}{total:>14} bytes  {total / 2**20:9.2f} MiB")
    return EXIT_OK


def cmd_gt(args) -> int:
    ds = _load_dataset(args)
    wl = read_workload(args.workload)
    k = args.k or int(wl.meta.get("k", 10))
    out = Path(args.out) if args.out else _gt_path(args)
    dh, wh = dataset_hash(ds), workload_hash(wl)
    if out.exists():
        cached = decode_ground_truth(out.read_bytes())
        if cached.dataset_hash != dh or cached.workload_hash != wh:
            raise BundleError(f"{out} was computed for a different dataset or workload (hash mismatch)")
        if cached.k != k:
            raise BundleError(f"{out} holds k={cached.k}, requested k={k}")
        print(f"cache hit: {out}")
        return EXIT_OK
    t0 = time.perf_counter()
    gt = bench.compute_ground_truth(ds, wl, k)
    out.write_bytes(encode_ground_truth(gt))
    short = sum(len(r) < k for r in gt.rows)
    print(f"wrote {len(gt.rows)} rows (k={k}, {short} short) to {out} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_bench(args) -> int:
    ds = _load_dataset(args)
    wl = read_workload(args.workload)
    gt_path = _gt_path(args)
    if not gt_path.exists():
        raise DataFormatError(f"ground truth {gt_path} not found; run 'gt' first")
    gt = decode_ground_truth(gt_path.read_bytes())
    if gt.dataset_hash != dataset_hash(ds) or gt.workload_hash != workload_hash(wl):
        raise BundleError(f"{gt_path} does not match this dataset and workload (hash mismatch)")
    index = load_bundle(args.index, ds)
    efs = [args.ef] if args.ef is not None else bench.parse_ef_schedule(args.ef_schedule)
    base = _config(args)
    rows = bench.sweep(index, wl, gt, args.strategy, efs, base, progress=lambda r: print(bench.format_row(r), flush=True))
    if args.out:
        bench.write_report(args.out, rows)
        print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _read_predicate(text: str | None):
    if text is None:
        return predicate_from_json({"true": True})
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PredicateError(f"predicate is not valid JSON: {exc}") from None
    return predicate_from_json(obj)


def cmd_query(args) -> int:
    ds = _load_dataset(args)
    if args.vector is not None:
        q = np.asarray(json.loads(args.vector), dtype=np.float64)
    elif args.queries is not None:
        qs = read_fvecs(args.queries)
        if not 0 <= args.query_index < qs.shape[0]:
            raise DataFormatError(f"query index {args.query_index} outside [0, {qs.shape[0]})")
        q = qs[args.query_index].astype(np.float64)
    else:
        raise UsageError("give --vector or --queries with --query-index")
    p = _read_predicate(args.predicate)
    index = load_bundle(args.index, ds)
    cfg = _config(args)
    cfg = dataclasses.replace(cfg, ef=max(cfg.ef, args.k))
    o = bench.run_query(index, args.strategy, q, p, args.k, cfg)
    counters = o.counters.__dict__ if o.counters is not None else {}
    print(json.dumps({
        "ids": o.ids,
        "dists": [r.dist for r in o.results],
        "n_dist_comps": o.n_dist_comps,
        "n_predicate_evals": o.n_predicate_evals,
        "n_cbt_pulls": o.n_cbt_pulls,
        "wall_time": o.wall_time,
        "counters": counters,
    }))
    return EXIT_OK


def cmd_info(args) -> int:
    info = read_bundle_info(Path(args.index).read_bytes())
    print(json.dumps({k: (v.hex() if isinstance(v, bytes) else v) for k, v in info.__dict__.items()}, indent=2))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def _add_data(p) -> None:
    p.add_argument("--data", required=True, help="base vectors (.fvecs)")
    p.add_argument("--attrs", required=True, help="attribute CSV with a header row")


def _add_search(p) -> None:
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef", type=int, default=None)
    p.add_argument("--strategy", choices=bench.STRATEGIES, default="compass")
    p.add_argument("--alpha", type=float, default=0.3, help="one-hop threshold on neighbourhood passrate")
    p.add_argument("--beta", type=float, default=0.05, help="pivot threshold on neighbourhood passrate")
    p.add_argument("--delta-efs", type=int, default=None, help="graph width increment (default k)")
    p.add_argument("--efi", type=int, default=None, help="relational batch size (default 2k)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="compass", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset and workload")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--components", type=int, default=50)
    p.add_argument("--spread", type=float, default=3.0)
    p.add_argument("--m", type=int, default=4, help="number of attributes")
    p.add_argument("--from-fvecs", default=None, help="use (deduplicated) real vectors instead of a mixture")
    p.add_argument("--mode", choices=("conj", "disj"), default="conj")
    p.add_argument("--n-attrs", type=int, default=1)
    p.add_argument("--passrate", type=float, default=0.3)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build", help="build an index bundle")
    _add_data(p)
    p.add_argument("--out", required=True)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--efc", type=int, default=200)
    p.add_argument("--nlist", type=int, default=None, help="IVF clusters (default ceil(n/100))")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("gt", help="exact filtered top-k per workload query (cached)")
    _add_data(p)
    p.add_argument("--workload", required=True)
    p.add_argument("--out", default=None, help="default: <workload>.gt")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("bench", help="sweep ef and write a CSV report")
    _add_data(p)
    p.add_argument("--index", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--gt", default=None, help="default: <workload>.gt")
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--ef-schedule", default="default", help="'default' or comma-separated ef values")
    _add_search(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("query", help="run one query and print JSON")
    _add_data(p)
    p.add_argument("--index", required=True)
    p.add_argument("--vector", default=None, help="query vector as a JSON list")
    p.add_argument("--queries", default=None, help="query vectors (.fvecs)")
    p.add_argument("--query-index", type=int, default=0)
    p.add_argument("--predicate", default=None, help="predicate JSON, or @file")
    _add_search(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("info", help="print a bundle header")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"compass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, BundleError, PredicateError, OSError, ValueError) as exc:
        print(f"compass: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
