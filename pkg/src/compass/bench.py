"""Recall / QPS / #Comp sweeps over a workload."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .baselines import brute_force_filtered_knn, postfilter_search, prefilter_search
from .bundle import GroundTruth
from .core import SearchConfig, recall, recall_at_k
from .search import CompassIndex, QueryOutcome, compass_search_variant
from .workload import Workload, dataset_hash, workload_hash

STRATEGIES = ("compass", "graph_only", "relational_only", "prefilter", "postfilter")


def default_ef_schedule() -> list[int]:
    """10..1000: step 5 up to 100, 10 up to 200, 50 up to 500, 100 up to 1000."""
    return (
        list(range(10, 101, 5))
        + list(range(110, 201, 10))
        + list(range(250, 501, 50))
        + list(range(600, 1001, 100))
    )


def parse_ef_schedule(text: str) -> list[int]:
    if text == "default":
        return default_ef_schedule()
    try:
        efs = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"bad ef schedule {text!r}; expected 'default' or comma-separated integers") from None
    if not efs or min(efs) < 1:
        raise ValueError("ef schedule must list positive integers")
    return efs


@dataclass
class BenchRow:
    ef: int
    mean_recall: float
    qps: float
    mean_n_dist_comps: float
    mean_n_predicate_evals: float
    mode: str
    n_attrs: int
    passrate: float
    strategy: str = "compass"
    mean_recall_gt: float = 0.0
    n_queries: int = 0


CSV_COLUMNS = [f.name for f in fields(BenchRow)]


def compute_ground_truth(index_or_dataset, workload: Workload, k: int | None = None) -> GroundTruth:
    ds = index_or_dataset.dataset if isinstance(index_or_dataset, CompassIndex) else index_or_dataset
    k = k or int(workload.meta.get("k", 10))
    rows = [brute_force_filtered_knn(ds, fq.vector, fq.predicate, k) for fq in workload]
    return GroundTruth(rows, k, dataset_hash(ds), workload_hash(workload))


def run_query(
    index: CompassIndex, strategy: str, q: np.ndarray, p, k: int, config: SearchConfig
) -> QueryOutcome:
    if strategy == "compass":
        return compass_search_variant(index, q, p, k, config, "full")
    if strategy in ("graph_only", "relational_only"):
        return compass_search_variant(index, q, p, k, config, strategy)
    if strategy == "prefilter":
        return prefilter_search(index.dataset, q, p, k)
    if strategy == "postfilter":
        return postfilter_search(index, q, p, k, max(k, config.ef))[0]
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def run_point(
    index: CompassIndex,
    workload: Workload,
    gt: GroundTruth,
    strategy: str,
    config: SearchConfig,
    k: int | None = None,
    on_outcome: Callable[[int, QueryOutcome], None] | None = None,
) -> BenchRow:
    """Run every query once at one configuration (single thread)."""
    k = k or gt.k
    outcomes = []
    t0 = time.perf_counter()
    for fq in workload:
        outcomes.append(run_query(index, strategy, fq.vector, fq.predicate, k, config))
    elapsed = time.perf_counter() - t0
    rec, rec_gt = [], []
    for i, o in enumerate(outcomes):
        truth = gt.ids(i)
        rec.append(recall_at_k(o.ids, truth, k))
        rec_gt.append(recall(o.ids, truth) if truth else 1.0)
        if on_outcome is not None:
            on_outcome(i, o)
    meta = workload.meta
    return BenchRow(
        ef=config.ef,
        mean_recall=float(np.mean(rec)),
        qps=len(outcomes) / elapsed if elapsed > 0 else float("inf"),
        mean_n_dist_comps=float(np.mean([o.n_dist_comps for o in outcomes])),
        mean_n_predicate_evals=float(np.mean([o.n_predicate_evals for o in outcomes])),
        mode=str(meta.get("mode", "")),
        n_attrs=int(meta.get("n_attrs", 0)),
        passrate=float(meta.get("passrate", 0.0)),
        strategy=strategy,
        mean_recall_gt=float(np.mean(rec_gt)),
        n_queries=len(outcomes),
    )


def sweep(
    index: CompassIndex,
    workload: Workload,
    gt: GroundTruth,
    strategy: str = "compass",
    efs: Sequence[int] | None = None,
    base: SearchConfig | None = None,
    stop_at_recall: float | None = None,
    progress: Callable[[BenchRow], None] | None = None,
    on_outcome: Callable[[int, QueryOutcome], None] | None = None,
) -> list[BenchRow]:
    """One row per ef; optionally stop once ``mean_recall`` reaches a target."""
    efs = default_ef_schedule() if efs is None else list(efs)
    base = base or SearchConfig()
    rows = []
    for ef in efs:
        cfg = SearchConfig(ef, base.alpha, base.beta, base.delta_efs, base.efi)
        row = run_point(index, workload, gt, strategy, cfg, on_outcome=on_outcome)
        rows.append(row)
        if progress:
            progress(row)
        if stop_at_recall is not None and row.mean_recall >= stop_at_recall:
            break
    return rows


def write_report(path: str | Path, rows: Iterable[BenchRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(asdict(row))


def format_row(row: BenchRow) -> str:
    return (
        f"{row.strategy:<15} ef={row.ef:<5d} recall={row.mean_recall:.4f} "
        f"qps={row.qps:9.1f} comps={row.mean_n_dist_comps:9.1f}"
    )
