"""Dataset files, synthetic data and filtered-query workloads."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import And, AttributeSpec, Dataset, FilteredQuery, Or, Predicate, Range, predicate_from_json


class DataFormatError(ValueError):
    pass


# --- fvecs / ivecs ------------------------------------------------------------


def _read_vecs(path: str | Path, dtype: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw:
        return np.empty((0, 0), dtype=dtype[1:])
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte 0")
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d <= 0:
        raise DataFormatError(f"{path}: non-positive dimension {d} at byte 0")
    rec = 4 * (d + 1)
    n_full = len(raw) // rec
    words = np.frombuffer(raw, dtype="<i4", count=n_full * (d + 1)).reshape(n_full, d + 1)
    bad = np.flatnonzero(words[:, 0] != d)
    if bad.size:
        off = int(bad[0]) * rec
        got = int(words[bad[0], 0])
        if got <= 0:
            raise DataFormatError(f"{path}: non-positive dimension {got} at byte {off}")
        raise DataFormatError(f"{path}: dimension {got} at byte {off} differs from {d}")
    if len(raw) % rec:
        raise DataFormatError(f"{path}: truncated record at byte {n_full * rec}")
    body = np.frombuffer(raw, dtype=dtype, count=n_full * (d + 1)).reshape(n_full, d + 1)
    return body[:, 1:].astype(dtype[1:])


def read_fvecs(path: str | Path) -> np.ndarray:
    """Vectors from a ``.fvecs`` file as an (n, d) float32 array."""
    return _read_vecs(path, "<f4")


def read_ivecs(path: str | Path) -> np.ndarray:
    return _read_vecs(path, "<i4")


def _write_vecs(path: str | Path, data: np.ndarray, dtype: str) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = data.shape
    out = np.empty((n, d + 1), dtype="<" + dtype)
    out[:, 1:] = data
    out.view("<i4")[:, 0] = d
    Path(path).write_bytes(out.tobytes())


def write_fvecs(path: str | Path, vectors: np.ndarray) -> None:
    _write_vecs(path, vectors, "f4")


def write_ivecs(path: str | Path, ids: np.ndarray) -> None:
    _write_vecs(path, ids, "i4")


# --- attributes ---------------------------------------------------------------


def generate_attributes(n: int, m: int, seed: int = 0) -> np.ndarray:
    """``m`` independent Uniform[0, 1) attributes per record."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    return np.random.default_rng(seed).random((n, m))


def write_attributes_csv(path: str | Path, attributes: np.ndarray, names: Sequence[str] | None = None) -> None:
    attributes = np.asarray(attributes, dtype=np.float64)
    names = list(names) if names else [f"A{i + 1}" for i in range(attributes.shape[1])]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for row in attributes.tolist():
            w.writerow([repr(v) for v in row])


def read_attributes_csv(path: str | Path) -> tuple[np.ndarray, list[AttributeSpec]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        try:
            header = next(r)
        except StopIteration:
            raise DataFormatError(f"{path}: empty attribute file") from None
        rows = []
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} values, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    attrs = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    schema = []
    for j, name in enumerate(header):
        col = attrs[:, j]
        if col.size == 0 or (col.min() >= 0.0 and col.max() <= 1.0):
            schema.append(AttributeSpec(name, 0.0, 1.0))
        else:
            schema.append(AttributeSpec(name, float(col.min()), float(col.max())))
    return attrs, schema


# --- vectors ------------------------------------------------------------------


def gaussian_mixture(
    n: int,
    dim: int,
    n_components: int = 100,
    spread: float = 0.6,
    seed: int = 0,
) -> np.ndarray:
    """Points around random unit-scale centres; values are float32-exact."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_components, dim))
    labels = rng.integers(n_components, size=n)
    x = centres[labels] + spread * rng.standard_normal((n, dim))
    return x.astype(np.float32).astype(np.float64)


def deduplicate(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop repeated rows, keeping first occurrences in their original order."""
    _, first = np.unique(vectors, axis=0, return_index=True)
    keep = np.sort(first)
    return vectors[keep], keep


def dataset_hash(dataset: Dataset) -> bytes:
    h = hashlib.sha256()
    h.update(np.array(dataset.vectors.shape + dataset.attributes.shape, dtype="<i8").tobytes())
    h.update(dataset.vectors.astype("<f8").tobytes())
    h.update(dataset.attributes.astype("<f8").tobytes())
    return h.digest()


# --- predicates and workloads -------------------------------------------------


def generate_range_predicate(attr_index: int, passrate: float, rng: np.random.Generator) -> Range:
    """Range of width ``passrate`` with a uniformly placed lower bound in [0, 1 - passrate]."""
    if not 0.0 < passrate <= 1.0:
        raise ValueError(f"passrate must be in (0, 1], got {passrate}")
    lo = float(rng.uniform(0.0, 1.0 - passrate))
    return Range(attr_index, lo, min(lo + passrate, 1.0))


@dataclass
class Workload:
    queries: list[FilteredQuery]
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)


def compose_workload(
    query_vectors: np.ndarray,
    mode: str = "conj",
    n_attrs: int = 1,
    passrate: float = 0.3,
    k: int = 10,
    seed: int = 0,
    m: int | None = None,
) -> Workload:
    """One predicate per query over attributes ``0..n_attrs-1`` combined by AND/OR."""
    mode = {"conjunction": "conj", "disjunction": "disj"}.get(mode, mode)
    if mode not in ("conj", "disj"):
        raise ValueError(f"mode must be 'conj' or 'disj', got {mode!r}")
    if n_attrs < 1 or (m is not None and n_attrs > m):
        raise ValueError(f"n_attrs must be in [1, {m}]")
    rng = np.random.default_rng(seed)
    combine = And if mode == "conj" else Or
    queries = []
    for q in np.asarray(query_vectors, dtype=np.float64):
        leaves = [generate_range_predicate(a, passrate, rng) for a in range(n_attrs)]
        p: Predicate = leaves[0] if n_attrs == 1 else combine(tuple(leaves))
        queries.append(FilteredQuery(q, p, k))
    meta = {"mode": mode, "n_attrs": n_attrs, "passrate": passrate, "seed": seed, "k": k}
    return Workload(queries, meta)


def nominal_passrate(mode: str, n_attrs: int, passrate: float) -> float:
    if mode == "conj":
        return passrate**n_attrs
    return 1.0 - (1.0 - passrate) ** n_attrs


def _workload_lines(workload: Workload) -> Iterable[str]:
    yield json.dumps({"meta": workload.meta}, sort_keys=True)
    for i, fq in enumerate(workload.queries):
        yield json.dumps(
            {"id": i, "k": fq.k, "predicate": fq.predicate.to_json(), "vector": fq.vector.tolist()},
            sort_keys=True,
        )


def write_workload(path: str | Path, workload: Workload) -> None:
    Path(path).write_text("\n".join(_workload_lines(workload)) + "\n")


def workload_hash(workload: Workload) -> bytes:
    h = hashlib.sha256()
    for line in _workload_lines(workload):
        h.update(line.encode())
        h.update(b"\n")
    return h.digest()


def read_workload(path: str | Path, query_vectors: np.ndarray | None = None) -> Workload:
    """Parse a JSON-lines workload. Lines may carry ``vector`` inline or ``query_index``."""
    meta: dict[str, Any] = {}
    queries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if "meta" in obj:
            meta = obj["meta"]
            continue
        if "vector" in obj:
            vec = np.asarray(obj["vector"], dtype=np.float64)
        elif "query_index" in obj:
            if query_vectors is None:
                raise DataFormatError(f"{path}:{lineno}: query_index given but no query vector file")
            vec = np.asarray(query_vectors[obj["query_index"]], dtype=np.float64)
        else:
            raise DataFormatError(f"{path}:{lineno}: query has neither 'vector' nor 'query_index'")
        pred = predicate_from_json(obj.get("predicate", {"true": True}), f"line {lineno}")
        queries.append(FilteredQuery(vec, pred, int(obj.get("k", 10))))
    return Workload(queries, meta)
