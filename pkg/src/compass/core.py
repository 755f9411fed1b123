"""Shared domain types: datasets, range predicates, distances and recall."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels


class PredicateError(ValueError):
    """Malformed predicate or predicate/schema mismatch."""


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    lo: float = 0.0
    hi: float = 1.0


@dataclass
class Dataset:
    """Aligned vectors and attribute tuples; record ids are row indices."""

    vectors: np.ndarray
    attributes: np.ndarray
    schema: list[AttributeSpec] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] == 0:
            raise ValueError("vectors must be a non-empty (n, d) array")
        if self.attributes.ndim == 1:
            self.attributes = self.attributes.reshape(-1, 1)
        if self.attributes.shape[0] != self.vectors.shape[0]:
            raise ValueError(
                f"{self.vectors.shape[0]} vectors but {self.attributes.shape[0]} attribute rows"
            )
        m = self.attributes.shape[1]
        if not self.schema:
            self.schema = [AttributeSpec(f"A{i + 1}") for i in range(m)]
        if len(self.schema) != m:
            raise ValueError(f"schema has {len(self.schema)} attributes, data has {m}")
        if len(self):
            lo = self.attributes.min(axis=0)
            hi = self.attributes.max(axis=0)
            for j, spec in enumerate(self.schema):
                if lo[j] < spec.lo or hi[j] > spec.hi:
                    raise ValueError(
                        f"attribute {spec.name!r} has values outside [{spec.lo}, {spec.hi}]"
                    )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_attrs(self) -> int:
        return self.attributes.shape[1]


# --- predicates -----------------------------------------------------------


class Predicate:
    """Boolean tree over closed per-attribute ranges."""

    def evaluate(self, attrs: Sequence[float]) -> bool:
        raise NotImplementedError

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        """Vectorised evaluation over an (r, m) block of attribute rows."""
        raise NotImplementedError

    def leaves(self) -> list["Range"]:
        raise NotImplementedError

    def max_attr(self) -> int:
        return max((leaf.attr for leaf in self.leaves()), default=-1)

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError

    def __and__(self, other: "Predicate") -> "And":
        return And((self, other))

    def __or__(self, other: "Predicate") -> "Or":
        return Or((self, other))


@dataclass(frozen=True)
class Range(Predicate):
    attr: int
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.attr < 0:
            raise PredicateError(f"negative attribute index {self.attr}")
        if not self.lo <= self.hi:
            raise PredicateError(f"empty range [{self.lo}, {self.hi}]")

    def evaluate(self, attrs: Sequence[float]) -> bool:
        v = attrs[self.attr]
        return bool(self.lo <= v <= self.hi)

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        col = attrs[:, self.attr]
        return (col >= self.lo) & (col <= self.hi)

    def leaves(self) -> list[Range]:
        return [self]

    def to_json(self) -> dict[str, Any]:
        return {"attr": self.attr, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class And(Predicate):
    children: tuple[Predicate, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise PredicateError("AND needs at least one child")

    def evaluate(self, attrs: Sequence[float]) -> bool:
        return all(c.evaluate(attrs) for c in self.children)

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        out = self.children[0].mask(attrs)
        for c in self.children[1:]:
            out = out & c.mask(attrs)
        return out

    def leaves(self) -> list[Range]:
        return [leaf for c in self.children for leaf in c.leaves()]

    def to_json(self) -> dict[str, Any]:
        return {"and": [c.to_json() for c in self.children]}


@dataclass(frozen=True)
class Or(Predicate):
    children: tuple[Predicate, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise PredicateError("OR needs at least one child")

    def evaluate(self, attrs: Sequence[float]) -> bool:
        return any(c.evaluate(attrs) for c in self.children)

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        out = self.children[0].mask(attrs)
        for c in self.children[1:]:
            out = out | c.mask(attrs)
        return out

    def leaves(self) -> list[Range]:
        return [leaf for c in self.children for leaf in c.leaves()]

    def to_json(self) -> dict[str, Any]:
        return {"or": [c.to_json() for c in self.children]}


@dataclass(frozen=True)
class AlwaysTrue(Predicate):
    def evaluate(self, attrs: Sequence[float]) -> bool:
        return True

    def mask(self, attrs: np.ndarray) -> np.ndarray:
        return np.ones(attrs.shape[0], dtype=bool)

    def leaves(self) -> list[Range]:
        return []

    def to_json(self) -> dict[str, Any]:
        return {"true": True}


ALWAYS_TRUE = AlwaysTrue()


def predicate_program(p: Predicate) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Postfix form ``(ops, arg, lo, hi)`` for the compiled evaluator.

    ``arg`` is the attribute index of a range and the child count of AND/OR.
    """
    ops, arg, lo, hi = [], [], [], []

    def emit(node: Predicate) -> None:
        if isinstance(node, Range):
            ops.append(_kernels.OP_RANGE)
            arg.append(node.attr)
            lo.append(node.lo)
            hi.append(node.hi)
            return
        if isinstance(node, (And, Or)):
            for c in node.children:
                emit(c)
            ops.append(_kernels.OP_AND if isinstance(node, And) else _kernels.OP_OR)
            arg.append(len(node.children))
        else:
            ops.append(_kernels.OP_TRUE)
            arg.append(0)
        lo.append(0.0)
        hi.append(0.0)

    emit(p)
    return (
        np.array(ops, dtype=np.int64),
        np.array(arg, dtype=np.int64),
        np.array(lo, dtype=np.float64),
        np.array(hi, dtype=np.float64),
    )


def evaluate_predicate(p: Predicate, attrs: Sequence[float]) -> bool:
    if p.max_attr() >= len(attrs):
        raise PredicateError(
            f"predicate references attribute {p.max_attr()} but the tuple has {len(attrs)} values"
        )
    return p.evaluate(attrs)


def predicate_attribute_ranges(p: Predicate) -> list[tuple[int, tuple[float, float]]]:
    """Leaves of ``p`` in left-to-right order as ``(attr, (lo, hi))``."""
    return [(leaf.attr, (leaf.lo, leaf.hi)) for leaf in p.leaves()]


def predicate_from_json(obj: Any, path: str = "$") -> Predicate:
    """Parse ``{"and": [...]}``, ``{"or": [...]}``, ``{"attr", "lo", "hi"}`` or ``{"true": true}``."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise PredicateError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise PredicateError(f"{path}: expected an object, got {type(obj).__name__}")
    keys = set(obj)
    if keys == {"true"}:
        if obj["true"] is not True:
            raise PredicateError(f"{path}: 'true' node must be {{\"true\": true}}")
        return ALWAYS_TRUE
    if keys in ({"and"}, {"or"}):
        (op,) = keys
        children = obj[op]
        if not isinstance(children, list) or not children:
            raise PredicateError(f"{path}.{op}: expected a non-empty list")
        parsed = tuple(predicate_from_json(c, f"{path}.{op}[{i}]") for i, c in enumerate(children))
        return And(parsed) if op == "and" else Or(parsed)
    if keys == {"attr", "lo", "hi"}:
        attr, lo, hi = obj["attr"], obj["lo"], obj["hi"]
        if not isinstance(attr, int) or isinstance(attr, bool):
            raise PredicateError(f"{path}.attr: expected an integer")
        for name, v in (("lo", lo), ("hi", hi)):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise PredicateError(f"{path}.{name}: expected a number")
        try:
            return Range(attr, float(lo), float(hi))
        except PredicateError as exc:
            raise PredicateError(f"{path}: {exc}") from None
    raise PredicateError(f"{path}: unrecognised predicate node with keys {sorted(keys)}")


def check_predicate(p: Predicate, n_attrs: int) -> None:
    if p.max_attr() >= n_attrs:
        raise PredicateError(
            f"predicate references attribute {p.max_attr()} but the schema has {n_attrs}"
        )


# --- queries and search records -------------------------------------------


@dataclass(frozen=True)
class FilteredQuery:
    vector: np.ndarray
    predicate: Predicate
    k: int = 10

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class SearchConfig:
    """Search-time knobs. ``delta_efs`` and ``efi`` default to k and 2k."""

    ef: int = 100
    alpha: float = 0.3
    beta: float = 0.05
    delta_efs: int | None = None
    efi: int | None = None

    def __post_init__(self) -> None:
        if self.ef < 1:
            raise ValueError("ef must be positive")
        if not (0.0 <= self.beta < self.alpha <= 1.0):
            raise ValueError(f"need 0 <= beta < alpha <= 1, got beta={self.beta} alpha={self.alpha}")
        for name in ("delta_efs", "efi"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive")

    def resolved_delta_efs(self, k: int) -> int:
        return self.delta_efs if self.delta_efs is not None else k

    def resolved_efi(self, k: int) -> int:
        return self.efi if self.efi is not None else 2 * k


class ScoredRecord(NamedTuple):
    record_id: int
    dist: float


# --- distance and recall --------------------------------------------------


def squared_l2(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def sq_dists(vectors: np.ndarray, ids: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared distances from ``q`` to ``vectors[ids]``.

    Every search path computes record distances with the same compiled loop so
    that exact comparisons against the brute-force oracle are bit-for-bit.
    """
    if isinstance(ids, slice):
        ids = np.arange(vectors.shape[0])[ids]
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    return _kernels.sq_dists(vectors, ids, np.ascontiguousarray(q, dtype=np.float64))


def recall(result_ids: Iterable[int], truth_ids: Iterable[int]) -> float:
    truth = set(truth_ids)
    if not truth:
        raise ValueError("ground-truth set is empty")
    return len(truth.intersection(result_ids)) / len(truth)


def recall_at_k(result_ids: Iterable[int], truth_ids: Iterable[int], k: int) -> float:
    """Overlap divided by k, the benchmark convention (short truth rows cap below 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return len(set(truth_ids).intersection(result_ids)) / k
