"""Binary index bundles and ground-truth files (little-endian throughout).

Bundle layout::

    header     magic "CMPSIDX\\0", format version (u8), dataset sha256,
               d, n, m, M, efc, nlist, graph seed, cluster seed
    directory  section count, then (tag, offset, length) per section
    sections   GRPH graph, CENT centroids, ASGN assignments,
               TREE sorted runs, CGRF centroid graph

A graph section is: version, n, M, efc, seed, entry node, layer count, then
per layer its node count, edge count, node ids, CSR offsets and neighbour ids.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustered import ClusteredBTrees, ClusterTrees
from .core import Dataset, ScoredRecord
from .graph import GraphIndex, GraphLayer
from .search import CompassIndex
from .workload import dataset_hash

FORMAT_VERSION = 1
GRAPH_VERSION = 1
BUNDLE_MAGIC = b"CMPSIDX\0"
GT_MAGIC = b"CMPSGT\0\0"

_HEADER = struct.Struct("<8sB3x32sIQIIIIQQ")
_DIR_COUNT = struct.Struct("<I")
_DIR_ENTRY = struct.Struct("<4sQQ")
_GRAPH_HEAD = struct.Struct("<IQIIQQI")
_LAYER_HEAD = struct.Struct("<QQ")
_GT_HEADER = struct.Struct("<8sB3x32s32sII")

SECTION_TAGS = (b"GRPH", b"CENT", b"ASGN", b"TREE", b"CGRF")


class BundleError(ValueError):
    pass


# --- graph section ------------------------------------------------------------


def encode_graph(graph: GraphIndex) -> bytes:
    out = io.BytesIO()
    out.write(_GRAPH_HEAD.pack(GRAPH_VERSION, graph.n, graph.M, graph.efc, graph.seed, graph.entry_node, len(graph.layers)))
    for layer in graph.layers:
        out.write(_LAYER_HEAD.pack(len(layer), layer.neighbors.shape[0]))
        out.write(layer.nodes.astype("<u4").tobytes())
        out.write(layer.offsets.astype("<u8").tobytes())
        out.write(layer.neighbors.astype("<u4").tobytes())
    return out.getvalue()


def _take(buf: memoryview, pos: int, dtype: str, count: int) -> tuple[np.ndarray, int]:
    size = np.dtype(dtype).itemsize * count
    if pos + size > len(buf):
        raise BundleError("section truncated")
    arr = np.frombuffer(buf[pos : pos + size], dtype=dtype).astype(np.int64)
    return arr, pos + size


def decode_graph(data: bytes) -> GraphIndex:
    buf = memoryview(data)
    version, n, M, efc, seed, entry, n_layers = _GRAPH_HEAD.unpack_from(buf, 0)
    if version != GRAPH_VERSION:
        raise BundleError(f"unsupported graph section version {version}")
    pos = _GRAPH_HEAD.size
    layers = []
    for _ in range(n_layers):
        n_nodes, n_edges = _LAYER_HEAD.unpack_from(buf, pos)
        pos += _LAYER_HEAD.size
        nodes, pos = _take(buf, pos, "<u4", n_nodes)
        offsets, pos = _take(buf, pos, "<u8", n_nodes + 1)
        nbrs, pos = _take(buf, pos, "<u4", n_edges)
        layers.append(GraphLayer(nodes, offsets, nbrs))
    if pos != len(buf):
        raise BundleError("trailing bytes in graph section")
    if len(layers[0]) != n:
        raise BundleError("layer 0 does not cover every record")
    return GraphIndex(layers, M, entry, efc, seed)


# --- bundle -------------------------------------------------------------------


def _encode_trees(trees: ClusterTrees) -> bytes:
    m, n = trees.ids.shape
    out = io.BytesIO()
    out.write(struct.pack("<II", m, trees.nlist))
    out.write(trees.offsets.astype("<u8").tobytes())
    for a in range(m):
        out.write(trees.values[a].astype("<f8").tobytes())
        out.write(trees.ids[a].astype("<u4").tobytes())
    return out.getvalue()


def _decode_trees(data: bytes, n: int) -> ClusterTrees:
    buf = memoryview(data)
    m, nlist = struct.unpack_from("<II", buf, 0)
    pos = 8
    offsets, pos = _take(buf, pos, "<u8", nlist + 1)
    ids = np.empty((m, n), dtype=np.int64)
    values = np.empty((m, n), dtype=np.float64)
    for a in range(m):
        size = 8 * n
        values[a] = np.frombuffer(buf[pos : pos + size], dtype="<f8")
        pos += size
        ids[a], pos = _take(buf, pos, "<u4", n)
    return ClusterTrees(offsets, ids, values)


@dataclass
class BundleInfo:
    format_version: int
    dataset_hash: bytes
    d: int
    n: int
    m: int
    M: int
    efc: int
    nlist: int
    graph_seed: int
    cluster_seed: int
    sections: dict[str, tuple[int, int]]
    header_size: int


def encode_bundle(index: CompassIndex) -> bytes:
    ds, graph, cbt = index.dataset, index.graph, index.cbt
    sections = [
        encode_graph(graph),
        cbt.centroids.astype("<f8").tobytes(),
        cbt.assignments.astype("<u4").tobytes(),
        _encode_trees(cbt.trees),
        encode_graph(cbt.centroid_graph),
    ]
    header = _HEADER.pack(
        BUNDLE_MAGIC,
        FORMAT_VERSION,
        dataset_hash(ds),
        ds.dim,
        len(ds),
        ds.n_attrs,
        graph.M,
        graph.efc,
        cbt.nlist,
        graph.seed,
        cbt.seed,
    )
    header_size = _HEADER.size + _DIR_COUNT.size + _DIR_ENTRY.size * len(sections)
    directory = [_DIR_COUNT.pack(len(sections))]
    offset = header_size
    for tag, body in zip(SECTION_TAGS, sections):
        directory.append(_DIR_ENTRY.pack(tag, offset, len(body)))
        offset += len(body)
    return b"".join([header, *directory, *sections])


def read_bundle_info(data: bytes) -> BundleInfo:
    if len(data) < _HEADER.size or data[:8] != BUNDLE_MAGIC:
        raise BundleError("not an index bundle")
    magic, version, dhash, d, n, m, M, efc, nlist, gseed, cseed = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise BundleError(f"unsupported bundle format version {version}")
    pos = _HEADER.size
    (count,) = _DIR_COUNT.unpack_from(data, pos)
    pos += _DIR_COUNT.size
    sections = {}
    for _ in range(count):
        tag, off, length = _DIR_ENTRY.unpack_from(data, pos)
        pos += _DIR_ENTRY.size
        if off + length > len(data):
            raise BundleError(f"section {tag!r} extends past end of file")
        sections[tag.decode()] = (off, length)
    return BundleInfo(version, dhash, d, n, m, M, efc, nlist, gseed, cseed, sections, pos)


def decode_bundle(data: bytes, dataset: Dataset) -> CompassIndex:
    info = read_bundle_info(data)
    if info.dataset_hash != dataset_hash(dataset):
        raise BundleError("dataset does not match the one the index was built on (hash mismatch)")

    def section(tag: str) -> bytes:
        if tag not in info.sections:
            raise BundleError(f"missing section {tag}")
        off, length = info.sections[tag]
        return data[off : off + length]

    graph = decode_graph(section("GRPH"))
    centroids = np.frombuffer(section("CENT"), dtype="<f8").reshape(info.nlist, info.d).astype(np.float64)
    assignments = np.frombuffer(section("ASGN"), dtype="<u4").astype(np.int64)
    trees = _decode_trees(section("TREE"), info.n)
    cg = decode_graph(section("CGRF"))
    cg.vectors = centroids
    graph.vectors = dataset.vectors
    cbt = ClusteredBTrees(centroids, assignments, trees, cg, info.cluster_seed, dataset.vectors, dataset.attributes)
    return CompassIndex(dataset, graph, cbt)


def save_bundle(path: str | Path, index: CompassIndex) -> BundleInfo:
    data = encode_bundle(index)
    Path(path).write_bytes(data)
    return read_bundle_info(data)


def load_bundle(path: str | Path, dataset: Dataset) -> CompassIndex:
    return decode_bundle(Path(path).read_bytes(), dataset)


# --- ground truth ---------------------------------------------------------------


@dataclass
class GroundTruth:
    rows: list[list[ScoredRecord]]
    k: int
    dataset_hash: bytes = b"\0" * 32
    workload_hash: bytes = b"\0" * 32

    def ids(self, i: int) -> list[int]:
        return [r.record_id for r in self.rows[i]]


def encode_ground_truth(gt: GroundTruth) -> bytes:
    out = io.BytesIO()
    out.write(_GT_HEADER.pack(GT_MAGIC, FORMAT_VERSION, gt.dataset_hash, gt.workload_hash, gt.k, len(gt.rows)))
    pair = np.dtype([("id", "<u4"), ("dist", "<f8")])
    for row in gt.rows:
        out.write(struct.pack("<I", len(row)))
        arr = np.array([(r.record_id, r.dist) for r in row], dtype=pair)
        out.write(arr.tobytes())
    return out.getvalue()


def decode_ground_truth(data: bytes) -> GroundTruth:
    if len(data) < _GT_HEADER.size or data[:8] != GT_MAGIC:
        raise BundleError("not a ground-truth file")
    _, version, dhash, whash, k, nq = _GT_HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise BundleError(f"unsupported ground-truth format version {version}")
    pair = np.dtype([("id", "<u4"), ("dist", "<f8")])
    pos = _GT_HEADER.size
    rows = []
    for _ in range(nq):
        if pos + 4 > len(data):
            raise BundleError("ground-truth file truncated")
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + count * pair.itemsize > len(data):
            raise BundleError("ground-truth file truncated")
        arr = np.frombuffer(data[pos : pos + count * pair.itemsize], dtype=pair)
        pos += count * pair.itemsize
        rows.append([ScoredRecord(int(i), float(d)) for i, d in zip(arr["id"], arr["dist"])])
    if pos != len(data):
        raise BundleError("trailing bytes in ground-truth file")
    return GroundTruth(rows, k, dhash, whash)
