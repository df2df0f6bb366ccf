"""Directed graphs in compressed sparse row form.

Vertex IDs are dense integers in [0, n). Row offsets are 64-bit, column
indices 32-bit; those widths are also what the cache byte accounting
charges per cached neighbor list.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LGCSR1"
_HEADER = struct.Struct("<QQ")


class GraphFormatError(ValueError):
    """Base class for errors in the on-disk graph format."""


class HeaderError(GraphFormatError):
    """Magic bytes missing or the fixed-size header is malformed."""


class TruncatedArrayError(GraphFormatError):
    """File ends before the arrays declared in the header are complete."""


class OffsetMonotonicityError(GraphFormatError):
    """Row offsets are not a valid non-decreasing prefix array."""


class ColumnRangeError(GraphFormatError):
    """A column index refers to a vertex outside [0, num_vertices)."""


def _check_arrays(num_vertices: int, num_edges: int, row_offsets: np.ndarray, col_indices: np.ndarray) -> None:
    if row_offsets.shape != (num_vertices + 1,):
        raise OffsetMonotonicityError(
            f"row_offsets length {row_offsets.shape[0]} != num_vertices + 1 = {num_vertices + 1}"
        )
    if col_indices.shape != (num_edges,):
        raise TruncatedArrayError(f"col_indices length {col_indices.shape[0]} != num_edges = {num_edges}")
    if num_vertices == 0:
        if row_offsets[0] != 0 or num_edges != 0:
            raise OffsetMonotonicityError("empty graph must have row_offsets == [0] and no edges")
        return
    if row_offsets[0] != 0:
        raise OffsetMonotonicityError("row_offsets[0] must be 0")
    if int(row_offsets[-1]) != num_edges:
        raise OffsetMonotonicityError(
            f"row_offsets[-1] = {int(row_offsets[-1])} does not match num_edges = {num_edges}"
        )
    if np.any(np.diff(row_offsets.astype(np.int64)) < 0):
        raise OffsetMonotonicityError("row_offsets must be non-decreasing")
    if num_edges and int(col_indices.max()) >= num_vertices:
        raise ColumnRangeError("col_indices contains a vertex id >= num_vertices")


@dataclass(frozen=True)
class CsrGraph:
    """Immutable directed graph; sampling follows out-edges."""

    num_vertices: int
    num_edges: int
    row_offsets: np.ndarray  # uint64, length num_vertices + 1
    col_indices: np.ndarray  # uint32, length num_edges

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.uint64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.uint32)
        _check_arrays(self.num_vertices, self.num_edges, ro, ci)
        ro.setflags(write=False)
        ci.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        offsets = ro.astype(np.int64)
        degrees = np.diff(offsets)
        offsets.setflags(write=False)
        degrees.setflags(write=False)
        object.__setattr__(self, "_offsets_i64", offsets)
        object.__setattr__(self, "_degrees", degrees)

    @property
    def out_degrees(self) -> np.ndarray:
        """Per-vertex neighbor counts, int64."""
        return self._degrees

    def out_degree(self, v: int) -> int:
        return int(self._degrees[v])

    def neighbors(self, v: int) -> np.ndarray:
        start, stop = self._offsets_i64[v], self._offsets_i64[v + 1]
        return self.col_indices[start:stop]

    @classmethod
    def from_edges(cls, num_vertices: int, src: np.ndarray, dst: np.ndarray) -> "CsrGraph":
        """Build CSR from parallel edge arrays; per-source edge order is kept."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.shape != dst.shape:
            raise ValueError("src and dst must have the same length")
        counts = np.bincount(src, minlength=num_vertices) if len(src) else np.zeros(num_vertices, dtype=np.int64)
        row_offsets = np.zeros(num_vertices + 1, dtype=np.uint64)
        np.cumsum(counts, out=row_offsets[1:])
        order = np.argsort(src, kind="stable")
        return cls(num_vertices, len(src), row_offsets, dst[order].astype(np.uint32))


def save_csr(graph: CsrGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(graph.num_vertices, graph.num_edges))
        fh.write(graph.row_offsets.astype("<u8").tobytes())
        fh.write(graph.col_indices.astype("<u4").tobytes())


def load_csr(path) -> CsrGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(MAGIC) + _HEADER.size
    if len(data) < head:
        raise HeaderError(f"file too short for header: {len(data)} bytes")
    if data[: len(MAGIC)] != MAGIC:
        raise HeaderError(f"bad magic bytes {data[:len(MAGIC)]!r}")
    num_vertices, num_edges = _HEADER.unpack_from(data, len(MAGIC))
    offsets_bytes = 8 * (num_vertices + 1)
    cols_bytes = 4 * num_edges
    if len(data) < head + offsets_bytes:
        raise TruncatedArrayError("row offset array is truncated")
    if len(data) < head + offsets_bytes + cols_bytes:
        raise TruncatedArrayError(
            f"column array is truncated: header claims {num_edges} edges"
        )
    if len(data) > head + offsets_bytes + cols_bytes:
        raise TruncatedArrayError("trailing bytes after declared arrays")
    row_offsets = np.frombuffer(data, dtype="<u8", count=num_vertices + 1, offset=head)
    col_indices = np.frombuffer(data, dtype="<u4", count=num_edges, offset=head + offsets_bytes)
    return CsrGraph(num_vertices, num_edges, row_offsets, col_indices)


def generate_synthetic(num_vertices: int, avg_degree: int, skew: float, seed: int) -> CsrGraph:
    """Deterministic power-law random graph.

    Every vertex gets exactly ``avg_degree`` out-edges whose targets are
    drawn from a Zipf-like distribution over vertex ids (low ids hottest).
    skew=0 is uniform. Self-loops are redirected to the next id; duplicate
    edges are allowed.
    """
    if num_vertices < 1:
        raise ValueError("num_vertices must be >= 1")
    if avg_degree < 0:
        raise ValueError("avg_degree must be >= 0")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    if num_vertices > 0xFFFFFFFF:
        raise ValueError("vertex ids must fit in 32 bits")
    if num_vertices == 1 and avg_degree > 0:
        raise ValueError("cannot generate edges without self-loops on a single vertex")

    num_edges = num_vertices * avg_degree
    if num_edges == 0:
        return CsrGraph(num_vertices, 0, np.zeros(num_vertices + 1, dtype=np.uint64), np.empty(0, dtype=np.uint32))

    weights = np.arange(1, num_vertices + 1, dtype=np.float64) ** (-skew)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    targets = np.searchsorted(cdf, rng.random(num_edges), side="right").astype(np.int64)
    src = np.repeat(np.arange(num_vertices, dtype=np.int64), avg_degree)
    loops = targets == src
    targets[loops] = (targets[loops] + 1) % num_vertices

    row_offsets = (np.arange(num_vertices + 1, dtype=np.uint64) * np.uint64(avg_degree))
    return CsrGraph(num_vertices, num_edges, row_offsets, targets.astype(np.uint32))


@dataclass(frozen=True)
class TrainingSet:
    """Mini-batch seed universe: a fixed fraction of the vertices."""

    vertex_ids: np.ndarray  # sorted unique int64 ids
    fraction: float

    def __post_init__(self):
        ids = np.asarray(self.vertex_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "vertex_ids", ids)

    def __len__(self) -> int:
        return len(self.vertex_ids)


def select_training_set(graph: CsrGraph, fraction: float, seed: int) -> TrainingSet:
    """Uniform sample without replacement of round(fraction * n) vertices."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = graph.num_vertices
    count = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    ids = np.sort(rng.permutation(n)[:count])
    return TrainingSet(ids, fraction)


@dataclass(frozen=True)
class FeatureSpec:
    """Feature rows matter only by size: dimension x bytes per element."""

    dimension: int
    bytes_per_element: int = 4

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("feature dimension must be >= 1")
        if self.bytes_per_element < 1:
            raise ValueError("bytes_per_element must be >= 1")

    @property
    def row_bytes(self) -> int:
        return self.dimension * self.bytes_per_element
