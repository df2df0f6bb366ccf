"""Hierarchical partitioning: inter-clique edge-cut splits, intra-clique tablets.

The inter-clique stage is a streaming linear-deterministic-greedy placement
(vertices streamed in BFS order from seeded roots, scored by neighbors
already placed and penalized by partition fullness) followed by bounded
boundary refinement that only accepts cut-reducing moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import CsrGraph, TrainingSet
from .hardware import CliqueLayout
from .rng import KeyedRng, mix64_array


@dataclass(frozen=True)
class Partitioning:
    """Total assignment of vertices to partitions [0, num_parts)."""

    assignments: np.ndarray  # int32, length num_vertices
    num_parts: int

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int32)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    def part_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_parts)


def _undirected_csr(graph: CsrGraph) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency with out- and in-edges merged (multiplicity kept)."""
    n = graph.num_vertices
    src = np.repeat(np.arange(n, dtype=np.int64), graph.out_degrees)
    dst = graph.col_indices.astype(np.int64)
    both_src = np.concatenate([src, dst])
    both_dst = np.concatenate([dst, src])
    counts = np.bincount(both_src, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    order = np.argsort(both_src, kind="stable")
    return offsets, both_dst[order]


def _bfs_stream_order(n: int, offsets: np.ndarray, cols: np.ndarray, seed: int) -> np.ndarray:
    """Level-order BFS from seeded roots; keeps communities contiguous."""
    root_order = KeyedRng(seed).derive(0x5EED).permutation(n)
    visited = np.zeros(n, dtype=bool)
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for root in root_order:
        if visited[root]:
            continue
        frontier = np.array([root], dtype=np.int64)
        visited[root] = True
        while len(frontier):
            out[pos : pos + len(frontier)] = frontier
            pos += len(frontier)
            nxt_all = _gather_neighbors(frontier, offsets, cols)
            if len(nxt_all) == 0:
                break
            nxt = np.unique(nxt_all)
            nxt = nxt[~visited[nxt]]
            visited[nxt] = True
            frontier = nxt
    return out


def _gather_neighbors(frontier: np.ndarray, offsets: np.ndarray, cols: np.ndarray) -> np.ndarray:
    deg = offsets[frontier + 1] - offsets[frontier]
    total = int(deg.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.repeat(offsets[frontier], deg)
    base = np.repeat(np.cumsum(deg) - deg, deg)
    return cols[starts + (np.arange(total) - base)]


def partition_inter_clique(
    graph: CsrGraph,
    num_parts: int,
    epsilon: float = 0.05,
    seed: int = 0,
    refine_passes: int = 2,
) -> Partitioning:
    """Balanced edge-cut-minimizing streaming partition, deterministic per seed."""
    n = graph.num_vertices
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    if num_parts > n:
        raise ValueError(f"num_parts {num_parts} exceeds num_vertices {n}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if num_parts == 1:
        return Partitioning(np.zeros(n, dtype=np.int32), 1)

    capacity = int((1.0 + epsilon) * math.ceil(n / num_parts))
    capacity = max(capacity, math.ceil(n / num_parts))
    offsets, cols = _undirected_csr(graph)
    order = _bfs_stream_order(n, offsets, cols, seed)

    assignment = np.full(n, -1, dtype=np.int32)
    sizes = np.zeros(num_parts, dtype=np.int64)
    tie = np.arange(num_parts)
    for v in order:
        nbrs = cols[offsets[v] : offsets[v + 1]]
        nbrs = nbrs[nbrs != v]
        placed = assignment[nbrs]
        counts = np.bincount(placed[placed >= 0], minlength=num_parts)
        score = counts * (1.0 - sizes / capacity)
        score[sizes >= capacity] = -np.inf
        # best score, then least loaded, then lowest index
        best = np.lexsort((tie, sizes, -score))[0]
        assignment[v] = best
        sizes[best] += 1

    for _ in range(refine_passes):
        before = _cut_count(graph, assignment)
        _refine_pass(graph, offsets, cols, assignment, sizes, capacity, num_parts)
        after = _cut_count(graph, assignment)
        assert after <= before, "refinement pass increased the edge cut"
        if after == before:
            break
    return Partitioning(assignment, num_parts)


def _refine_pass(graph, offsets, cols, assignment, sizes, capacity, num_parts) -> None:
    src = np.repeat(np.arange(graph.num_vertices, dtype=np.int64), graph.out_degrees)
    dst = graph.col_indices.astype(np.int64)
    cross = assignment[src] != assignment[dst]
    boundary = np.unique(np.concatenate([src[cross], dst[cross]]))
    for v in boundary:
        nbrs = cols[offsets[v] : offsets[v + 1]]
        nbrs = nbrs[nbrs != v]
        if len(nbrs) == 0:
            continue
        counts = np.bincount(assignment[nbrs], minlength=num_parts)
        current = assignment[v]
        gain = counts - counts[current]
        gain[sizes >= capacity] = -1
        gain[current] = 0
        target = int(np.argmax(gain))
        if gain[target] > 0:
            assignment[v] = target
            sizes[current] -= 1
            sizes[target] += 1


def _cut_count(graph: CsrGraph, assignment: np.ndarray) -> int:
    if graph.num_edges == 0:
        return 0
    src = np.repeat(np.arange(graph.num_vertices, dtype=np.int64), graph.out_degrees)
    return int(np.count_nonzero(assignment[src] != assignment[graph.col_indices.astype(np.int64)]))


def edge_cut_ratio(graph: CsrGraph, partitioning: Partitioning) -> float:
    """Fraction of directed edges whose endpoints lie in different partitions."""
    if graph.num_edges == 0:
        return 0.0
    return _cut_count(graph, partitioning.assignments) / graph.num_edges


@dataclass(frozen=True)
class TabletAssignment:
    """Per-clique, per-GPU disjoint training-vertex pools."""

    tablets: tuple[tuple[np.ndarray, ...], ...]  # [clique][gpu_in_clique]


def split_intra_clique(
    training: TrainingSet, partitioning: Partitioning, layout: CliqueLayout
) -> TabletAssignment:
    """Hash each partition's training vertices into per-GPU tablets.

    A stateless integer hash of the vertex id picks the tablet; a balancing
    pass then moves overflow vertices round-robin so tablet sizes within a
    clique differ by at most one.
    """
    if partitioning.num_parts != layout.clique_count:
        raise ValueError("partition count must equal the clique count")
    k_g = layout.clique_size
    out = []
    for clique in range(layout.clique_count):
        ids = training.vertex_ids[partitioning.assignments[training.vertex_ids] == clique]
        slots = (mix64_array(ids.astype(np.uint64)) % np.uint64(k_g)).astype(np.int64)
        lists = [list(ids[slots == t]) for t in range(k_g)]

        base, rem = divmod(len(ids), k_g)
        quotas = [base + 1 if t < rem else base for t in range(k_g)]
        surplus: list[int] = []
        for t in range(k_g):
            if len(lists[t]) > quotas[t]:
                surplus.extend(lists[t][quotas[t] :])
                lists[t] = lists[t][: quotas[t]]
        for t in range(k_g):
            while len(lists[t]) < quotas[t]:
                lists[t].append(surplus.pop(0))
        out.append(tuple(np.array(lst, dtype=np.int64) for lst in lists))
    return TabletAssignment(tuple(out))


def assign_tablets(tablets: TabletAssignment, layout: CliqueLayout) -> list[np.ndarray]:
    """Bind tablet [i][j] to the j-th GPU of clique i: per-GPU seed pools."""
    if len(tablets.tablets) != layout.clique_count:
        raise ValueError("tablet cliques do not match layout")
    pools: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * layout.num_gpus
    for ci, members in enumerate(layout.cliques):
        if len(tablets.tablets[ci]) != len(members):
            raise ValueError("tablet count does not match GPUs in clique")
        for li, gpu in enumerate(members):
            pools[gpu] = tablets.tablets[ci][li]
    return pools


def dump_partitioning(partitioning: Partitioning, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, p in enumerate(partitioning.assignments):
            fh.write(f"{v} {p}\n")


def dump_tablets(tablets: TabletAssignment, layout: CliqueLayout, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ci in range(layout.clique_count):
            for li in range(layout.clique_size):
                for v in tablets.tablets[ci][li]:
                    fh.write(f"{v} {ci} {li}\n")
