"""Multi-GPU server model: NVLink adjacency, clique detection, byte constants.

GPUs inside one NVLink clique can serve each other's cache without touching
PCIe, so the clique layout is the unit all cache planning works in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class HeterogeneousTopologyError(ValueError):
    """The NVLink matrix decomposes into cliques of unequal size."""


@dataclass(frozen=True)
class NvlinkMatrix:
    """Symmetric boolean GPU adjacency; the diagonal is always true."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if not np.all(np.diagonal(adj)):
            raise ValueError("adjacency diagonal must be true (a GPU reaches itself)")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _max_clique_mask(nbr: list[int], candidates: int) -> int:
    """Maximum clique of the induced subgraph, as a vertex bitmask.

    Branch and bound over candidates in ascending id order; the first
    maximum found is the lexicographically smallest one, which fixes the
    tie-breaking deterministically.
    """
    best = 0
    best_size = 0

    def dfs(current: int, size: int, cand: int) -> None:
        nonlocal best, best_size
        if size > best_size:
            best, best_size = current, size
        while cand:
            if size + _popcount(cand) <= best_size:
                return
            low = cand & -cand
            v = low.bit_length() - 1
            cand ^= low
            dfs(current | low, size + 1, cand & nbr[v])

    dfs(0, 0, candidates)
    return best


@dataclass(frozen=True)
class CliqueLayout:
    """Partition of the GPU set into equal-size NVLink cliques."""

    cliques: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        cliques = tuple(tuple(int(g) for g in c) for c in self.cliques)
        object.__setattr__(self, "cliques", cliques)
        flat = [g for c in cliques for g in c]
        if len(flat) != len(set(flat)):
            raise ValueError("cliques must be disjoint")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("cliques must cover GPU ids 0..N-1 exactly")
        sizes = {len(c) for c in cliques}
        if len(sizes) > 1:
            raise HeterogeneousTopologyError(f"clique sizes differ: {sorted(len(c) for c in cliques)}")

    @property
    def num_gpus(self) -> int:
        return sum(len(c) for c in self.cliques)

    @property
    def clique_count(self) -> int:
        return len(self.cliques)

    @property
    def clique_size(self) -> int:
        return len(self.cliques[0]) if self.cliques else 0

    def gpu_position(self, gpu: int) -> tuple[int, int]:
        """(clique index, local index) of a global GPU id."""
        for ci, members in enumerate(self.cliques):
            for li, g in enumerate(members):
                if g == gpu:
                    return ci, li
        raise KeyError(f"gpu {gpu} not in layout")


def detect_cliques(matrix: NvlinkMatrix) -> CliqueLayout:
    """Greedily peel maximum cliques off the GPU set until all are assigned.

    Unequal clique sizes are rejected: the planning steps downstream assume
    a uniform GPUs-per-clique count.
    """
    n = matrix.size
    adj = matrix.adjacency
    nbr = []
    for v in range(n):
        bits = 0
        for u in range(n):
            if u != v and adj[v, u]:
                bits |= 1 << u
        nbr.append(bits)

    remaining = (1 << n) - 1
    cliques: list[tuple[int, ...]] = []
    while remaining:
        mask = _max_clique_mask(nbr, remaining)
        members = tuple(v for v in range(n) if mask >> v & 1)
        cliques.append(members)
        remaining &= ~mask
    cliques.sort(key=lambda c: c[0])

    sizes = {len(c) for c in cliques}
    if len(sizes) > 1:
        raise HeterogeneousTopologyError(
            f"NVLink matrix decomposes into unequal cliques: sizes {sorted(len(c) for c in cliques)}"
        )
    return CliqueLayout(tuple(cliques))


def block_matrix(gpu_count: int, clique_size: int) -> NvlinkMatrix:
    """NVLink matrix made of disjoint fully-connected blocks."""
    if gpu_count % clique_size:
        raise ValueError("gpu_count must be a multiple of clique_size")
    adj = np.zeros((gpu_count, gpu_count), dtype=bool)
    for start in range(0, gpu_count, clique_size):
        adj[start : start + clique_size, start : start + clique_size] = True
    return NvlinkMatrix(adj)


def block_layout(gpu_count: int, clique_size: int) -> CliqueLayout:
    if gpu_count % clique_size:
        raise ValueError("gpu_count must be a multiple of clique_size")
    cliques = tuple(
        tuple(range(start, start + clique_size)) for start in range(0, gpu_count, clique_size)
    )
    return CliqueLayout(cliques)


@dataclass(frozen=True)
class HardwareSpec:
    """Server parameters the cost model and simulator charge against."""

    layout: CliqueLayout
    clique_budget_bytes: int
    cache_line_bytes: int = 64
    uint32_bytes: int = 4
    uint64_bytes: int = 8
    float32_bytes: int = 4


def validate_spec(spec: HardwareSpec) -> list[str]:
    """Report every violated invariant; an empty list means the spec is valid."""
    problems = []
    if spec.clique_budget_bytes <= 0:
        problems.append("budget must be positive")
    cls = spec.cache_line_bytes
    if cls <= 0 or cls & (cls - 1):
        problems.append("cache line not a power of two")
    for name in ("uint32_bytes", "uint64_bytes", "float32_bytes"):
        if getattr(spec, name) <= 0:
            problems.append(f"{name} must be positive")
    if spec.layout.clique_count == 0:
        problems.append("layout must contain at least one clique")
    return problems


def load_hardware_config(path) -> HardwareSpec:
    """Parse the key-value hardware config file.

    Format: one `key: value` pair per line, `#` comments allowed; the
    `nvlink_matrix:` key is followed by gpu_count rows of 0/1 entries.
    """
    values: dict[str, int] = {}
    rows: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]

    i = 0
    while i < len(lines):
        line = lines[i]
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "nvlink_matrix":
            count = values.get("gpu_count")
            if count is None:
                raise ValueError("gpu_count must appear before nvlink_matrix")
            if len(lines) - i - 1 < count:
                raise ValueError("nvlink_matrix has fewer rows than gpu_count")
            for j in range(count):
                row = lines[i + 1 + j].replace(" ", "")
                rows.append([int(ch) for ch in row])
            i += 1 + count
            continue
        if not value:
            raise ValueError(f"missing value for config key {key!r}")
        values[key] = int(value)
        i += 1

    for required in ("gpu_count", "clique_budget_bytes"):
        if required not in values:
            raise ValueError(f"hardware config missing key {required!r}")
    if len(rows) != values["gpu_count"]:
        raise ValueError("nvlink_matrix row count does not match gpu_count")

    matrix = NvlinkMatrix(np.array(rows, dtype=bool))
    layout = detect_cliques(matrix)
    return HardwareSpec(
        layout=layout,
        clique_budget_bytes=values["clique_budget_bytes"],
        cache_line_bytes=values.get("cache_line_bytes", 64),
    )


def save_hardware_config(spec: HardwareSpec, path) -> None:
    n = spec.layout.num_gpus
    adj = np.zeros((n, n), dtype=int)
    for members in spec.layout.cliques:
        for a in members:
            for b in members:
                adj[a, b] = 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"gpu_count: {n}\n")
        fh.write(f"clique_budget_bytes: {spec.clique_budget_bytes}\n")
        fh.write(f"cache_line_bytes: {spec.cache_line_bytes}\n")
        fh.write("nvlink_matrix:\n")
        for row in adj:
            fh.write(" ".join(str(x) for x in row) + "\n")
