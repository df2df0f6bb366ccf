"""Mini-batch L-hop neighbor sampling and pre-sampling hotness estimation.

One keyed-hash sampling core drives both the hotness estimation pass and
the traffic simulator, so replaying a seed reproduces every neighbor-list
access and feature lookup exactly, independent of scheduling.

Counting rules:
  * topology hotness of v grows by the number of edges traversed out of v;
  * feature hotness of v grows by 1 per batch in which v appears at all
    (seeds included);
  * every frontier occurrence of v is one neighbor-list read costing
    t(v) = 1 + ceil(nc(v) * uint32_bytes / cache_line) transactions, the
    leading 1 being the row-offset fetch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import CsrGraph
from .hardware import CliqueLayout, HardwareSpec
from .rng import ROLE_SAMPLE, ROLE_SHUFFLE, KeyedRng


@dataclass(frozen=True)
class SamplingConfig:
    fanouts: tuple[int, ...]
    batch_size: int
    presample_epochs: int = 1
    seed: int = 0
    num_hops: int | None = None

    def __post_init__(self):
        fanouts = tuple(int(f) for f in self.fanouts)
        object.__setattr__(self, "fanouts", fanouts)
        hops = len(fanouts) if self.num_hops is None else self.num_hops
        object.__setattr__(self, "num_hops", hops)
        if hops != len(fanouts):
            raise ValueError("num_hops must equal len(fanouts)")
        if any(f < 1 for f in fanouts):
            raise ValueError("fanouts must all be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.presample_epochs < 0:
            raise ValueError("presample_epochs must be >= 0")


@dataclass(frozen=True)
class HopExpansion:
    """One hop of sampling: ragged (source -> sampled neighbors) lists."""

    sources: np.ndarray  # frontier vertices, with multiplicity
    offsets: np.ndarray  # int64, len(sources)+1 prefix over sampled counts
    neighbors: np.ndarray  # sampled neighbor ids, grouped by source

    def pairs(self):
        for i, src in enumerate(self.sources):
            yield int(src), self.neighbors[self.offsets[i] : self.offsets[i + 1]]

    @property
    def sampled_counts(self) -> np.ndarray:
        return np.diff(self.offsets)


@dataclass(frozen=True)
class BatchSample:
    seeds: np.ndarray
    hops: tuple[HopExpansion, ...]

    def distinct_vertices(self) -> np.ndarray:
        parts = [self.seeds] + [h.neighbors for h in self.hops]
        return np.unique(np.concatenate([np.asarray(p, dtype=np.int64) for p in parts]))


def _cum0(counts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=out[1:])
    return out


def _expand_frontier(graph: CsrGraph, frontier: np.ndarray, fanout: int, hop_stream: KeyedRng) -> HopExpansion:
    """Sample min(fanout, nc(v)) out-neighbors of every frontier vertex.

    Vertices with more neighbors than the fanout get a uniform
    without-replacement subset: each candidate edge is hashed under
    (frontier position, edge index) and the fanout smallest keys win.
    Vertices at or under the fanout take their full list in CSR order.
    """
    deg = graph.out_degrees[frontier]
    take = np.minimum(deg, fanout)
    out_offsets = _cum0(take)
    total = int(deg.sum())
    if total == 0:
        return HopExpansion(frontier, out_offsets, np.empty(0, dtype=np.int64))

    seg_starts = _cum0(deg)
    seg = np.repeat(np.arange(len(frontier), dtype=np.int64), deg)
    base = np.repeat(seg_starts[:-1], deg)
    within = np.arange(total, dtype=np.int64) - base
    flat = np.repeat(graph._offsets_i64[frontier], deg) + within
    cand = graph.col_indices[flat].astype(np.int64)

    needs_choice = deg > fanout
    if needs_choice.any():
        keys = hop_stream.hash_pairs(seg, within)
        full = np.repeat(~needs_choice, deg)
        # full-take segments keep CSR order: rank by position, not by hash
        keys[full] = within[full].astype(np.uint64)
        order = np.lexsort((keys, seg))
        rank = np.arange(total, dtype=np.int64) - base
        selected = cand[order[rank < np.repeat(take, deg)]]
    else:
        selected = cand
    return HopExpansion(frontier, out_offsets, selected)


def sample_batch(graph: CsrGraph, seeds: np.ndarray, cfg: SamplingConfig, stream: KeyedRng) -> BatchSample:
    """L-hop uniform neighbor sampling of one mini-batch.

    Deterministic given the stream: hop h uses stream.derive(h). The next
    frontier is the multiset of sampled neighbors, so a vertex sampled
    twice is expanded twice.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise ValueError("seeds must be non-empty")
    if seeds.min() < 0 or seeds.max() >= graph.num_vertices:
        raise ValueError("invalid seed vertex id")
    frontier = seeds
    hops = []
    for h, fanout in enumerate(cfg.fanouts):
        expansion = _expand_frontier(graph, frontier, fanout, stream.derive(h))
        hops.append(expansion)
        frontier = expansion.neighbors
        if len(frontier) == 0:
            # remaining hops see an empty frontier and contribute nothing
            for h2 in range(h + 1, len(cfg.fanouts)):
                hops.append(HopExpansion(frontier, np.zeros(1, dtype=np.int64), frontier))
            break
    return BatchSample(seeds, tuple(hops))


@dataclass
class HotnessMatrices:
    """Per-clique hotness rows (one per GPU) plus the sampling transaction total."""

    clique_id: int
    topo_hotness: np.ndarray  # int64, clique_size x num_vertices
    feat_hotness: np.ndarray  # int64, clique_size x num_vertices
    sampling_txn_total: int = 0

    @property
    def clique_size(self) -> int:
        return self.topo_hotness.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.topo_hotness.shape[1]


def accumulate_hotness(batch: BatchSample, gpu_row: int, hotness: HotnessMatrices) -> HotnessMatrices:
    """Fold one batch into the hotness rows of the sampling GPU."""
    n = hotness.num_vertices
    topo_row = hotness.topo_hotness[gpu_row]
    for hop in batch.hops:
        if len(hop.sources) == 0:
            continue
        counts = hop.sampled_counts
        topo_row += np.bincount(hop.sources, weights=counts, minlength=n).astype(np.int64)
    hotness.feat_hotness[gpu_row][batch.distinct_vertices()] += 1
    return hotness


def topology_access_cost(graph: CsrGraph, v: int, spec: HardwareSpec) -> int:
    """PCIe transactions for one CPU-side neighbor-list read of v."""
    nc = graph.out_degree(v)
    return 1 + (nc * spec.uint32_bytes + spec.cache_line_bytes - 1) // spec.cache_line_bytes


def transaction_cost_table(graph: CsrGraph, spec: HardwareSpec) -> np.ndarray:
    """t(v) for every vertex, int64."""
    nc = graph.out_degrees
    cls = spec.cache_line_bytes
    return 1 + (nc * spec.uint32_bytes + cls - 1) // cls


@dataclass
class GpuTrace:
    """Access counts of one GPU over one sampling epoch."""

    topo_reads: np.ndarray  # int64[n], neighbor-list reads (frontier occurrences)
    feat_lookups: np.ndarray  # int64[n], batch-distinct appearances
    edge_traversals: np.ndarray  # int64[n], edges sampled out of each vertex
    num_batches: int = 0


def run_sampling_epoch(
    graph: CsrGraph,
    seed_pools: list[np.ndarray],
    layout: CliqueLayout,
    cfg: SamplingConfig,
    seed: int,
    epoch: int,
) -> list[GpuTrace]:
    """Replay one epoch of local-shuffle batching and sampling on every GPU.

    Streams are keyed by (seed, epoch, clique, gpu-in-clique, batch, hop),
    so per-GPU work is order-independent and a reused seed reproduces the
    pre-sampling access sequence bit for bit.
    """
    n = graph.num_vertices
    root = KeyedRng(seed)
    traces = [
        GpuTrace(
            topo_reads=np.zeros(n, dtype=np.int64),
            feat_lookups=np.zeros(n, dtype=np.int64),
            edge_traversals=np.zeros(n, dtype=np.int64),
        )
        for _ in range(layout.num_gpus)
    ]
    for clique_idx, members in enumerate(layout.cliques):
        for local_idx, gpu in enumerate(members):
            pool = np.asarray(seed_pools[gpu], dtype=np.int64)
            if len(pool) == 0:
                continue
            trace = traces[gpu]
            gpu_stream = root.derive(epoch, clique_idx, local_idx)
            shuffled = pool[gpu_stream.derive(ROLE_SHUFFLE).permutation(len(pool))]
            for batch_idx, start in enumerate(range(0, len(shuffled), cfg.batch_size)):
                seeds = shuffled[start : start + cfg.batch_size]
                batch = sample_batch(graph, seeds, cfg, gpu_stream.derive(ROLE_SAMPLE, batch_idx))
                for hop in batch.hops:
                    if len(hop.sources) == 0:
                        continue
                    trace.topo_reads += np.bincount(hop.sources, minlength=n)
                    trace.edge_traversals += np.bincount(
                        hop.sources, weights=hop.sampled_counts, minlength=n
                    ).astype(np.int64)
                trace.feat_lookups[batch.distinct_vertices()] += 1
                trace.num_batches += 1
    return traces


def run_presampling(
    graph: CsrGraph,
    tablets,
    layout: CliqueLayout,
    cfg: SamplingConfig,
    spec: HardwareSpec,
) -> list[HotnessMatrices]:
    """Estimate hotness by sampling presample_epochs epochs from the tablets.

    ``tablets`` is either a TabletAssignment or a per-GPU list of seed
    pools. The per-clique transaction total charges t(v) for every
    neighbor-list read done by the clique's GPUs (topology is CPU-resident
    during this phase).
    """
    from .partition import TabletAssignment, assign_tablets

    pools = assign_tablets(tablets, layout) if isinstance(tablets, TabletAssignment) else list(tablets)
    if len(pools) != layout.num_gpus:
        raise ValueError("one seed pool per GPU required")
    for gpu, pool in enumerate(pools):
        if len(pool) == 0:
            warnings.warn(f"empty training tablet for gpu {gpu}; its hotness rows stay zero")

    n = graph.num_vertices
    t_cost = transaction_cost_table(graph, spec)
    result = [
        HotnessMatrices(
            clique_id=ci,
            topo_hotness=np.zeros((len(members), n), dtype=np.int64),
            feat_hotness=np.zeros((len(members), n), dtype=np.int64),
        )
        for ci, members in enumerate(layout.cliques)
    ]
    for epoch in range(cfg.presample_epochs):
        traces = run_sampling_epoch(graph, pools, layout, cfg, cfg.seed, epoch)
        for ci, members in enumerate(layout.cliques):
            hot = result[ci]
            for li, gpu in enumerate(members):
                trace = traces[gpu]
                hot.topo_hotness[li] += trace.edge_traversals
                hot.feat_hotness[li] += trace.feat_lookups
                hot.sampling_txn_total += int((trace.topo_reads * t_cost).sum())
    return result


def write_hotness(path, matrices: list[HotnessMatrices]) -> None:
    """Binary dump: per clique u32 clique_size, u64 n, hotness rows (u32), u64 txn total."""
    import struct

    with open(path, "wb") as fh:
        for hot in matrices:
            if hot.topo_hotness.max(initial=0) > 0xFFFFFFFF or hot.feat_hotness.max(initial=0) > 0xFFFFFFFF:
                raise OverflowError("hotness counts exceed u32 dump format")
            fh.write(struct.pack("<IQ", hot.clique_size, hot.num_vertices))
            fh.write(hot.topo_hotness.astype("<u4").tobytes())
            fh.write(hot.feat_hotness.astype("<u4").tobytes())
            fh.write(struct.pack("<Q", hot.sampling_txn_total))


def read_hotness(path) -> list[HotnessMatrices]:
    import struct

    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    clique_id = 0
    while pos < len(data):
        k_g, n = struct.unpack_from("<IQ", data, pos)
        pos += 12
        cells = k_g * n
        topo = np.frombuffer(data, dtype="<u4", count=cells, offset=pos).reshape(k_g, n).astype(np.int64)
        pos += 4 * cells
        feat = np.frombuffer(data, dtype="<u4", count=cells, offset=pos).reshape(k_g, n).astype(np.int64)
        pos += 4 * cells
        (txn,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        out.append(HotnessMatrices(clique_id, topo, feat, int(txn)))
        clique_id += 1
    return out
