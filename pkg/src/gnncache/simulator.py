"""Transaction-exact replay of sampling epochs against a static multi-GPU cache.

Counting rules per access:
  * neighbor-list read of v: free on a local hit; t(v) NVLink transactions
    on a clique-peer hit; t(v) PCIe transactions from the CPU otherwise;
  * feature lookup (one per distinct vertex per batch): free locally,
    ceil(row/CLS) transactions from a peer or from the CPU.
Peer traffic is tracked for the transfer matrix but excluded from the PCIe
objective, which is what the planner minimizes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import CsrGraph, FeatureSpec, TrainingSet
from .hardware import CliqueLayout, HardwareSpec, block_layout
from .partition import assign_tablets, partition_inter_clique, split_intra_clique
from .planner import (
    CacheAssignment,
    build_candidate_orders,
    distribute_prefix,
    feature_row_transactions,
    hotness_descending_order,
    materialize_assignment,
    search_optimal_plan,
)
from .rng import derive_seed
from .sampling import (
    GpuTrace,
    HotnessMatrices,
    SamplingConfig,
    run_presampling,
    run_sampling_epoch,
    transaction_cost_table,
)

POLICY_HIERARCHICAL = "legion-hierarchical"
POLICY_REPLICATED = "gnnlab-replicated"
POLICY_QUIVER = "quiver-plus"
POLICY_PAGRAPH = "pagraph-plus"
POLICY_VARIANTS = (POLICY_HIERARCHICAL, POLICY_REPLICATED, POLICY_QUIVER, POLICY_PAGRAPH)

# policies that shuffle the training set globally instead of per partition
_GLOBAL_SHUFFLE = (POLICY_REPLICATED, POLICY_QUIVER)
# policies that do not share cache over NVLink
_NO_NVLINK = (POLICY_REPLICATED, POLICY_PAGRAPH)


@dataclass(frozen=True)
class CachePolicy:
    """A cache strategy plus its per-GPU capacity parameter.

    Exactly one of cache_ratio (fraction of |V| feature rows per GPU) or
    budget_bytes (bytes per GPU) sizes the cache; delta_alpha only matters
    for the hierarchical policy's plan search.
    """

    variant: str
    cache_ratio: float | None = None
    budget_bytes: int | None = None
    delta_alpha: float = 0.01

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.cache_ratio is not None and self.budget_bytes is not None:
            raise ValueError("give cache_ratio or budget_bytes, not both")

    def per_gpu_bytes(self, graph: CsrGraph, feat: FeatureSpec, spec: HardwareSpec | None = None) -> int:
        if self.cache_ratio is not None:
            return int(round(self.cache_ratio * graph.num_vertices)) * feat.row_bytes
        if self.budget_bytes is not None:
            return self.budget_bytes
        if spec is None:
            raise ValueError("policy has no size parameter and no hardware budget to fall back on")
        return spec.clique_budget_bytes // spec.layout.clique_size

    def per_gpu_rows(self, graph: CsrGraph, feat: FeatureSpec, spec: HardwareSpec) -> int:
        return self.per_gpu_bytes(graph, feat, spec) // feat.row_bytes


def effective_layout(policy: CachePolicy, layout: CliqueLayout) -> CliqueLayout:
    """Baselines that ignore NVLink run with every GPU in its own clique."""
    if policy.variant in _NO_NVLINK:
        return block_layout(layout.num_gpus, 1)
    return layout


@dataclass
class TrafficReport:
    """Measured per-GPU traffic and cache hits for one simulated epoch."""

    num_gpus: int
    sampling_cpu_txn: np.ndarray
    sampling_peer_txn: np.ndarray
    feature_cpu_txn: np.ndarray
    feature_peer_txn: np.ndarray
    topo_reads: np.ndarray
    topo_local_hits: np.ndarray
    topo_peer_hits: np.ndarray
    feat_lookups: np.ndarray
    feat_local_hits: np.ndarray
    feat_peer_hits: np.ndarray
    traffic_matrix: np.ndarray  # int64 (num_gpus, num_gpus + 1); last column = CPU

    @property
    def topo_hit_rate(self) -> np.ndarray:
        hits = self.topo_local_hits + self.topo_peer_hits
        return np.divide(hits, self.topo_reads, out=np.zeros(self.num_gpus), where=self.topo_reads > 0)

    @property
    def feat_hit_rate(self) -> np.ndarray:
        hits = self.feat_local_hits + self.feat_peer_hits
        return np.divide(hits, self.feat_lookups, out=np.zeros(self.num_gpus), where=self.feat_lookups > 0)

    @property
    def total_cpu_txn(self) -> int:
        return int(self.sampling_cpu_txn.sum() + self.feature_cpu_txn.sum())


def _membership(vertex_lists: list[np.ndarray], members: tuple[int, ...], n: int) -> np.ndarray:
    mask = np.zeros((len(members), n), dtype=bool)
    for li, gpu in enumerate(members):
        mask[li, vertex_lists[gpu]] = True
    return mask


def account_assignment(
    traces: list[GpuTrace],
    assignment: CacheAssignment,
    layout: CliqueLayout,
    graph: CsrGraph,
    spec: HardwareSpec,
    feat: FeatureSpec,
) -> TrafficReport:
    """Charge one epoch's access trace against a cache assignment."""
    n = graph.num_vertices
    num_gpus = layout.num_gpus
    t_cost = transaction_cost_table(graph, spec)
    row_txns = feature_row_transactions(feat, spec)

    report = TrafficReport(
        num_gpus=num_gpus,
        sampling_cpu_txn=np.zeros(num_gpus, dtype=np.int64),
        sampling_peer_txn=np.zeros(num_gpus, dtype=np.int64),
        feature_cpu_txn=np.zeros(num_gpus, dtype=np.int64),
        feature_peer_txn=np.zeros(num_gpus, dtype=np.int64),
        topo_reads=np.zeros(num_gpus, dtype=np.int64),
        topo_local_hits=np.zeros(num_gpus, dtype=np.int64),
        topo_peer_hits=np.zeros(num_gpus, dtype=np.int64),
        feat_lookups=np.zeros(num_gpus, dtype=np.int64),
        feat_local_hits=np.zeros(num_gpus, dtype=np.int64),
        feat_peer_hits=np.zeros(num_gpus, dtype=np.int64),
        traffic_matrix=np.zeros((num_gpus, num_gpus + 1), dtype=np.int64),
    )

    for members in layout.cliques:
        k_g = len(members)
        topo_mask = _membership(assignment.topo_vertices, members, n)
        feat_mask = _membership(assignment.feat_vertices, members, n)
        topo_any = topo_mask.any(axis=0)
        feat_any = feat_mask.any(axis=0)
        # serving peer = first clique member holding the vertex
        topo_server = np.argmax(topo_mask, axis=0)
        feat_server = np.argmax(feat_mask, axis=0)

        for li, gpu in enumerate(members):
            trace = traces[gpu]

            reads = trace.topo_reads
            weighted = reads * t_cost
            local = topo_mask[li]
            peer = topo_any & ~local
            report.topo_reads[gpu] = reads.sum()
            report.topo_local_hits[gpu] = reads[local].sum()
            report.topo_peer_hits[gpu] = reads[peer].sum()
            cpu_sampling = int(weighted.sum() - weighted[topo_any].sum())
            report.sampling_cpu_txn[gpu] = cpu_sampling
            report.sampling_peer_txn[gpu] = int(weighted[peer].sum())
            peer_by_server = np.bincount(topo_server[peer], weights=weighted[peer], minlength=k_g)
            for lj, src_gpu in enumerate(members):
                report.traffic_matrix[gpu, src_gpu] += int(peer_by_server[lj])

            lookups = trace.feat_lookups
            fweighted = lookups * row_txns
            flocal = feat_mask[li]
            fpeer = feat_any & ~flocal
            report.feat_lookups[gpu] = lookups.sum()
            report.feat_local_hits[gpu] = lookups[flocal].sum()
            report.feat_peer_hits[gpu] = lookups[fpeer].sum()
            cpu_feature = int(fweighted.sum() - fweighted[feat_any].sum())
            report.feature_cpu_txn[gpu] = cpu_feature
            report.feature_peer_txn[gpu] = int(fweighted[fpeer].sum())
            fpeer_by_server = np.bincount(feat_server[fpeer], weights=fweighted[fpeer], minlength=k_g)
            for lj, src_gpu in enumerate(members):
                report.traffic_matrix[gpu, src_gpu] += int(fpeer_by_server[lj])

            report.traffic_matrix[gpu, num_gpus] += cpu_sampling + cpu_feature
    return report


def simulate_epoch(
    graph: CsrGraph,
    seeds_per_gpu: list[np.ndarray],
    cfg: SamplingConfig,
    assignment: CacheAssignment,
    layout: CliqueLayout,
    spec: HardwareSpec,
    feat: FeatureSpec,
    seed: int,
    epoch: int = 0,
) -> TrafficReport:
    """Replay one epoch and count every transaction against the cache.

    Passing the pre-sampling seed (with epoch 0) reproduces the
    pre-sampling access stream exactly; any other seed gives an
    independent validation epoch.
    """
    for lists in (assignment.topo_vertices, assignment.feat_vertices):
        for arr in lists:
            if len(arr) and (arr.min() < 0 or arr.max() >= graph.num_vertices):
                raise ValueError("cache assignment references invalid vertices")
    traces = run_sampling_epoch(graph, seeds_per_gpu, layout, cfg, seed, epoch)
    return account_assignment(traces, assignment, layout, graph, spec, feat)


@dataclass(frozen=True)
class HitRateSummary:
    per_gpu_topo: np.ndarray
    per_gpu_feat: np.ndarray
    aggregate_topo: float
    aggregate_feat: float
    topo_spread: float
    feat_spread: float


def hit_rate_summary(report: TrafficReport) -> HitRateSummary:
    """Per-GPU and aggregate hit rates plus the max-min imbalance spread."""
    topo = report.topo_hit_rate
    feats = report.feat_hit_rate
    total_reads = report.topo_reads.sum()
    total_lookups = report.feat_lookups.sum()
    agg_topo = float((report.topo_local_hits + report.topo_peer_hits).sum() / total_reads) if total_reads else 0.0
    agg_feat = float((report.feat_local_hits + report.feat_peer_hits).sum() / total_lookups) if total_lookups else 0.0
    return HitRateSummary(
        per_gpu_topo=topo,
        per_gpu_feat=feats,
        aggregate_topo=agg_topo,
        aggregate_feat=agg_feat,
        topo_spread=float(topo.max() - topo.min()) if len(topo) else 0.0,
        feat_spread=float(feats.max() - feats.min()) if len(feats) else 0.0,
    )


def policy_seed_pools(
    policy: CachePolicy,
    graph: CsrGraph,
    training: TrainingSet,
    layout: CliqueLayout,
    seed: int,
    epsilon: float = 0.05,
) -> list[np.ndarray]:
    """Per-GPU mini-batch seed pools under the policy's shuffling discipline."""
    num_gpus = layout.num_gpus
    if policy.variant in _GLOBAL_SHUFFLE:
        perm = np.random.default_rng(derive_seed(seed, 0x51)).permutation(training.vertex_ids)
        return [np.sort(perm[g::num_gpus]) for g in range(num_gpus)]
    if policy.variant == POLICY_PAGRAPH:
        parts = partition_inter_clique(graph, num_gpus, epsilon, derive_seed(seed, 0x52))
        ids = training.vertex_ids
        return [ids[parts.assignments[ids] == g] for g in range(num_gpus)]
    parts = partition_inter_clique(graph, layout.clique_count, epsilon, derive_seed(seed, 0x52))
    tablets = split_intra_clique(training, parts, layout)
    return assign_tablets(tablets, layout)


def build_policy_cache(
    policy: CachePolicy,
    hotness: list[HotnessMatrices],
    layout: CliqueLayout,
    graph: CsrGraph,
    feat: FeatureSpec,
    spec: HardwareSpec,
) -> CacheAssignment:
    """Materialize the cache a policy would fill from the given hotness.

    gnnlab-replicated: one global hottest-row prefix, identical on every
    GPU. quiver-plus: a clique-size prefix of the global order, split
    inside each clique by local preference and replicated across cliques
    (with one clique this is exactly the hierarchical layout). pagraph-plus:
    each GPU independently caches its own hottest rows. legion-hierarchical:
    the plan-search result over each clique's own hotness.
    """
    n = graph.num_vertices
    num_gpus = layout.num_gpus
    rows_per_gpu = policy.per_gpu_rows(graph, feat, spec)

    if policy.variant == POLICY_HIERARCHICAL:
        orders, plans = [], []
        budget = policy.per_gpu_bytes(graph, feat, spec) * layout.clique_size
        for hot in hotness:
            o = build_candidate_orders(hot)
            plan, _ = search_optimal_plan(
                o, budget, policy.delta_alpha, graph, feat, spec, hot.sampling_txn_total
            )
            orders.append(o)
            plans.append(plan)
        return materialize_assignment(orders, plans, layout, graph, feat, spec)

    assignment = CacheAssignment.empty(num_gpus)
    global_feat = np.zeros(n, dtype=np.int64)
    for hot in hotness:
        global_feat += hot.feat_hotness.sum(axis=0)
    global_order = hotness_descending_order(global_feat)

    if policy.variant == POLICY_REPLICATED:
        prefix = global_order[: min(rows_per_gpu, n)]
        for gpu in range(num_gpus):
            assignment.feat_vertices[gpu] = prefix.copy()
            assignment.feat_bytes[gpu] = len(prefix) * feat.row_bytes
        return assignment

    if policy.variant == POLICY_QUIVER:
        if layout.clique_size == 1:
            warnings.warn("quiver-plus with single-GPU cliques degrades to gnnlab-replicated")
        for ci, members in enumerate(layout.cliques):
            k_g = len(members)
            prefix = global_order[: min(rows_per_gpu * k_g, n)]
            owner = np.argmax(hotness[ci].feat_hotness, axis=0).astype(np.int32)
            queues = distribute_prefix(prefix, owner, k_g)
            for li, gpu in enumerate(members):
                assignment.feat_vertices[gpu] = queues[li]
                assignment.feat_bytes[gpu] = len(queues[li]) * feat.row_bytes
        return assignment

    # pagraph-plus: per-GPU cache from that GPU's own hotness row
    for ci, members in enumerate(layout.cliques):
        for li, gpu in enumerate(members):
            order = hotness_descending_order(hotness[ci].feat_hotness[li])
            prefix = order[: min(rows_per_gpu, n)]
            assignment.feat_vertices[gpu] = prefix
            assignment.feat_bytes[gpu] = len(prefix) * feat.row_bytes
    return assignment


@dataclass
class PolicyRun:
    """Everything one policy produced on one configuration."""

    policy: CachePolicy
    layout: CliqueLayout
    pools: list[np.ndarray]
    hotness: list[HotnessMatrices]
    assignment: CacheAssignment
    report: TrafficReport


def run_policy_pipeline(
    policy: CachePolicy,
    graph: CsrGraph,
    training: TrainingSet,
    layout: CliqueLayout,
    cfg: SamplingConfig,
    spec: HardwareSpec,
    feat: FeatureSpec,
    master_seed: int,
    epsilon: float = 0.05,
) -> PolicyRun:
    """Seed pools, pre-sample, build the cache, and simulate one fresh epoch."""
    layout_eff = effective_layout(policy, layout)
    spec_eff = HardwareSpec(
        layout=layout_eff,
        clique_budget_bytes=policy.per_gpu_bytes(graph, feat, spec) * layout_eff.clique_size,
        cache_line_bytes=spec.cache_line_bytes,
        uint32_bytes=spec.uint32_bytes,
        uint64_bytes=spec.uint64_bytes,
        float32_bytes=spec.float32_bytes,
    )
    pools = policy_seed_pools(policy, graph, training, layout_eff, master_seed, epsilon)
    presample_cfg = SamplingConfig(
        fanouts=cfg.fanouts,
        batch_size=cfg.batch_size,
        presample_epochs=cfg.presample_epochs,
        seed=derive_seed(master_seed, 0x10),
    )
    hotness = run_presampling(graph, pools, layout_eff, presample_cfg, spec_eff)
    assignment = build_policy_cache(policy, hotness, layout_eff, graph, feat, spec_eff)
    report = simulate_epoch(
        graph,
        pools,
        presample_cfg,
        assignment,
        layout_eff,
        spec_eff,
        feat,
        seed=derive_seed(master_seed, 0x20),
    )
    return PolicyRun(policy, layout_eff, pools, hotness, assignment, report)


@dataclass(frozen=True)
class SweepPoint:
    gpu_count: int
    total_cpu_txn: int
    normalized: float


def sweep_gpus(
    policy: CachePolicy,
    gpu_counts: list[int],
    graph: CsrGraph,
    training: TrainingSet,
    cfg: SamplingConfig,
    feat: FeatureSpec,
    clique_size: int = 2,
    seed: int = 0,
    epsilon: float = 0.05,
    cache_line_bytes: int = 64,
) -> list[SweepPoint]:
    """Total CPU PCIe transactions across GPU counts, normalized to the smallest."""
    counts = sorted(gpu_counts)
    totals: list[int] = []
    for count in counts:
        size = min(clique_size, count)
        if count % size:
            raise ValueError(f"gpu count {count} incompatible with clique size {size}")
        layout = block_layout(count, size)
        spec = HardwareSpec(
            layout=layout,
            clique_budget_bytes=policy.per_gpu_bytes(graph, feat) * size,
            cache_line_bytes=cache_line_bytes,
        )
        run = run_policy_pipeline(
            policy, graph, training, layout, cfg, spec, feat, derive_seed(seed, count), epsilon
        )
        totals.append(run.report.total_cpu_txn)
    anchor = totals[0] if totals and totals[0] else 1
    return [
        SweepPoint(gpu_count=c, total_cpu_txn=t, normalized=t / anchor)
        for c, t in zip(counts, totals)
    ]


def write_report_csv(report: TrafficReport, path, provenance: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write("gpu,topo_hit_rate,feat_hit_rate,sampling_cpu_txn,feature_cpu_txn,feature_peer_txn\n")
        topo = report.topo_hit_rate
        feats = report.feat_hit_rate
        for gpu in range(report.num_gpus):
            fh.write(
                f"{gpu},{topo[gpu]:.6f},{feats[gpu]:.6f},"
                f"{report.sampling_cpu_txn[gpu]},{report.feature_cpu_txn[gpu]},{report.feature_peer_txn[gpu]}\n"
            )


def write_traffic_matrix_csv(report: TrafficReport, path, provenance: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        headers = ",".join([f"from_gpu{g}" for g in range(report.num_gpus)] + ["from_cpu"])
        fh.write(f"dest_gpu,{headers}\n")
        for gpu in range(report.num_gpus):
            row = ",".join(str(int(x)) for x in report.traffic_matrix[gpu])
            fh.write(f"{gpu},{row}\n")
