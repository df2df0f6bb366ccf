"""Cache-candidate ranking, PCIe-traffic cost model, and cache-plan search.

A clique's budget B is split into a topology share alpha*B and a feature
share (1-alpha)*B. Candidates are ranked by clique-wide hotness and each
vertex is owned by the GPU where it is locally hottest; prefix sums over
the ranked orders make every alpha grid point an O(log n) boundary lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import CsrGraph, FeatureSpec
from .hardware import CliqueLayout, HardwareSpec
from .sampling import HotnessMatrices


@dataclass(frozen=True)
class CandidateOrders:
    """Ranked cache candidates for one clique.

    topo_order/feat_order rank all vertices by accumulated hotness
    (descending, ties by ascending id). Owners are the argmax row of the
    hotness matrix (ties to the lowest GPU index); the per-GPU queues are
    the ranked orders filtered by owner, so they partition the vertex set.
    """

    clique_id: int
    topo_totals: np.ndarray  # int64[n], column sums of topology hotness
    feat_totals: np.ndarray
    topo_order: np.ndarray  # int64[n], vertex ids in cache-priority order
    feat_order: np.ndarray
    topo_owner: np.ndarray  # int32[n], owning GPU (local index) per vertex
    feat_owner: np.ndarray
    gpu_topo_queues: tuple[np.ndarray, ...]
    gpu_feat_queues: tuple[np.ndarray, ...]


def hotness_descending_order(totals: np.ndarray) -> np.ndarray:
    """Vertex ids sorted by hotness descending, ties by ascending id."""
    n = len(totals)
    return np.lexsort((np.arange(n), -totals.astype(np.int64)))


def build_candidate_orders(hotness: HotnessMatrices) -> CandidateOrders:
    """Rank clique cache candidates and assign each to its hottest GPU."""
    topo_totals = hotness.topo_hotness.sum(axis=0)
    feat_totals = hotness.feat_hotness.sum(axis=0)
    topo_order = hotness_descending_order(topo_totals)
    feat_order = hotness_descending_order(feat_totals)
    topo_owner = np.argmax(hotness.topo_hotness, axis=0).astype(np.int32)
    feat_owner = np.argmax(hotness.feat_hotness, axis=0).astype(np.int32)
    k_g = hotness.clique_size
    return CandidateOrders(
        clique_id=hotness.clique_id,
        topo_totals=topo_totals,
        feat_totals=feat_totals,
        topo_order=topo_order,
        feat_order=feat_order,
        topo_owner=topo_owner,
        feat_owner=feat_owner,
        gpu_topo_queues=tuple(topo_order[topo_owner[topo_order] == g] for g in range(k_g)),
        gpu_feat_queues=tuple(feat_order[feat_owner[feat_order] == g] for g in range(k_g)),
    )


@dataclass(frozen=True)
class CachePlan:
    """Budget split (B, alpha): topo_budget + feat_budget == budget_bytes."""

    budget_bytes: int
    alpha: float
    topo_budget: float
    feat_budget: float

    @classmethod
    def from_alpha(cls, budget_bytes: int, alpha: float) -> "CachePlan":
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        topo = budget_bytes * alpha
        return cls(budget_bytes, alpha, topo, budget_bytes - topo)


def topo_prefix_bytes(orders: CandidateOrders, graph: CsrGraph, spec: HardwareSpec) -> np.ndarray:
    """Cumulative cache bytes along the topology order (neighbor list + row pointer)."""
    deg = graph.out_degrees[orders.topo_order]
    return np.cumsum(deg * spec.uint32_bytes + spec.uint64_bytes)


def feat_prefix_bytes(orders: CandidateOrders, feat: FeatureSpec) -> np.ndarray:
    n = len(orders.feat_order)
    return np.arange(1, n + 1, dtype=np.int64) * feat.row_bytes


def boundary_topology(
    orders: CandidateOrders,
    topo_budget: float,
    graph: CsrGraph,
    spec: HardwareSpec,
    prefix: np.ndarray | None = None,
) -> int:
    """Longest prefix of the topology order whose byte total fits the budget."""
    if topo_budget < 0:
        raise ValueError("budget must be >= 0")
    sums = topo_prefix_bytes(orders, graph, spec) if prefix is None else prefix
    return int(np.searchsorted(sums, topo_budget, side="right"))


def boundary_feature(orders: CandidateOrders, feat_budget: float, feat: FeatureSpec) -> int:
    """Feature rows that fit the budget: floor(budget / row bytes), capped at n.

    Computed through the same prefix-sum binary search as the topology
    boundary so both code paths compare budgets identically.
    """
    if feat_budget < 0:
        raise ValueError("budget must be >= 0")
    sums = feat_prefix_bytes(orders, feat)
    return int(np.searchsorted(sums, feat_budget, side="right"))


def feature_row_transactions(feat: FeatureSpec, spec: HardwareSpec) -> int:
    """PCIe transactions to move one feature row: ceil(row bytes / cache line)."""
    return -(-feat.row_bytes // spec.cache_line_bytes)


@dataclass(frozen=True)
class TrafficEstimate:
    """Predicted per-epoch PCIe transactions under one cache plan."""

    sampling_txns: float  # traffic left after the topology cache
    feature_txns: int
    total_txns: float
    topo_reduction: float  # fraction of sampling traffic the cache removes
    feature_misses: int  # feature rows still fetched over PCIe
    topo_prefix_len: int
    feat_prefix_len: int


def _estimate_at(
    boundary_t: int,
    boundary_f: int,
    topo_hot_prefix: int,
    topo_hot_total: int,
    feat_hot_prefix: int,
    feat_hot_total: int,
    sampling_txn_total: int,
    row_txns: int,
) -> TrafficEstimate:
    # integer numerators keep the division a single correctly-rounded step
    if topo_hot_total > 0:
        reduction = topo_hot_prefix / topo_hot_total
        sampling = sampling_txn_total * (topo_hot_total - topo_hot_prefix) / topo_hot_total
    else:
        reduction = 0.0
        sampling = float(sampling_txn_total)
    misses = feat_hot_total - feat_hot_prefix
    feature = row_txns * misses
    return TrafficEstimate(
        sampling_txns=sampling,
        feature_txns=feature,
        total_txns=sampling + feature,
        topo_reduction=reduction,
        feature_misses=misses,
        topo_prefix_len=boundary_t,
        feat_prefix_len=boundary_f,
    )


def estimate_traffic(
    orders: CandidateOrders,
    plan: CachePlan,
    graph: CsrGraph,
    feat: FeatureSpec,
    spec: HardwareSpec,
    sampling_txn_total: int,
) -> TrafficEstimate:
    """Cost-model traffic for one (B, alpha) plan.

    Cached sets are prefixes of the clique-level orders; sampling traffic
    scales by the un-cached share of topology hotness, feature traffic is
    per-row transactions times the un-cached feature hotness.
    """
    b_t = boundary_topology(orders, plan.topo_budget, graph, spec)
    b_f = boundary_feature(orders, plan.feat_budget, feat)
    topo_prefix = int(orders.topo_totals[orders.topo_order[:b_t]].sum())
    feat_prefix = int(orders.feat_totals[orders.feat_order[:b_f]].sum())
    return _estimate_at(
        b_t,
        b_f,
        topo_prefix,
        int(orders.topo_totals.sum()),
        feat_prefix,
        int(orders.feat_totals.sum()),
        int(sampling_txn_total),
        feature_row_transactions(feat, spec),
    )


def alpha_grid(delta_alpha: float) -> list[float]:
    """The search grid {0, d, 2d, ...} with both endpoints 0 and 1 included."""
    if not 0.0 < delta_alpha <= 1.0:
        raise ValueError("delta_alpha must be in (0, 1]")
    steps = int(math.floor(1.0 / delta_alpha + 1e-9))
    grid = [i * delta_alpha for i in range(steps + 1)]
    if grid[-1] > 1.0:
        grid[-1] = 1.0
    if grid[-1] < 1.0 - 1e-12:
        grid.append(1.0)
    return grid


def search_optimal_plan(
    orders: CandidateOrders,
    budget_bytes: int,
    delta_alpha: float,
    graph: CsrGraph,
    feat: FeatureSpec,
    spec: HardwareSpec,
    sampling_txn_total: int,
) -> tuple[CachePlan, TrafficEstimate]:
    """Sweep the alpha grid via prefix sums and return the cheapest plan.

    All grid boundaries come from one pair of inclusive scans plus batched
    binary searches, and the winner (ties to the smaller alpha) is exactly
    what a sequential per-alpha evaluation returns.
    """
    grid = np.array(alpha_grid(delta_alpha))
    topo_budgets = grid * budget_bytes
    feat_budgets = budget_bytes - topo_budgets

    s_topo = topo_prefix_bytes(orders, graph, spec)
    s_feat = feat_prefix_bytes(orders, feat)
    b_t = np.searchsorted(s_topo, topo_budgets, side="right")
    b_f = np.searchsorted(s_feat, feat_budgets, side="right")

    topo_hot_cum = np.concatenate([[0], np.cumsum(orders.topo_totals[orders.topo_order])])
    feat_hot_cum = np.concatenate([[0], np.cumsum(orders.feat_totals[orders.feat_order])])
    topo_total = int(topo_hot_cum[-1])
    feat_total = int(feat_hot_cum[-1])
    row_txns = feature_row_transactions(feat, spec)

    best_idx = -1
    best: TrafficEstimate | None = None
    for i in range(len(grid)):
        est = _estimate_at(
            int(b_t[i]),
            int(b_f[i]),
            int(topo_hot_cum[b_t[i]]),
            topo_total,
            int(feat_hot_cum[b_f[i]]),
            feat_total,
            int(sampling_txn_total),
            row_txns,
        )
        if best is None or est.total_txns < best.total_txns:
            best, best_idx = est, i
    plan = CachePlan.from_alpha(budget_bytes, float(grid[best_idx]))
    return plan, best


def distribute_prefix(prefix: np.ndarray, owner_local: np.ndarray, clique_size: int) -> list[np.ndarray]:
    """Split a ranked vertex prefix into per-GPU queues by owner, keeping order."""
    owners = owner_local[prefix]
    return [prefix[owners == g] for g in range(clique_size)]


@dataclass
class CacheAssignment:
    """Materialized per-GPU cache contents (global GPU ids)."""

    num_gpus: int
    topo_vertices: list[np.ndarray]
    feat_vertices: list[np.ndarray]
    topo_bytes: list[int]
    feat_bytes: list[int]

    @classmethod
    def empty(cls, num_gpus: int) -> "CacheAssignment":
        nothing = [np.empty(0, dtype=np.int64) for _ in range(num_gpus)]
        return cls(num_gpus, nothing, list(nothing), [0] * num_gpus, [0] * num_gpus)

    def gpu_bytes(self, gpu: int) -> int:
        return self.topo_bytes[gpu] + self.feat_bytes[gpu]


def materialize_assignment(
    orders_by_clique: list[CandidateOrders],
    plans: list[CachePlan],
    layout: CliqueLayout,
    graph: CsrGraph,
    feat: FeatureSpec,
    spec: HardwareSpec,
) -> CacheAssignment:
    """Walk each clique's cached prefixes and place vertices on their owner GPUs."""
    if len(orders_by_clique) != layout.clique_count or len(plans) != layout.clique_count:
        raise ValueError("need one CandidateOrders and one CachePlan per clique")
    assignment = CacheAssignment.empty(layout.num_gpus)
    for ci, members in enumerate(layout.cliques):
        orders, plan = orders_by_clique[ci], plans[ci]
        b_t = boundary_topology(orders, plan.topo_budget, graph, spec)
        b_f = boundary_feature(orders, plan.feat_budget, feat)
        topo_queues = distribute_prefix(orders.topo_order[:b_t], orders.topo_owner, len(members))
        feat_queues = distribute_prefix(orders.feat_order[:b_f], orders.feat_owner, len(members))
        clique_total = 0
        for li, gpu in enumerate(members):
            tv, fv = topo_queues[li], feat_queues[li]
            t_bytes = int((graph.out_degrees[tv] * spec.uint32_bytes + spec.uint64_bytes).sum())
            f_bytes = len(fv) * feat.row_bytes
            assignment.topo_vertices[gpu] = tv
            assignment.feat_vertices[gpu] = fv
            assignment.topo_bytes[gpu] = t_bytes
            assignment.feat_bytes[gpu] = f_bytes
            clique_total += t_bytes + f_bytes
        if clique_total > plan.budget_bytes:
            raise AssertionError("materialized clique cache exceeds its budget")
    return assignment


def plan_report(
    layout: CliqueLayout,
    plans: list[CachePlan],
    estimates: list[TrafficEstimate],
    delta_alpha: float,
    tablet_sizes: list[list[int]] | None = None,
) -> dict:
    """JSON-ready per-clique plan summary."""
    cliques = []
    for ci in range(layout.clique_count):
        plan, est = plans[ci], estimates[ci]
        entry = {
            "clique": ci,
            "alpha": plan.alpha,
            "topo_budget_bytes": plan.topo_budget,
            "feat_budget_bytes": plan.feat_budget,
            "topo_prefix_len": est.topo_prefix_len,
            "feat_prefix_len": est.feat_prefix_len,
            "sampling_txns": est.sampling_txns,
            "feature_txns": est.feature_txns,
            "total_txns": est.total_txns,
        }
        if tablet_sizes is not None:
            entry["tablet_sizes"] = tablet_sizes[ci]
        cliques.append(entry)
    return {
        "delta_alpha": delta_alpha,
        "alpha_grid_points": len(alpha_grid(delta_alpha)),
        "cliques": cliques,
    }
