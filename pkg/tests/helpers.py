"""Shared test fixtures and independent oracles."""

from __future__ import annotations

import numpy as np

from gnncache.graph import CsrGraph
from gnncache.rng import ROLE_SAMPLE, ROLE_SHUFFLE, KeyedRng
from gnncache.sampling import HotnessMatrices, transaction_cost_table


def graph_from_edges(n, edges):
    if not edges:
        return CsrGraph.from_edges(n, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    src, dst = zip(*edges)
    return CsrGraph.from_edges(n, np.array(src), np.array(dst))


def chain_graph(n):
    """0 -> 1 -> ... -> n-1."""
    return graph_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    """Vertex 0 points at 1..leaves."""
    return graph_from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def random_graph(rng, n, max_degree):
    """Random directed graph with per-vertex degree in [0, max_degree]."""
    src, dst = [], []
    for v in range(n):
        deg = int(rng.integers(0, max_degree + 1))
        for _ in range(deg):
            t = int(rng.integers(0, n))
            if t == v:
                t = (t + 1) % n
            src.append(v)
            dst.append(t)
    if not src:
        return graph_from_edges(n, [])
    return CsrGraph.from_edges(n, np.array(src), np.array(dst))


def planted_partition_graph(community_sizes, intra_degree, cross_degree, skew, seed):
    """Dense Zipf-skewed communities with sparse cross edges, deterministic."""
    rng = np.random.default_rng(seed)
    starts = np.cumsum([0] + list(community_sizes))
    n = int(starts[-1])
    src, dst = [], []
    for c, size in enumerate(community_sizes):
        lo = int(starts[c])
        weights = np.arange(1, size + 1, dtype=np.float64) ** (-skew)
        cdf = np.cumsum(weights)
        cdf /= cdf[-1]
        for v in range(lo, lo + size):
            local = np.searchsorted(cdf, rng.random(intra_degree), side="right") + lo
            local[local == v] = lo + (local[local == v] - lo + 1) % size
            src.extend([v] * intra_degree)
            dst.extend(int(x) for x in local)
            for _ in range(cross_degree):
                t = int(rng.integers(0, n))
                if t == v:
                    t = (t + 1) % n
                src.append(v)
                dst.append(t)
    return CsrGraph.from_edges(n, np.array(src), np.array(dst))


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties."""

    def ranks(values):
        values = np.asarray(values, dtype=np.float64)
        order = np.argsort(values, kind="stable")
        r = np.empty(len(values))
        r[order] = np.arange(1, len(values) + 1)
        # average out ties
        for val in np.unique(values):
            mask = values == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    return float((rx * ry).sum() / denom) if denom else 0.0


# --- reference sampler: per-vertex Python mirror of the vectorized engine ---


def ref_expand(graph, frontier, fanout, hop_stream):
    """(source, chosen-neighbors) pairs for one hop, scalar logic."""
    pairs = []
    for pos, v in enumerate(frontier):
        nbrs = graph.neighbors(int(v)).astype(np.int64)
        deg = len(nbrs)
        if deg <= fanout:
            chosen = list(nbrs)
        else:
            keys = hop_stream.hash_pairs(
                np.full(deg, pos, dtype=np.int64), np.arange(deg, dtype=np.int64)
            )
            order = np.argsort(keys, kind="stable")[:fanout]
            chosen = list(nbrs[order])
        pairs.append((int(v), chosen))
    return pairs


def ref_sample_batch(graph, seeds, cfg, stream):
    """Per-hop (source, neighbors) pair lists for one batch."""
    frontier = [int(s) for s in seeds]
    hops = []
    for h, fanout in enumerate(cfg.fanouts):
        pairs = ref_expand(graph, frontier, fanout, stream.derive(h))
        hops.append(pairs)
        frontier = [v for _, chosen in pairs for v in chosen]
    return hops


def ref_presample(graph, pools, layout, cfg, spec):
    """Scalar recount of hotness matrices and per-clique transaction totals."""
    n = graph.num_vertices
    t_cost = transaction_cost_table(graph, spec)
    root = KeyedRng(cfg.seed)
    result = [
        HotnessMatrices(ci, np.zeros((len(m), n), dtype=np.int64), np.zeros((len(m), n), dtype=np.int64))
        for ci, m in enumerate(layout.cliques)
    ]
    for epoch in range(cfg.presample_epochs):
        for ci, members in enumerate(layout.cliques):
            hot = result[ci]
            for li, gpu in enumerate(members):
                pool = np.asarray(pools[gpu], dtype=np.int64)
                if len(pool) == 0:
                    continue
                gpu_stream = root.derive(epoch, ci, li)
                shuffled = pool[gpu_stream.derive(ROLE_SHUFFLE).permutation(len(pool))]
                for batch_idx, start in enumerate(range(0, len(shuffled), cfg.batch_size)):
                    seeds = shuffled[start : start + cfg.batch_size]
                    hops = ref_sample_batch(graph, seeds, cfg, gpu_stream.derive(ROLE_SAMPLE, batch_idx))
                    seen = set(int(s) for s in seeds)
                    for pairs in hops:
                        for src, chosen in pairs:
                            hot.topo_hotness[li][src] += len(chosen)
                            hot.sampling_txn_total += int(t_cost[src])
                            seen.update(chosen)
                    for v in seen:
                        hot.feat_hotness[li][v] += 1
    return result


# --- planner oracles ---


def linear_scan_boundary(costs, budget):
    """Longest prefix of per-item costs whose running total fits the budget."""
    total = 0
    for i, c in enumerate(costs):
        total += int(c)
        if total > budget:
            return i
    return len(costs)


def sequential_plan_search(orders, budget, grid, graph, feat, spec, txn_total):
    """Brute-force alpha sweep with linear-scan boundaries and scalar sums."""
    from gnncache.planner import feature_row_transactions

    deg = graph.out_degrees[orders.topo_order]
    topo_costs = deg * spec.uint32_bytes + spec.uint64_bytes
    feat_costs = np.full(len(orders.feat_order), feat.row_bytes, dtype=np.int64)
    topo_hot = orders.topo_totals[orders.topo_order]
    feat_hot = orders.feat_totals[orders.feat_order]
    topo_total = int(topo_hot.sum())
    feat_total = int(feat_hot.sum())
    row_txns = feature_row_transactions(feat, spec)

    best = None
    for alpha in grid:
        m_t = budget * alpha
        m_f = budget - m_t
        b_t = linear_scan_boundary(topo_costs, m_t)
        b_f = linear_scan_boundary(feat_costs, m_f)
        cached_t = int(topo_hot[:b_t].sum())
        cached_f = int(feat_hot[:b_f].sum())
        if topo_total > 0:
            n_t = txn_total * (topo_total - cached_t) / topo_total
        else:
            n_t = float(txn_total)
        n_f = row_txns * (feat_total - cached_f)
        total = n_t + n_f
        if best is None or total < best[1]:
            best = (alpha, total, b_t, b_f)
    return best
