"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from gnncache.cli import main
from gnncache.graph import FeatureSpec, generate_synthetic, select_training_set
from gnncache.hardware import HardwareSpec, block_layout
from gnncache.partition import assign_tablets, partition_inter_clique, split_intra_clique
from gnncache.planner import (
    CacheAssignment,
    CachePlan,
    alpha_grid,
    boundary_feature,
    boundary_topology,
    build_candidate_orders,
    estimate_traffic,
    feature_row_transactions,
    materialize_assignment,
    search_optimal_plan,
)
from gnncache.rng import derive_seed
from gnncache.sampling import HotnessMatrices, SamplingConfig, run_presampling, run_sampling_epoch
from gnncache.simulator import (
    POLICY_HIERARCHICAL,
    POLICY_PAGRAPH,
    POLICY_QUIVER,
    POLICY_REPLICATED,
    CachePolicy,
    account_assignment,
    build_policy_cache,
    hit_rate_summary,
    run_policy_pipeline,
    simulate_epoch,
    sweep_gpus,
)

from helpers import (
    linear_scan_boundary,
    planted_partition_graph,
    random_graph,
    sequential_plan_search,
    spearman,
)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def random_hotness(rng, k_g, n, txn):
    return HotnessMatrices(
        0,
        rng.integers(0, 40, size=(k_g, n)).astype(np.int64),
        rng.integers(0, 40, size=(k_g, n)).astype(np.int64),
        txn,
    )


def test_c01_cost_model_trend_fidelity():
    with criterion("criterion 1: cost-model trend fidelity (rank corr >= 0.90, selection within 5%)"):
        started = time.time()
        n = 100_000
        graph = generate_synthetic(n, 16, 1.2, seed=101)
        layout = block_layout(2, 2)
        feat = FeatureSpec(128)
        budget = 2 * int(round(0.05 * n)) * feat.row_bytes
        spec = HardwareSpec(layout, clique_budget_bytes=budget)
        training = select_training_set(graph, 0.1, seed=102)
        parts = partition_inter_clique(graph, layout.clique_count, seed=103)
        pools = assign_tablets(split_intra_clique(training, parts, layout), layout)
        cfg = SamplingConfig(fanouts=(25, 10), batch_size=1000, seed=104)
        hotness = run_presampling(graph, pools, layout, cfg, spec)
        orders = [build_candidate_orders(h) for h in hotness]
        # one fresh-seed epoch, replayed against every grid point's cache
        traces = run_sampling_epoch(graph, pools, layout, cfg, derive_seed(999, 1), 0)

        predicted, simulated = [], []
        for alpha in alpha_grid(0.01):
            plans = [CachePlan.from_alpha(budget, alpha) for _ in orders]
            predicted.append(
                sum(
                    estimate_traffic(orders[ci], plans[ci], graph, feat, spec, hotness[ci].sampling_txn_total).total_txns
                    for ci in range(len(orders))
                )
            )
            assignment = materialize_assignment(orders, plans, layout, graph, feat, spec)
            report = account_assignment(traces, assignment, layout, graph, spec, feat)
            simulated.append(report.total_cpu_txn)

        rho = spearman(predicted, simulated)
        assert rho >= 0.90, f"spearman {rho:.4f} < 0.90"

        selected = [
            search_optimal_plan(orders[ci], budget, 0.01, graph, feat, spec, hotness[ci].sampling_txn_total)[0]
            for ci in range(len(orders))
        ]
        sel_assignment = materialize_assignment(orders, selected, layout, graph, feat, spec)
        sel_traffic = account_assignment(traces, sel_assignment, layout, graph, spec, feat).total_cpu_txn
        best = min(simulated)
        assert sel_traffic <= 1.05 * best, f"selected {sel_traffic} vs best {best}"

        elapsed = time.time() - started
        assert elapsed < 300, f"runtime {elapsed:.1f}s exceeds 5 minutes"


def test_c02_exact_oracle_identity():
    with criterion("criterion 2: seed-replay transaction identities are exact (zero tolerance)"):
        # constant out-degree (16) with uniform fanouts (10): each read moves
        # the same edge count, so the hotness ratio is exact per vertex
        n = 6000
        graph = generate_synthetic(n, 16, 1.1, seed=301)
        layout = block_layout(4, 2)
        feat = FeatureSpec(128)
        spec = HardwareSpec(layout, clique_budget_bytes=1 << 22)
        training = select_training_set(graph, 0.1, seed=302)
        parts = partition_inter_clique(graph, layout.clique_count, seed=303)
        pools = assign_tablets(split_intra_clique(training, parts, layout), layout)
        cfg = SamplingConfig(fanouts=(10, 10), batch_size=100, presample_epochs=1, seed=304)
        hotness = run_presampling(graph, pools, layout, cfg, spec)
        orders = [build_candidate_orders(h) for h in hotness]

        empty = simulate_epoch(
            graph, pools, cfg, CacheAssignment.empty(layout.num_gpus), layout, spec, feat, seed=cfg.seed
        )
        for ci, members in enumerate(layout.cliques):
            measured = sum(int(empty.sampling_cpu_txn[g]) for g in members)
            assert measured == hotness[ci].sampling_txn_total

        for alpha in (0.15, 0.4, 0.8):
            plans = [CachePlan.from_alpha(200_000, alpha) for _ in orders]
            assignment = materialize_assignment(orders, plans, layout, graph, feat, spec)
            report = simulate_epoch(graph, pools, cfg, assignment, layout, spec, feat, seed=cfg.seed)
            for ci, members in enumerate(layout.cliques):
                o = orders[ci]
                b_t = boundary_topology(o, plans[ci].topo_budget, graph, spec)
                cached = int(o.topo_totals[o.topo_order[:b_t]].sum())
                total = int(o.topo_totals.sum())
                expected = Fraction(hotness[ci].sampling_txn_total) * (total - cached) / total
                measured = sum(int(report.sampling_cpu_txn[g]) for g in members)
                assert Fraction(measured) == expected, f"alpha {alpha} clique {ci}"


def test_c03_search_matches_exhaustive_sweep():
    with criterion("criterion 3: alpha search equals exhaustive sweep on 50 instances (zero tolerance)"):
        rng = np.random.default_rng(401)
        spec = HardwareSpec(block_layout(1, 1), clique_budget_bytes=1)
        for _ in range(50):
            n = int(rng.integers(2, 90))
            graph = random_graph(rng, n, 8)
            feat = FeatureSpec(int(rng.choice([4, 32, 128])))
            txn = int(rng.integers(0, 100_000))
            hot = random_hotness(rng, int(rng.integers(1, 5)), n, txn)
            orders = build_candidate_orders(hot)
            budget = int(rng.integers(0, 6000))
            delta = float(rng.choice([0.01, 0.05, 0.13, 0.25, 1.0]))
            plan, est = search_optimal_plan(orders, budget, delta, graph, feat, spec, txn)
            want_alpha, want_total, _, _ = sequential_plan_search(
                orders, budget, alpha_grid(delta), graph, feat, spec, txn
            )
            assert plan.alpha == want_alpha
            assert est.total_txns == want_total


def test_c04_boundaries_match_linear_scan():
    with criterion("criterion 4: prefix-sum boundaries equal linear scans, 1000 instances (zero tolerance)"):
        rng = np.random.default_rng(402)
        spec = HardwareSpec(block_layout(1, 1), clique_budget_bytes=1)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            graph = random_graph(rng, n, 9)
            feat = FeatureSpec(int(rng.choice([2, 8, 64])))
            hot = random_hotness(rng, 1, n, 0)
            orders = build_candidate_orders(hot)
            topo_costs = graph.out_degrees[orders.topo_order] * spec.uint32_bytes + spec.uint64_bytes
            budget = float(rng.uniform(0, float(topo_costs.sum()) * 1.2))
            assert boundary_topology(orders, budget, graph, spec) == linear_scan_boundary(topo_costs, budget)
            fcosts = np.full(n, feat.row_bytes, dtype=np.int64)
            fbudget = float(rng.uniform(0, n * feat.row_bytes * 1.2))
            assert boundary_feature(orders, fbudget, feat) == linear_scan_boundary(fcosts, fbudget)


def test_c05_cache_scalability_shape():
    with criterion("criterion 5: hierarchical cache scales with GPUs and beats replication by >= 5% at 8"):
        graph = generate_synthetic(40_000, 16, 1.2, seed=201)
        training = select_training_set(graph, 0.1, seed=202)
        cfg = SamplingConfig(fanouts=(25, 10), batch_size=1000, seed=0)
        feat = FeatureSpec(128)
        counts = [1, 2, 4, 8]
        hier = sweep_gpus(
            CachePolicy(POLICY_HIERARCHICAL, cache_ratio=0.05), counts, graph, training, cfg, feat,
            clique_size=2, seed=7,
        )
        repl = sweep_gpus(
            CachePolicy(POLICY_REPLICATED, cache_ratio=0.05), counts, graph, training, cfg, feat,
            clique_size=2, seed=7,
        )
        values = [p.normalized for p in hier]
        assert all(b <= a for a, b in zip(values, values[1:])), f"not non-increasing: {values}"
        hier8 = hier[-1].total_cpu_txn
        repl8 = repl[-1].total_cpu_txn
        assert hier8 <= 0.95 * repl8, f"8-GPU hierarchical {hier8} vs replicated {repl8}"


def test_c06_load_balance_spread():
    with criterion("criterion 6: hierarchical hit-rate spread below edge-cut partitioned cache"):
        graph = planted_partition_graph([3000, 2500, 1500, 1000], intra_degree=10, cross_degree=1, skew=1.3, seed=31)
        training = select_training_set(graph, 0.1, seed=32)
        layout = block_layout(8, 2)
        spec = HardwareSpec(layout, clique_budget_bytes=1)
        cfg = SamplingConfig(fanouts=(10, 10), batch_size=100, seed=0)
        feat = FeatureSpec(128)
        hier = run_policy_pipeline(
            CachePolicy(POLICY_HIERARCHICAL, cache_ratio=0.05), graph, training, layout, cfg, spec, feat, 41
        )
        pagraph = run_policy_pipeline(
            CachePolicy(POLICY_PAGRAPH, cache_ratio=0.05), graph, training, layout, cfg, spec, feat, 41
        )
        hier_spread = hit_rate_summary(hier.report).feat_spread
        pagraph_spread = hit_rate_summary(pagraph.report).feat_spread
        assert hier_spread < pagraph_spread, f"{hier_spread:.4f} !< {pagraph_spread:.4f}"


def test_c07_candidate_selection_partition_property():
    with criterion("criterion 7: candidate queues partition vertices onto argmax GPUs, 200 instances"):
        rng = np.random.default_rng(403)
        for _ in range(200):
            k_g = int(rng.integers(1, 6))
            n = int(rng.integers(1, 80))
            hot = HotnessMatrices(
                0,
                rng.integers(0, 7, size=(k_g, n)).astype(np.int64),
                rng.integers(0, 7, size=(k_g, n)).astype(np.int64),
            )
            orders = build_candidate_orders(hot)
            for matrix, queues in (
                (hot.topo_hotness, orders.gpu_topo_queues),
                (hot.feat_hotness, orders.gpu_feat_queues),
            ):
                combined = np.concatenate(queues)
                assert sorted(combined) == list(range(n)), "queues must cover every vertex once"
                for g, queue in enumerate(queues):
                    for v in queue:
                        column = matrix[:, v]
                        best = max(range(k_g), key=lambda i: (column[i], -i))
                        assert g == best


def test_c08_feature_transaction_constant():
    with criterion("criterion 8: 128-dim float32 rows cost exactly 8 transactions on 64B lines"):
        feat = FeatureSpec(128, bytes_per_element=4)
        layout = block_layout(1, 1)
        spec = HardwareSpec(layout, clique_budget_bytes=1 << 20, cache_line_bytes=64)
        assert feature_row_transactions(feat, spec) == 8

        # cost model side: misses scale by exactly 8
        rng = np.random.default_rng(404)
        graph = random_graph(rng, 50, 5)
        hot = random_hotness(rng, 1, 50, 0)
        orders = build_candidate_orders(hot)
        est = estimate_traffic(orders, CachePlan.from_alpha(0, 0.0), graph, feat, spec, 0)
        assert est.feature_txns == 8 * est.feature_misses

        # simulator side: every CPU feature fetch costs exactly 8
        g2 = generate_synthetic(500, 8, 1.0, seed=71)
        pools = [np.arange(0, 50, dtype=np.int64)]
        cfg = SamplingConfig(fanouts=(4, 4), batch_size=10, seed=72)
        report = simulate_epoch(g2, pools, cfg, CacheAssignment.empty(1), layout, spec, feat, seed=72)
        assert int(report.feature_cpu_txn[0]) == 8 * int(report.feat_lookups[0])


def test_c09_single_clique_degeneracy():
    with criterion("criterion 9: one-clique quiver-plus equals hierarchical bit for bit (zero tolerance)"):
        n = 4000
        graph = generate_synthetic(n, 12, 1.1, seed=501)
        layout = block_layout(8, 8)  # K_c = 1
        feat = FeatureSpec(64)
        spec = HardwareSpec(layout, clique_budget_bytes=1 << 22)
        training = select_training_set(graph, 0.1, seed=502)
        quiver_policy = CachePolicy(POLICY_QUIVER, cache_ratio=0.04)
        pools = [np.sort(training.vertex_ids[g::8]) for g in range(8)]
        cfg = SamplingConfig(fanouts=(8, 6), batch_size=64, seed=503)
        hotness = run_presampling(graph, pools, layout, cfg, spec)
        # identical hotness for both policies; no sampling traffic so the
        # plan search allocates the whole budget to features, like quiver
        for h in hotness:
            h.sampling_txn_total = 0
            h.topo_hotness[:] = 0
        quiver = build_policy_cache(quiver_policy, hotness, layout, graph, feat, spec)
        hier = build_policy_cache(
            CachePolicy(POLICY_HIERARCHICAL, cache_ratio=0.04), hotness, layout, graph, feat, spec
        )
        for gpu in range(8):
            assert np.array_equal(quiver.feat_vertices[gpu], hier.feat_vertices[gpu])
            assert np.array_equal(quiver.topo_vertices[gpu], hier.topo_vertices[gpu])
            assert quiver.feat_bytes[gpu] == hier.feat_bytes[gpu]


def test_c10_compare_run_determinism(tmp_path):
    with criterion("criterion 10: full compare rerun with one master seed is byte-identical"):
        config = {
            "graph": {"synthetic": {"num_vertices": 2500, "avg_degree": 8, "skew": 1.1}},
            "hardware": {"gpu_count": 4, "clique_size": 2},
            "sampling": {"fanouts": [4, 4], "batch_size": 50, "presample_epochs": 1},
            "training_fraction": 0.1,
            "feature_dim": 64,
            "policies": [POLICY_HIERARCHICAL, POLICY_REPLICATED],
            "delta_alpha": 0.2,
            "cache_ratio": 0.05,
            "gpu_counts": [1, 2],
            "seed": 99,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        assert main(["compare", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert main(["compare", "--config", str(cfg_path), "--out", str(out2)]) == 0
        files1 = {p.name: p.read_bytes() for p in sorted(out1.iterdir()) if p.is_file()}
        files2 = {p.name: p.read_bytes() for p in sorted(out2.iterdir()) if p.is_file()}
        assert files1.keys() == files2.keys()
        for name in files1:
            assert files1[name] == files2[name], f"{name} differs between reruns"
