"""Experiment driver: plan, simulate, and compare cache policies from a config.

All outputs are plain CSV/JSON with a provenance comment (config hash and
master seed). Reruns with the same config and seed are byte-identical; the
output directory is locked against concurrent runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .graph import CsrGraph, FeatureSpec, generate_synthetic, load_csr, select_training_set
from .hardware import HardwareSpec, block_layout, load_hardware_config
from .partition import (
    assign_tablets,
    dump_partitioning,
    dump_tablets,
    partition_inter_clique,
    split_intra_clique,
)
from .planner import (
    CachePlan,
    alpha_grid,
    build_candidate_orders,
    estimate_traffic,
    materialize_assignment,
    plan_report,
    search_optimal_plan,
)
from .rng import derive_seed
from .sampling import SamplingConfig, run_presampling, run_sampling_epoch
from .simulator import (
    POLICY_HIERARCHICAL,
    POLICY_VARIANTS,
    CachePolicy,
    account_assignment,
    hit_rate_summary,
    run_policy_pipeline,
    sweep_gpus,
    write_report_csv,
    write_traffic_matrix_csv,
)

_LOCK_NAME = ".gnncache.lock"

# sub-seeds fanned out of the master seed, one role per pipeline stage
_SEED_GRAPH = 0x01
_SEED_TRAINING = 0x02
_SEED_PARTITION = 0x03
_SEED_PRESAMPLE = 0x04
_SEED_SIMULATE = 0x05


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    graph_path: str | None = None
    synthetic: dict | None = None
    hardware_path: str | None = None
    hardware_inline: dict | None = None
    fanouts: tuple[int, ...] = (25, 10)
    batch_size: int = 8000
    presample_epochs: int = 1
    training_fraction: float = 0.1
    feature_dim: int = 128
    policies: list[str] = field(default_factory=lambda: [POLICY_HIERARCHICAL])
    delta_alpha: float = 0.01
    cache_ratio: float | None = 0.05
    budget_bytes: int | None = None
    gpu_counts: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    clique_size: int = 2
    epsilon: float = 0.05
    seed: int = 0
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        cfg = cls()
        graph = raw.get("graph", {})
        cfg.graph_path = graph.get("path")
        cfg.synthetic = graph.get("synthetic")
        if cfg.graph_path is None and cfg.synthetic is None:
            raise ValueError("config needs graph.path or graph.synthetic")
        hardware = raw.get("hardware", {})
        cfg.hardware_path = hardware.get("path")
        cfg.hardware_inline = hardware if "path" not in hardware and hardware else None
        sampling = raw.get("sampling", {})
        cfg.fanouts = tuple(sampling.get("fanouts", cfg.fanouts))
        cfg.batch_size = int(sampling.get("batch_size", cfg.batch_size))
        cfg.presample_epochs = int(sampling.get("presample_epochs", cfg.presample_epochs))
        cfg.training_fraction = float(raw.get("training_fraction", cfg.training_fraction))
        cfg.feature_dim = int(raw.get("feature_dim", cfg.feature_dim))
        cfg.policies = list(raw.get("policies", cfg.policies))
        cfg.delta_alpha = float(raw.get("delta_alpha", cfg.delta_alpha))
        if "cache_ratio" in raw:
            cfg.cache_ratio = float(raw["cache_ratio"])
        if "budget_bytes" in raw:
            cfg.budget_bytes = int(raw["budget_bytes"])
            cfg.cache_ratio = None
        cfg.gpu_counts = [int(c) for c in raw.get("gpu_counts", cfg.gpu_counts)]
        cfg.clique_size = int(raw.get("clique_size", cfg.clique_size))
        cfg.epsilon = float(raw.get("epsilon", cfg.epsilon))
        cfg.seed = int(raw.get("seed", cfg.seed))
        cfg.out_dir = str(raw.get("out_dir", cfg.out_dir))
        if not 0.0 < cfg.delta_alpha <= 1.0:
            raise ValueError("delta_alpha must be in (0, 1]")
        if not cfg.policies:
            raise ValueError("policies must not be empty")
        for name in cfg.policies:
            if name not in POLICY_VARIANTS:
                raise ValueError(f"unknown policy {name!r}; choose from {POLICY_VARIANTS}")
        return cfg

    def digest(self) -> str:
        """Hash of everything that determines outputs (the out dir is not part of it)."""
        payload = {k: v for k, v in self.__dict__.items() if k != "out_dir"}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def _build_graph(cfg: ExperimentConfig) -> CsrGraph:
    if cfg.graph_path:
        return load_csr(cfg.graph_path)
    params = cfg.synthetic or {}
    return generate_synthetic(
        num_vertices=int(params.get("num_vertices", 10000)),
        avg_degree=int(params.get("avg_degree", 16)),
        skew=float(params.get("skew", 1.0)),
        seed=derive_seed(cfg.seed, _SEED_GRAPH),
    )


def _build_hardware(cfg: ExperimentConfig, graph: CsrGraph, feat: FeatureSpec) -> HardwareSpec:
    if cfg.hardware_path:
        return load_hardware_config(cfg.hardware_path)
    inline = cfg.hardware_inline or {}
    gpu_count = int(inline.get("gpu_count", max(cfg.gpu_counts)))
    clique_size = int(inline.get("clique_size", cfg.clique_size))
    layout = block_layout(gpu_count, min(clique_size, gpu_count))
    policy = _policy_from_cfg(cfg, POLICY_HIERARCHICAL)
    budget = int(inline.get("clique_budget_bytes", policy.per_gpu_bytes(graph, feat) * layout.clique_size))
    return HardwareSpec(
        layout=layout,
        clique_budget_bytes=budget,
        cache_line_bytes=int(inline.get("cache_line_bytes", 64)),
    )


def _policy_from_cfg(cfg: ExperimentConfig, variant: str) -> CachePolicy:
    return CachePolicy(
        variant=variant,
        cache_ratio=cfg.cache_ratio,
        budget_bytes=cfg.budget_bytes,
        delta_alpha=cfg.delta_alpha,
    )


def _provenance(cfg: ExperimentConfig) -> str:
    return f"config_sha256={cfg.digest()} seed={cfg.seed}"


def _write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> None:
    payload = {"provenance": _provenance(cfg), **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc


def run_plan(cfg: ExperimentConfig, out: Path) -> None:
    feat = FeatureSpec(cfg.feature_dim)
    graph = _stage("graph", _build_graph, cfg)
    spec = _stage("hardware", _build_hardware, cfg, graph, feat)
    layout = spec.layout
    training = _stage(
        "training", select_training_set, graph, cfg.training_fraction, derive_seed(cfg.seed, _SEED_TRAINING)
    )
    parts = _stage(
        "partition",
        partition_inter_clique,
        graph,
        layout.clique_count,
        cfg.epsilon,
        derive_seed(cfg.seed, _SEED_PARTITION),
    )
    tablets = _stage("tablets", split_intra_clique, training, parts, layout)
    sampling = SamplingConfig(
        fanouts=cfg.fanouts,
        batch_size=cfg.batch_size,
        presample_epochs=cfg.presample_epochs,
        seed=derive_seed(cfg.seed, _SEED_PRESAMPLE),
    )
    hotness = _stage("presample", run_presampling, graph, tablets, layout, sampling, spec)

    plans, estimates, orders_all = [], [], []
    for hot in hotness:
        orders = _stage("plan", build_candidate_orders, hot)
        plan, est = _stage(
            "plan",
            search_optimal_plan,
            orders,
            spec.clique_budget_bytes,
            cfg.delta_alpha,
            graph,
            feat,
            spec,
            hot.sampling_txn_total,
        )
        orders_all.append(orders)
        plans.append(plan)
        estimates.append(est)
    assignment = _stage("materialize", materialize_assignment, orders_all, plans, layout, graph, feat, spec)

    tablet_sizes = [[len(t) for t in clique] for clique in tablets.tablets]
    report = plan_report(layout, plans, estimates, cfg.delta_alpha, tablet_sizes)
    _write_json(out / "plan_report.json", report, cfg)
    dump_partitioning(parts, out / "partition.txt")
    dump_tablets(tablets, layout, out / "tablets.txt")
    with open(out / "assignment.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        for gpu in range(layout.num_gpus):
            topo = " ".join(str(v) for v in assignment.topo_vertices[gpu])
            feats = " ".join(str(v) for v in assignment.feat_vertices[gpu])
            fh.write(f"gpu {gpu} topo {topo}\n")
            fh.write(f"gpu {gpu} feat {feats}\n")


def run_simulate(cfg: ExperimentConfig, out: Path, variant: str | None = None) -> None:
    feat = FeatureSpec(cfg.feature_dim)
    graph = _stage("graph", _build_graph, cfg)
    spec = _stage("hardware", _build_hardware, cfg, graph, feat)
    training = _stage(
        "training", select_training_set, graph, cfg.training_fraction, derive_seed(cfg.seed, _SEED_TRAINING)
    )
    policy = _policy_from_cfg(cfg, variant or cfg.policies[0])
    sampling = SamplingConfig(cfg.fanouts, cfg.batch_size, cfg.presample_epochs)
    run = _stage(
        "simulate",
        run_policy_pipeline,
        policy,
        graph,
        training,
        spec.layout,
        sampling,
        spec,
        feat,
        cfg.seed,
        cfg.epsilon,
    )
    write_report_csv(run.report, out / f"report_{policy.variant}.csv", _provenance(cfg))
    write_traffic_matrix_csv(run.report, out / f"traffic_matrix_{policy.variant}.csv", _provenance(cfg))


def run_alpha_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    """Predicted vs simulated traffic over the whole alpha grid (one shared alpha)."""
    feat = FeatureSpec(cfg.feature_dim)
    graph = _stage("graph", _build_graph, cfg)
    spec = _stage("hardware", _build_hardware, cfg, graph, feat)
    layout = spec.layout
    training = _stage(
        "training", select_training_set, graph, cfg.training_fraction, derive_seed(cfg.seed, _SEED_TRAINING)
    )
    parts = _stage(
        "partition",
        partition_inter_clique,
        graph,
        layout.clique_count,
        cfg.epsilon,
        derive_seed(cfg.seed, _SEED_PARTITION),
    )
    tablets = _stage("tablets", split_intra_clique, training, parts, layout)
    pools = assign_tablets(tablets, layout)
    sampling = SamplingConfig(
        fanouts=cfg.fanouts,
        batch_size=cfg.batch_size,
        presample_epochs=cfg.presample_epochs,
        seed=derive_seed(cfg.seed, _SEED_PRESAMPLE),
    )
    hotness = _stage("presample", run_presampling, graph, pools, layout, sampling, spec)
    orders = [_stage("plan", build_candidate_orders, hot) for hot in hotness]

    # one fresh-seed epoch, replayed against each grid point's cache
    traces = _stage(
        "simulate", run_sampling_epoch, graph, pools, layout, sampling, derive_seed(cfg.seed, _SEED_SIMULATE), 0
    )

    rows = []
    for alpha in alpha_grid(cfg.delta_alpha):
        plans = [CachePlan.from_alpha(spec.clique_budget_bytes, alpha) for _ in range(layout.clique_count)]
        predicted = 0.0
        for ci, hot in enumerate(hotness):
            est = estimate_traffic(orders[ci], plans[ci], graph, feat, spec, hot.sampling_txn_total)
            predicted += est.total_txns
        assignment = materialize_assignment(orders, plans, layout, graph, feat, spec)
        report = account_assignment(traces, assignment, layout, graph, spec, feat)
        rows.append((alpha, predicted, report.total_cpu_txn))

    selected = []
    for ci, hot in enumerate(hotness):
        plan, est = search_optimal_plan(
            orders[ci], spec.clique_budget_bytes, cfg.delta_alpha, graph, feat, spec, hot.sampling_txn_total
        )
        selected.append(plan)
    sel_assignment = materialize_assignment(orders, selected, layout, graph, feat, spec)
    sel_report = account_assignment(traces, sel_assignment, layout, graph, spec, feat)

    with open(out / "sweep_alpha.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("alpha,predicted_total_txns,simulated_cpu_txn\n")
        for alpha, predicted, simulated in rows:
            fh.write(f"{alpha:.4f},{predicted:.4f},{simulated}\n")
    summary = {
        "selected_alphas": [p.alpha for p in selected],
        "selected_simulated_cpu_txn": sel_report.total_cpu_txn,
        "best_simulated_cpu_txn": min(r[2] for r in rows),
    }
    _write_json(out / "sweep_alpha_selected.json", summary, cfg)
    return summary


def run_gpu_sweep(cfg: ExperimentConfig, out: Path) -> None:
    feat = FeatureSpec(cfg.feature_dim)
    graph = _stage("graph", _build_graph, cfg)
    training = _stage(
        "training", select_training_set, graph, cfg.training_fraction, derive_seed(cfg.seed, _SEED_TRAINING)
    )
    sampling = SamplingConfig(cfg.fanouts, cfg.batch_size, cfg.presample_epochs)
    with open(out / "sweep_gpus.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("policy,gpu_count,total_cpu_txn,normalized\n")
        for name in cfg.policies:
            policy = _policy_from_cfg(cfg, name)
            points = _stage(
                "sweep-gpus",
                sweep_gpus,
                policy,
                cfg.gpu_counts,
                graph,
                training,
                sampling,
                feat,
                cfg.clique_size,
                cfg.seed,
                cfg.epsilon,
            )
            for pt in points:
                fh.write(f"{name},{pt.gpu_count},{pt.total_cpu_txn},{pt.normalized:.6f}\n")


def run_compare(cfg: ExperimentConfig, out: Path) -> None:
    """Identical graph and seeds for every policy; per-policy failures don't abort the rest."""
    if len(cfg.policies) < 2:
        raise StageError("compare", ValueError("compare needs at least 2 policies"))
    feat = FeatureSpec(cfg.feature_dim)
    graph = _stage("graph", _build_graph, cfg)
    spec = _stage("hardware", _build_hardware, cfg, graph, feat)
    training = _stage(
        "training", select_training_set, graph, cfg.training_fraction, derive_seed(cfg.seed, _SEED_TRAINING)
    )
    sampling = SamplingConfig(cfg.fanouts, cfg.batch_size, cfg.presample_epochs)

    failures: list[tuple[str, str]] = []
    hit_lines: list[str] = []
    txn_lines: list[str] = []
    for name in cfg.policies:
        policy = _policy_from_cfg(cfg, name)
        try:
            run = run_policy_pipeline(
                policy, graph, training, spec.layout, sampling, spec, feat, cfg.seed, cfg.epsilon
            )
        except Exception as exc:
            failures.append((name, str(exc)))
            print(f"warning [compare] policy {name} failed: {exc}", file=sys.stderr)
            continue
        summary = hit_rate_summary(run.report)
        for gpu in range(run.report.num_gpus):
            hit_lines.append(
                f"{name},{gpu},{summary.per_gpu_topo[gpu]:.6f},{summary.per_gpu_feat[gpu]:.6f}\n"
            )
        hit_lines.append(f"{name},spread,{summary.topo_spread:.6f},{summary.feat_spread:.6f}\n")
        for gpu in range(run.report.num_gpus):
            txn_lines.append(
                f"{name},{gpu},{run.report.sampling_cpu_txn[gpu]},"
                f"{run.report.feature_cpu_txn[gpu]},{run.report.feature_peer_txn[gpu]}\n"
            )
        write_traffic_matrix_csv(run.report, out / f"traffic_matrix_{name}.csv", _provenance(cfg))

    if len(cfg.policies) - len(failures) == 0:
        raise StageError("compare", RuntimeError("every policy failed"))

    with open(out / "compare_hit_rates.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("policy,gpu,topo_hit_rate,feat_hit_rate\n")
        fh.writelines(hit_lines)
    with open(out / "compare_transactions.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("policy,gpu,sampling_cpu_txn,feature_cpu_txn,feature_peer_txn\n")
        fh.writelines(txn_lines)
    if failures:
        with open(out / "compare_failures.txt", "w", encoding="utf-8") as fh:
            for name, msg in failures:
                fh.write(f"{name}: {msg}\n")

    run_gpu_sweep(cfg, out)
    if POLICY_HIERARCHICAL in cfg.policies:
        run_alpha_sweep(cfg, out)


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "policy", None):
        cfg.policies = [p.strip() for p in args.policy.split(",") if p.strip()]
    if getattr(args, "delta_alpha", None) is not None:
        cfg.delta_alpha = args.delta_alpha
    if getattr(args, "cache_ratio", None) is not None:
        cfg.cache_ratio = args.cache_ratio
        cfg.budget_bytes = None
    if not cfg.policies:
        raise StageError("config", ValueError("policies must not be empty"))
    for name in cfg.policies:
        if name not in POLICY_VARIANTS:
            raise StageError("config", ValueError(f"unknown policy {name!r}"))
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gnncache", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("plan", "simulate", "compare", "sweep-gpus", "sweep-alpha"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--policy", default=None, help="comma-separated policy list")
        p.add_argument("--delta-alpha", dest="delta_alpha", type=float, default=None)
        p.add_argument("--cache-ratio", dest="cache_ratio", type=float, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = _stage("config", load_config, args.config)
        cfg = _apply_overrides(cfg, args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lock = out / _LOCK_NAME
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError("cli", RuntimeError(f"output directory {out} is locked by another run"))
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            if args.verb == "plan":
                run_plan(cfg, out)
            elif args.verb == "simulate":
                run_simulate(cfg, out)
            elif args.verb == "compare":
                run_compare(cfg, out)
            elif args.verb == "sweep-gpus":
                run_gpu_sweep(cfg, out)
            elif args.verb == "sweep-alpha":
                run_alpha_sweep(cfg, out)
        finally:
            lock.unlink(missing_ok=True)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
