"""Multi-GPU GNN cache planning and PCIe traffic simulation toolkit.

Pipeline: NVLink clique detection -> hierarchical training-vertex
partitioning -> pre-sampling hotness estimation -> unified cache plan
search -> transaction-level traffic simulation for plan validation and
cache-policy comparison.
"""

from .graph import (
    CsrGraph,
    FeatureSpec,
    TrainingSet,
    generate_synthetic,
    load_csr,
    save_csr,
    select_training_set,
)
from .hardware import (
    CliqueLayout,
    HardwareSpec,
    NvlinkMatrix,
    block_layout,
    block_matrix,
    detect_cliques,
    load_hardware_config,
    validate_spec,
)
from .partition import (
    Partitioning,
    TabletAssignment,
    assign_tablets,
    edge_cut_ratio,
    partition_inter_clique,
    split_intra_clique,
)
from .planner import (
    CacheAssignment,
    CachePlan,
    CandidateOrders,
    TrafficEstimate,
    boundary_feature,
    boundary_topology,
    build_candidate_orders,
    estimate_traffic,
    materialize_assignment,
    search_optimal_plan,
)
from .sampling import (
    BatchSample,
    HotnessMatrices,
    SamplingConfig,
    accumulate_hotness,
    run_presampling,
    sample_batch,
    topology_access_cost,
)
from .simulator import (
    CachePolicy,
    TrafficReport,
    build_policy_cache,
    hit_rate_summary,
    simulate_epoch,
    sweep_gpus,
)

__version__ = "0.1.0"
