"""Energy/runtime-aware placement of task batches across machines."""

from .clustering import Cluster, cluster_tasks, startup_energy_threshold
from .mhra import (
    HEURISTICS,
    Schedule,
    greedy_assign,
    order_units,
    schedule_cluster_mhra,
    schedule_mhra,
    schedule_round_robin,
    schedule_single,
)
from .objective import (
    MachineLoad,
    ObjectiveValue,
    PartialSchedule,
    TaskEmbedding,
    Unit,
    build_embeddings,
    compute_normalizers,
    evaluate_objective,
)

__all__ = [
    "Cluster",
    "HEURISTICS",
    "MachineLoad",
    "ObjectiveValue",
    "PartialSchedule",
    "Schedule",
    "TaskEmbedding",
    "Unit",
    "build_embeddings",
    "cluster_tasks",
    "compute_normalizers",
    "evaluate_objective",
    "greedy_assign",
    "order_units",
    "schedule_cluster_mhra",
    "schedule_mhra",
    "schedule_round_robin",
    "schedule_single",
    "startup_energy_threshold",
]
