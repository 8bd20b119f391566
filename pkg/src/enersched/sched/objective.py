"""Prediction matrices, normalizers, and the energy/makespan objective.

A partial schedule is kept as per-machine aggregate loads so that
evaluating a tentative placement only re-estimates one machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import MachineSpec, ProfileStore, TaskSpec
from ..errors import ContractViolation
from ..transfer import TransferCostModel, file_demand


@dataclass(frozen=True)
class TaskEmbedding:
    """``vector`` interleaves (runtime_s, energy_j) for each machine in fleet order."""

    task_id: str
    vector: tuple[float, ...]

    @property
    def runtimes(self) -> tuple[float, ...]:
        return self.vector[0::2]

    @property
    def energies(self) -> tuple[float, ...]:
        return self.vector[1::2]


def prediction_matrix(tasks: Sequence[TaskSpec], fleet: Sequence[MachineSpec], store: ProfileStore):
    """Runtime and energy predictions as two ``(n_tasks, n_machines)`` arrays."""
    if not fleet:
        raise ContractViolation("fleet must be non-empty")
    fids = sorted({t.function_id for t in tasks})
    index = {f: k for k, f in enumerate(fids)}
    per_fn = np.zeros((2, len(fids), len(fleet)))
    for k, fid in enumerate(fids):
        for j, m in enumerate(fleet):
            p = store.lookup(fid, m.machine_id)
            per_fn[0, k, j], per_fn[1, k, j] = p.runtime_s, p.energy_j
    rows = np.fromiter((index[t.function_id] for t in tasks), dtype=np.intp, count=len(tasks))
    R = per_fn[0][rows]
    E = per_fn[1][rows]
    return R, E


def build_embeddings(tasks, fleet, profile_store) -> list[TaskEmbedding]:
    R, E = prediction_matrix(tasks, fleet, profile_store)
    V = np.empty((len(tasks), 2 * len(fleet)))
    V[:, 0::2] = R
    V[:, 1::2] = E
    return [TaskEmbedding(t.task_id, tuple(float(x) for x in V[i])) for i, t in enumerate(tasks)]


def normalizers_from_predictions(R: np.ndarray, E: np.ndarray, fleet: Sequence[MachineSpec]) -> tuple[float, float]:
    if R.shape[0] == 0:
        raise ContractViolation("normalizers need at least one task")
    runtimes, energies = [], []
    for j, m in enumerate(fleet):
        runtime = m.avg_queue_s + math.fsum(R[:, j]) / m.cores_per_node
        runtimes.append(runtime)
        energies.append(m.idle_power_w * runtime + math.fsum(E[:, j]))
    sf1, sf2 = max(energies), max(runtimes)
    # an all-zero instance would divide by zero; any positive scale gives the same argmin
    return (sf1 if sf1 > 0 else 1.0), (sf2 if sf2 > 0 else 1.0)


def compute_normalizers(tasks, fleet, profile_store) -> tuple[float, float]:
    """Pessimistic single-machine totals: ``(SF1 joules, SF2 seconds)``."""
    if not tasks:
        raise ContractViolation("normalizers need at least one task")
    R, E = prediction_matrix(tasks, fleet, profile_store)
    return normalizers_from_predictions(R, E, fleet)


@dataclass(frozen=True)
class Unit:
    """A group of tasks placed together; a singleton for per-task scheduling."""

    unit_id: str
    task_ids: tuple[str, ...]
    runtime: np.ndarray  # summed predicted runtime per machine
    energy: np.ndarray  # summed predicted dynamic energy per machine
    demand: dict = field(default_factory=dict)  # home -> (n_files, bytes)
    transfer_j: np.ndarray | None = None  # inbound transfer energy per destination machine

    @property
    def n_tasks(self) -> int:
        return len(self.task_ids)

    @property
    def mean_runtime(self) -> float:
        return float(np.mean(self.runtime))

    @property
    def mean_energy(self) -> float:
        return float(np.mean(self.energy))


def attach_transfers(unit: Unit, tasks: Sequence[TaskSpec], fleet, costs: TransferCostModel | None) -> Unit:
    demand = file_demand(tasks)
    te = np.zeros(len(fleet))
    if costs is not None:
        for j, m in enumerate(fleet):
            te[j] = math.fsum(costs.energy(home, m.machine_id, b) for home, (_, b) in demand.items() if home != m.machine_id)
    return Unit(unit.unit_id, unit.task_ids, unit.runtime, unit.energy, demand, te)


@dataclass(frozen=True)
class MachineLoad:
    work_s: float = 0.0
    dyn_j: float = 0.0
    n_tasks: int = 0
    inbound: dict = field(default_factory=dict)  # src -> (n_files, bytes)
    transfer_j: float = 0.0

    def add(self, unit: Unit, j: int, machine_id: str) -> "MachineLoad":
        inbound = dict(self.inbound)
        for home, (n, b) in unit.demand.items():
            if home != machine_id:
                n0, b0 = inbound.get(home, (0, 0))
                inbound[home] = (n0 + n, b0 + b)
        te = 0.0 if unit.transfer_j is None else float(unit.transfer_j[j])
        return MachineLoad(
            self.work_s + float(unit.runtime[j]),
            self.dyn_j + float(unit.energy[j]),
            self.n_tasks + unit.n_tasks,
            inbound,
            self.transfer_j + te,
        )


@dataclass(frozen=True)
class MachineEstimate:
    nodes: int
    finish_s: float
    fixed_j: float  # dynamic energy + idle energy that does not depend on the workload span
    span_rate_w: float  # idle power charged for the whole workload span (no batch scheduler)
    transfer_j: float


def nodes_used(spec: MachineSpec, n_tasks: int) -> int:
    if not spec.has_batch_scheduler:
        return spec.max_nodes
    return max(1, min(spec.max_nodes, -(-n_tasks // spec.cores_per_node)))


def estimate_machine(spec: MachineSpec, load: MachineLoad, costs: TransferCostModel | None) -> MachineEstimate | None:
    if load.n_tasks == 0:
        return None
    nodes = nodes_used(spec, load.n_tasks)
    compute = load.work_s / (spec.cores_per_node * nodes)
    wait = 0.0
    if costs is not None and load.inbound:
        wait = max(costs.time(src, spec.machine_id, n, b) for src, (n, b) in load.inbound.items())
    finish = max(spec.avg_queue_s, wait) + compute
    if spec.has_batch_scheduler:
        fixed = spec.idle_power_w * (compute + spec.provisioning_overhead_s) * nodes + load.dyn_j
        rate = 0.0
    else:
        fixed = spec.idle_power_w * spec.provisioning_overhead_s * nodes + load.dyn_j
        rate = spec.idle_power_w * nodes
    return MachineEstimate(nodes, finish, fixed, rate, load.transfer_j)


def combine(estimates: Sequence[MachineEstimate | None]) -> tuple[float, float]:
    """``(E_tot, C_max)`` over the machines that have work."""
    used = [e for e in estimates if e is not None]
    if not used:
        return 0.0, 0.0
    c_max = max(e.finish_s for e in used)
    e_tot = 0.0
    for e in used:
        e_tot += e.fixed_j + e.span_rate_w * c_max + e.transfer_j
    return e_tot, c_max


@dataclass(frozen=True)
class ObjectiveValue:
    e_tot_j: float
    c_max_s: float
    objective: float


def weigh(e_tot: float, c_max: float, alpha: float, sf1: float, sf2: float) -> float:
    return alpha * e_tot / sf1 + (1.0 - alpha) * c_max / sf2


def check_weights(alpha: float, sf1: float, sf2: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must be in [0, 1], got {alpha}")
    if not (sf1 > 0 and sf2 > 0):
        raise ContractViolation(f"normalizers must be > 0, got sf1={sf1}, sf2={sf2}")


class PartialSchedule:
    """Units placed so far, kept as one aggregate load per machine."""

    def __init__(self, fleet: Sequence[MachineSpec], costs: TransferCostModel | None = None):
        self.fleet = list(fleet)
        self.costs = costs
        self.loads = [MachineLoad() for _ in self.fleet]
        self.estimates: list[MachineEstimate | None] = [None] * len(self.fleet)
        self.assignment: dict[str, str] = {}
        self.steps: list[tuple[str, str]] = []

    def tentative(self, unit: Unit, j: int) -> MachineEstimate:
        load = self.loads[j].add(unit, j, self.fleet[j].machine_id)
        return estimate_machine(self.fleet[j], load, self.costs)

    def totals_with(self, j: int, estimate: MachineEstimate) -> tuple[float, float]:
        ests = list(self.estimates)
        ests[j] = estimate
        return combine(ests)

    def totals(self) -> tuple[float, float]:
        return combine(self.estimates)

    def assign(self, unit: Unit, j: int) -> None:
        mid = self.fleet[j].machine_id
        self.loads[j] = self.loads[j].add(unit, j, mid)
        self.estimates[j] = estimate_machine(self.fleet[j], self.loads[j], self.costs)
        self.assignment[unit.unit_id] = mid
        self.steps.append((unit.unit_id, mid))

    def replace_loads(self, loads: Sequence[MachineLoad]) -> None:
        self.loads = list(loads)
        self.estimates = [estimate_machine(m, l, self.costs) for m, l in zip(self.fleet, self.loads)]


def evaluate_objective(partial_schedule: PartialSchedule, alpha: float, sf1: float, sf2: float) -> ObjectiveValue:
    """``alpha * E_tot / SF1 + (1 - alpha) * C_max / SF2`` for a (partial) schedule."""
    check_weights(alpha, sf1, sf2)
    e_tot, c_max = partial_schedule.totals()
    return ObjectiveValue(e_tot, c_max, weigh(e_tot, c_max, alpha, sf1, sf2))
