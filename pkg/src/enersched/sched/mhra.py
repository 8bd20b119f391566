"""Multi-heuristic greedy placement, per task (MHRA) and per cluster (Cluster MHRA)."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import MachineSpec, ProfileStore, TaskSpec
from ..errors import ContractViolation, InvariantViolation, UnknownMachineError
from ..transfer import CacheLedger, TransferCostModel, plan_batch_transfers
from .clustering import Cluster, cluster_tasks, startup_energy_threshold
from .objective import (
    MachineLoad,
    PartialSchedule,
    TaskEmbedding,
    Unit,
    attach_transfers,
    check_weights,
    normalizers_from_predictions,
    prediction_matrix,
    weigh,
)

HEURISTICS = (
    "shortest_runtime_first",
    "longest_runtime_first",
    "highest_energy_first",
    "lowest_energy_first",
)


def order_units(units: Sequence[Unit], heuristic: str) -> list[Unit]:
    """Stable sort by mean-across-machines predicted runtime or energy."""
    if heuristic == "shortest_runtime_first":
        return sorted(units, key=lambda u: u.mean_runtime)
    if heuristic == "longest_runtime_first":
        return sorted(units, key=lambda u: u.mean_runtime, reverse=True)
    if heuristic == "highest_energy_first":
        return sorted(units, key=lambda u: u.mean_energy, reverse=True)
    if heuristic == "lowest_energy_first":
        return sorted(units, key=lambda u: u.mean_energy)
    raise ContractViolation(f"unknown heuristic {heuristic!r}")


@dataclass
class Schedule:
    assignment: dict[str, str]  # unit id -> machine id
    units: dict[str, tuple[str, ...]]  # unit id -> task ids
    predicted_e_tot_j: float
    predicted_c_max_s: float
    objective: float
    alpha: float
    sf1_j: float
    sf2_s: float
    heuristic: str
    steps: list[tuple[str, str]] = field(default_factory=list)
    heuristic_objectives: dict[str, float] = field(default_factory=dict)
    transfer_energy_j: float = 0.0
    wall_time_s: float = 0.0

    def task_assignment(self) -> dict[str, str]:
        return {tid: self.assignment[uid] for uid, tids in self.units.items() for tid in tids}

    def machine_counts(self, fleet: Sequence[MachineSpec]) -> dict[str, int]:
        counts = {m.machine_id: 0 for m in fleet}
        for uid, tids in self.units.items():
            counts[self.assignment[uid]] += len(tids)
        return counts

    def rows(self, tasks: Sequence[TaskSpec]):
        """One ``{task_id, cluster_id, machine_id}`` row per task, in workload order."""
        owner = {tid: uid for uid, tids in self.units.items() for tid in tids}
        for t in tasks:
            uid = owner[t.task_id]
            yield {"task_id": t.task_id, "cluster_id": uid, "machine_id": self.assignment[uid]}

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "sf1_j": round(self.sf1_j, 3),
            "sf2_s": round(self.sf2_s, 3),
            "predicted_e_tot_j": round(self.predicted_e_tot_j, 3),
            "predicted_c_max_s": round(self.predicted_c_max_s, 3),
            "objective": float(f"{self.objective:.12g}"),
            "heuristic_chosen": self.heuristic,
        }

    def dumps_rows(self, tasks) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.rows(tasks))


def greedy_assign(units, fleet, costs, alpha, sf1, sf2) -> PartialSchedule:
    """Place units in the given order; each goes to the machine minimizing the objective.

    Starts from an unplaced sentinel with infinite objective, and only a
    strictly lower objective replaces the incumbent, so ties keep the
    earliest machine in fleet order.
    """
    partial = PartialSchedule(fleet, costs)
    for unit in units:
        best_j, best_f = None, math.inf
        for j in range(len(fleet)):
            est = partial.tentative(unit, j)
            e_tot, c_max = partial.totals_with(j, est)
            f = weigh(e_tot, c_max, alpha, sf1, sf2)
            if f < best_f:
                best_j, best_f = j, f
        if best_j is None:
            raise InvariantViolation(f"no finite objective for unit {unit.unit_id}")
        partial.assign(unit, best_j)
    return partial


def replan_transfers(partial: PartialSchedule, units: dict[str, Unit], tasks_by_id, ledger=None):
    """Re-estimate a finished schedule with one global batched transfer plan."""
    fleet, costs = partial.fleet, partial.costs
    if costs is None:
        return partial, None
    task_machine = {tid: partial.assignment[uid] for uid, u in units.items() for tid in u.task_ids}
    ordered = [tasks_by_id[tid] for uid, _ in partial.steps for tid in units[uid].task_ids]
    plan = plan_batch_transfers(task_machine, ordered, ledger, costs)
    inbound = {m.machine_id: {} for m in fleet}
    energy = {m.machine_id: 0.0 for m in fleet}
    for b in plan.batches:
        n0, b0 = inbound[b.dst].get(b.src, (0, 0))
        inbound[b.dst][b.src] = (n0 + len(b.files), b0 + b.total_bytes)
        energy[b.dst] += b.predicted_energy_j
    final = PartialSchedule(fleet, costs)
    final.assignment = dict(partial.assignment)
    final.steps = list(partial.steps)
    final.replace_loads(
        [
            MachineLoad(l.work_s, l.dyn_j, l.n_tasks, inbound[m.machine_id], energy[m.machine_id])
            for m, l in zip(fleet, partial.loads)
        ]
    )
    return final, plan


def _units_from_clusters(clusters: Sequence[Cluster], tasks_by_id, fleet, costs) -> list[Unit]:
    out = []
    for c in clusters:
        u = Unit(c.cluster_id, c.task_ids, np.asarray(c.runtime_per_machine), np.asarray(c.energy_per_machine))
        out.append(attach_transfers(u, [tasks_by_id[t] for t in c.task_ids], fleet, costs))
    return out


def _singleton_units(tasks, R, E, fleet, costs) -> list[Unit]:
    return [attach_transfers(Unit(t.task_id, (t.task_id,), R[i], E[i]), [t], fleet, costs) for i, t in enumerate(tasks)]


def _with_steps(partial: PartialSchedule, steps) -> PartialSchedule:
    out = PartialSchedule(partial.fleet, partial.costs)
    out.assignment = dict(partial.assignment)
    out.steps = list(steps)
    out.loads, out.estimates = list(partial.loads), list(partial.estimates)
    return out


def run_heuristics(units, tasks_by_id, fleet, costs, alpha, sf1, sf2, ledger=None):
    """Greedy schedule per heuristic; returns ``{heuristic: (objective, partial, e_tot, c_max, plan)}``."""
    by_id = {u.unit_id: u for u in units}
    results = {}
    replanned = {}
    for h in HEURISTICS:
        partial = greedy_assign(order_units(units, h), fleet, costs, alpha, sf1, sf2)
        # heuristics often converge; the global plan only depends on the assignment
        key = frozenset(partial.assignment.items())
        if key not in replanned:
            replanned[key] = replan_transfers(partial, by_id, tasks_by_id, ledger)
        final, plan = replanned[key]
        if final.steps != partial.steps:
            final = _with_steps(final, partial.steps)
        e_tot, c_max = final.totals()
        results[h] = (weigh(e_tot, c_max, alpha, sf1, sf2), final, e_tot, c_max, plan)
    return results


def _pick(results, units, alpha, sf1, sf2, started) -> Schedule:
    best = None
    for h in HEURISTICS:
        if best is None or results[h][0] < results[best][0]:
            best = h
    obj, final, e_tot, c_max, plan = results[best]
    return Schedule(
        assignment=dict(final.assignment),
        units={u.unit_id: u.task_ids for u in units},
        predicted_e_tot_j=e_tot,
        predicted_c_max_s=c_max,
        objective=obj,
        alpha=alpha,
        sf1_j=sf1,
        sf2_s=sf2,
        heuristic=best,
        steps=list(final.steps),
        heuristic_objectives={h: results[h][0] for h in HEURISTICS},
        transfer_energy_j=0.0 if plan is None else plan.energy_j,
        wall_time_s=time.perf_counter() - started,
    )


def _check(tasks, fleet, alpha):
    if not fleet:
        raise ContractViolation("fleet must be non-empty")
    check_weights(alpha, 1.0, 1.0)


def _empty(alpha, heuristic="none") -> Schedule:
    return Schedule({}, {}, 0.0, 0.0, 0.0, alpha, 1.0, 1.0, heuristic)


def schedule_cluster_mhra(
    tasks: Sequence[TaskSpec],
    fleet: Sequence[MachineSpec],
    profile_store: ProfileStore,
    transfer_model: TransferCostModel | None = None,
    alpha: float = 0.5,
    threshold_j: float | None = None,
    ledger: CacheLedger | None = None,
) -> Schedule:
    started = time.perf_counter()
    _check(tasks, fleet, alpha)
    if not tasks:
        return _empty(alpha)
    R, E = prediction_matrix(tasks, fleet, profile_store)
    sf1, sf2 = normalizers_from_predictions(R, E, fleet)
    V = np.empty((len(tasks), 2 * len(fleet)))
    V[:, 0::2], V[:, 1::2] = R, E
    rows = V.tolist()
    embeddings = [TaskEmbedding(t.task_id, tuple(rows[i])) for i, t in enumerate(tasks)]
    if threshold_j is None:
        threshold_j = startup_energy_threshold(fleet)
    clusters = cluster_tasks(embeddings, fleet, threshold_j)
    tasks_by_id = {t.task_id: t for t in tasks}
    units = _units_from_clusters(clusters, tasks_by_id, fleet, transfer_model)
    results = run_heuristics(units, tasks_by_id, fleet, transfer_model, alpha, sf1, sf2, ledger)
    return _pick(results, units, alpha, sf1, sf2, started)


def schedule_mhra(
    tasks: Sequence[TaskSpec],
    fleet: Sequence[MachineSpec],
    profile_store: ProfileStore,
    transfer_model: TransferCostModel | None = None,
    alpha: float = 0.5,
    ledger: CacheLedger | None = None,
) -> Schedule:
    """The per-task baseline: same greedy loop, every task its own unit."""
    started = time.perf_counter()
    _check(tasks, fleet, alpha)
    if not tasks:
        return _empty(alpha)
    R, E = prediction_matrix(tasks, fleet, profile_store)
    sf1, sf2 = normalizers_from_predictions(R, E, fleet)
    units = _singleton_units(tasks, R, E, fleet, transfer_model)
    tasks_by_id = {t.task_id: t for t in tasks}
    results = run_heuristics(units, tasks_by_id, fleet, transfer_model, alpha, sf1, sf2, ledger)
    return _pick(results, units, alpha, sf1, sf2, started)


def _fixed_schedule(tasks, fleet, profile_store, transfer_model, alpha, choose, label, ledger=None) -> Schedule:
    started = time.perf_counter()
    _check(tasks, fleet, alpha)
    if not tasks:
        return _empty(alpha, label)
    if profile_store is None:
        profile_store = ProfileStore(fleet)
    R, E = prediction_matrix(tasks, fleet, profile_store)
    sf1, sf2 = normalizers_from_predictions(R, E, fleet)
    units = _singleton_units(tasks, R, E, fleet, transfer_model)
    partial = PartialSchedule(fleet, transfer_model)
    for i, u in enumerate(units):
        partial.assign(u, choose(i))
    final, plan = replan_transfers(partial, {u.unit_id: u for u in units}, {t.task_id: t for t in tasks}, ledger)
    e_tot, c_max = final.totals()
    obj = weigh(e_tot, c_max, alpha, sf1, sf2)
    return Schedule(
        assignment=dict(final.assignment),
        units={u.unit_id: u.task_ids for u in units},
        predicted_e_tot_j=e_tot,
        predicted_c_max_s=c_max,
        objective=obj,
        alpha=alpha,
        sf1_j=sf1,
        sf2_s=sf2,
        heuristic=label,
        steps=list(final.steps),
        transfer_energy_j=0.0 if plan is None else plan.energy_j,
        wall_time_s=time.perf_counter() - started,
    )


def schedule_round_robin(tasks, fleet, profile_store=None, transfer_model=None, alpha=0.5, ledger=None) -> Schedule:
    """Task i goes to machine ``i mod |fleet|``; predictions are filled in for reporting."""
    n = len(fleet)
    return _fixed_schedule(tasks, fleet, profile_store, transfer_model, alpha, lambda i: i % n, "round_robin", ledger)


def schedule_single(tasks, fleet, machine_id, profile_store=None, transfer_model=None, alpha=0.5, ledger=None) -> Schedule:
    ids = [m.machine_id for m in fleet]
    if machine_id not in ids:
        raise UnknownMachineError(f"unknown machine_id {machine_id!r}")
    idx = ids.index(machine_id)
    return _fixed_schedule(tasks, fleet, profile_store, transfer_model, alpha, lambda i: idx, f"single:{machine_id}", ledger)
