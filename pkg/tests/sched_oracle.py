"""Brute-force re-statement of the placement estimate, used as a test oracle.

Everything is recomputed from the raw assigned units on every call, with
no incremental state shared with the library.
"""

import math

import numpy as np

from enersched.core import FileRef, MachineSpec, Sharing, TaskSpec

HEURISTIC_KEYS = {
    "shortest_runtime_first": (lambda u: float(np.mean(u.runtime)), False),
    "longest_runtime_first": (lambda u: float(np.mean(u.runtime)), True),
    "highest_energy_first": (lambda u: float(np.mean(u.energy)), True),
    "lowest_energy_first": (lambda u: float(np.mean(u.energy)), False),
}


def oracle_order(units, heuristic):
    key, reverse = HEURISTIC_KEYS[heuristic]
    return sorted(units, key=key, reverse=reverse)


def oracle_totals(fleet, placed, costs=None, inbound=None, transfer_j=None):
    """``placed``: machine index -> list of units.  Returns (E_tot, C_max)."""
    finish, fixed, rate = {}, {}, {}
    for j, units in placed.items():
        if not units:
            continue
        m = fleet[j]
        n = sum(len(u.task_ids) for u in units)
        nodes = m.max_nodes if not m.has_batch_scheduler else max(1, min(m.max_nodes, math.ceil(n / m.cores_per_node)))
        work = sum(float(u.runtime[j]) for u in units)
        dyn = sum(float(u.energy[j]) for u in units)
        compute = work / (m.cores_per_node * nodes)
        if inbound is None:
            demand = {}
            for u in units:
                for home, (k, b) in u.demand.items():
                    if home != m.machine_id:
                        k0, b0 = demand.get(home, (0, 0))
                        demand[home] = (k0 + k, b0 + b)
            te = sum(0.0 if u.transfer_j is None else float(u.transfer_j[j]) for u in units)
        else:
            demand, te = inbound.get(m.machine_id, {}), transfer_j.get(m.machine_id, 0.0)
        wait = max((costs.time(src, m.machine_id, k, b) for src, (k, b) in demand.items()), default=0.0) if costs else 0.0
        finish[j] = max(m.avg_queue_s, wait) + compute
        if m.has_batch_scheduler:
            fixed[j] = m.idle_power_w * (compute + m.provisioning_overhead_s) * nodes + dyn + te
            rate[j] = 0.0
        else:
            fixed[j] = m.idle_power_w * m.provisioning_overhead_s * nodes + dyn + te
            rate[j] = m.idle_power_w * nodes
    if not finish:
        return 0.0, 0.0
    c_max = max(finish.values())
    return sum(fixed[j] + rate[j] * c_max for j in finish), c_max


def oracle_objective(e, c, alpha, sf1, sf2):
    return alpha * e / sf1 + (1 - alpha) * c / sf2


def oracle_greedy(units, fleet, costs, alpha, sf1, sf2):
    """Exhaustive per-step enumeration; returns the decision list."""
    placed = {j: [] for j in range(len(fleet))}
    steps = []
    for u in units:
        scores = []
        for j in range(len(fleet)):
            trial = {k: list(v) for k, v in placed.items()}
            trial[j].append(u)
            scores.append(oracle_objective(*oracle_totals(fleet, trial, costs), alpha, sf1, sf2))
        best = min(range(len(fleet)), key=lambda j: (scores[j], j))
        placed[best].append(u)
        steps.append((u.unit_id, fleet[best].machine_id, scores))
    return steps, placed


def random_instance(rng, max_tasks=6, max_machines=4, with_files=True):
    n_m = int(rng.integers(2, max_machines + 1))
    fleet = []
    for j in range(n_m):
        batch = bool(rng.integers(0, 2)) if j else False
        fleet.append(
            MachineSpec(
                f"m{j}",
                cores_per_node=int(rng.integers(1, 9)),
                idle_power_w=float(np.round(rng.uniform(1, 200), 2)),
                avg_queue_s=float(np.round(rng.uniform(0, 40), 1)) if batch else 0.0,
                has_batch_scheduler=batch,
                max_nodes=int(rng.integers(1, 4)),
            )
        )
    functions = [f"f{k}" for k in range(int(rng.integers(1, 4)))]
    profiles = {
        (f, m.machine_id): (float(np.round(rng.uniform(0.5, 60), 2)), float(np.round(rng.uniform(1, 5000), 1)))
        for f in functions for m in fleet
    }
    tasks = []
    for i in range(int(rng.integers(1, max_tasks + 1))):
        files = ()
        if with_files and rng.random() < 0.7:
            home = fleet[int(rng.integers(0, n_m))].machine_id
            if rng.random() < 0.5:
                files = (FileRef("/shared/input", 50_000_000, home, Sharing.SHARED),)
            else:
                files = (FileRef(f"/own/{i}", int(rng.integers(1, 10**9)), home),)
        tasks.append(TaskSpec(f"t{i:02d}", str(rng.choice(functions)), files))
    return fleet, profiles, tasks


class OracleUnit:
    """Plain re-derivation of a placement unit from raw profiles and files."""

    def __init__(self, unit_id, tasks, fleet, profiles, costs):
        self.unit_id = unit_id
        self.task_ids = tuple(t.task_id for t in tasks)
        self.runtime = np.array([sum(profiles[(t.function_id, m.machine_id)][0] for t in tasks) for m in fleet])
        self.energy = np.array([sum(profiles[(t.function_id, m.machine_id)][1] for t in tasks) for m in fleet])
        demand, seen = {}, set()
        for t in tasks:
            for f in t.input_files:
                if f.sharing is Sharing.SHARED:
                    if f.logical_path in seen:
                        continue
                    seen.add(f.logical_path)
                k, b = demand.get(f.home_machine, (0, 0))
                demand[f.home_machine] = (k + 1, b + f.size_bytes)
        self.demand = demand
        self.transfer_j = np.array([
            sum(costs.energy(h, m.machine_id, b) for h, (_, b) in demand.items() if h != m.machine_id) if costs else 0.0
            for m in fleet
        ])
