"""Deterministic discrete-event simulation of batched multi-site task placement.

Per machine: FIFO queue, nodes provisioned on demand up to ``max_nodes``
(each after a queue wait), one worker per core, node released as soon as
it is idle and the machine has nothing queued.  Idle energy is charged
from node start to release plus the provisioning overhead; machines
without a batch scheduler are charged for the whole run once used.
"""

from __future__ import annotations

import heapq
import json
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import MachineSpec, ProfileStore, TaskSpec
from ..errors import ConfigError, InvariantViolation, SimulationError, UnknownMachineError
from ..sched import schedule_cluster_mhra, schedule_mhra, schedule_round_robin, schedule_single
from ..transfer import CacheLedger, Network, TransferCostModel, plan_batch_transfers
from .metrics import ed2p, edp
from .workloads import StaticWorkload

EVENT_KINDS = ("task_submit", "batch_dispatch", "node_ready", "transfer_done", "task_start", "task_end", "node_release")
_RANK = {k: i for i, k in enumerate(EVENT_KINDS)}
STRATEGY_KINDS = ("cluster-mhra", "mhra", "round-robin", "single")


@dataclass(frozen=True)
class Strategy:
    kind: str
    alpha: float = 0.5
    machine_id: str | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {', '.join(STRATEGY_KINDS)}")
        if self.kind == "single" and not self.machine_id:
            raise ConfigError("strategy 'single' needs a machine id, e.g. single:desktop")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")

    @classmethod
    def parse(cls, text: str, alpha: float = 0.5) -> "Strategy":
        text = text.strip()
        if text.startswith("single"):
            mid = text[len("single") :].strip(":()")
            return cls("single", alpha, mid or None)
        return cls(text, alpha)

    @property
    def label(self) -> str:
        if self.kind == "single":
            return f"single:{self.machine_id}"
        if self.kind == "round-robin":
            return "round-robin"
        return f"{self.kind}(alpha={self.alpha:g})"


@dataclass
class SimulationResult:
    makespan_s: float
    node_energy_j: dict  # {"total", "per_machine", "idle", "dynamic"}
    transfer_energy_j: float
    tasks_completed: int
    per_machine_task_counts: dict
    edp: float
    ed2p: float
    rng_seed: int
    label: str = ""
    workload_hash: str = ""
    batches: int = 0
    config: dict = field(default_factory=dict)
    scheduling_wall_time_s: float = field(default=0.0, compare=False)
    trace: list = field(default_factory=list, compare=False, repr=False)

    @property
    def energy_j(self) -> float:
        return self.node_energy_j["total"]

    def to_dict(self) -> dict:
        r3 = lambda x: round(float(x), 3)  # noqa: E731
        ne = self.node_energy_j
        return {
            "label": self.label,
            "workload_hash": self.workload_hash,
            "makespan_s": r3(self.makespan_s),
            "node_energy_j": {
                "total": r3(ne["total"]),
                "idle": r3(ne["idle"]),
                "dynamic": r3(ne["dynamic"]),
                "per_machine": {k: r3(v) for k, v in ne["per_machine"].items()},
            },
            "transfer_energy_j": r3(self.transfer_energy_j),
            "tasks_completed": self.tasks_completed,
            "per_machine_task_counts": dict(self.per_machine_task_counts),
            "edp": r3(self.edp),
            "ed2p": r3(self.ed2p),
            "rng_seed": self.rng_seed,
            "batches": self.batches,
            "config": self.config,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class _Node:
    index: int
    requested_s: float
    ready_s: float | None = None
    released_s: float | None = None
    busy: int = 0


@dataclass
class _Job:
    task: TaskSpec
    machine: str
    ready_s: float
    duration_s: float
    energy_j: float
    start_s: float | None = None
    end_s: float | None = None
    node: int | None = None


def _stream(seed: int, *keys) -> np.random.Generator:
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(words)


class _Machine:
    def __init__(self, spec: MachineSpec):
        self.spec = spec
        self.queue: deque[_Job] = deque()
        self.nodes: list[_Node] = []
        self.running = 0
        self.completed = 0
        self.requests = 0

    def live_nodes(self):
        return [n for n in self.nodes if n.released_s is None]


class Simulator:
    def __init__(self, workload, strategy: Strategy, fleet: Sequence[MachineSpec], profile_store: ProfileStore,
                 transfer_model: TransferCostModel | None = None, seed: int = 0, batch_window_s: float = 1.0,
                 sigma: float = 0.1, stochastic_queue: bool = True, threshold_j: float | None = None,
                 record_trace: bool = False):
        if not fleet:
            raise SimulationError("no machines to run on")
        if strategy.kind == "single" and strategy.machine_id not in {m.machine_id for m in fleet}:
            raise UnknownMachineError(f"unknown machine_id {strategy.machine_id!r}")
        if batch_window_s < 0 or sigma < 0:
            raise ConfigError("batch_window_s and sigma must be >= 0")
        self.workload = StaticWorkload(workload) if isinstance(workload, (list, tuple)) else workload
        self.strategy = strategy
        self.fleet = list(fleet)
        self.store = profile_store
        self.costs = transfer_model or TransferCostModel(Network(self.fleet))
        self.seed = int(seed)
        self.window = float(batch_window_s)
        self.sigma = float(sigma)
        self.stochastic_queue = stochastic_queue
        self.threshold_j = threshold_j
        self.record_trace = record_trace

    # -- event plumbing -------------------------------------------------
    def _push(self, t, kind, key, payload):
        heapq.heappush(self._events, (t, _RANK[kind], key, self._seq, kind, payload))
        self._seq += 1

    def _log(self, t, kind, **ids):
        if self.record_trace:
            self.trace.append({"time_s": round(t, 6), "kind": kind, **ids})

    # -- sampling -------------------------------------------------------
    def _sample_task(self, task: TaskSpec, machine: str) -> tuple[float, float]:
        pred = self.store.lookup(task.function_id, machine)
        if self.sigma == 0:
            return pred.runtime_s, pred.energy_j
        z = _stream(self.seed, "task", task.task_id, machine).standard_normal(2)
        shift = -0.5 * self.sigma**2
        return (pred.runtime_s * math.exp(self.sigma * z[0] + shift),
                pred.energy_j * math.exp(self.sigma * z[1] + shift))

    def _queue_wait(self, m: _Machine) -> float:
        mean = m.spec.avg_queue_s
        if not self.stochastic_queue or mean == 0:
            return mean
        return float(_stream(self.seed, "queue", m.spec.machine_id, m.requests).exponential(mean))

    # -- scheduling -----------------------------------------------------
    def _schedule(self, tasks):
        s = self.strategy
        kw = dict(ledger=self.ledger)
        if s.kind == "cluster-mhra":
            return schedule_cluster_mhra(tasks, self.fleet, self.store, self.costs, s.alpha, self.threshold_j, **kw)
        if s.kind == "mhra":
            return schedule_mhra(tasks, self.fleet, self.store, self.costs, s.alpha, **kw)
        if s.kind == "round-robin":
            return schedule_round_robin(tasks, self.fleet, self.store, self.costs, s.alpha, **kw)
        return schedule_single(tasks, self.fleet, s.machine_id, self.store, self.costs, s.alpha, **kw)

    def _dispatch_batch(self, now):
        tasks, self.pending = self.pending, []
        self.last_dispatch = now
        self.dispatch_at = None
        if not tasks:
            return
        sched = self._schedule(tasks)
        self.batches += 1
        self.sched_wall += sched.wall_time_s
        where = sched.task_assignment()
        plan = plan_batch_transfers(where, tasks, self.ledger, self.costs)
        self.ledger = plan.ledger
        self.transfer_j += plan.energy_j
        for b in plan.batches:
            finish = now + b.predicted_time_s
            self._push(finish, "transfer_done", f"{b.src}->{b.dst}", (b.src, b.dst))
            for path in b.files:
                self.available.setdefault((b.dst, path), finish)
        touched = []
        for t in tasks:
            mid = where[t.task_id]
            ready = now
            for f in t.input_files:
                if f.home_machine == mid:
                    continue
                ready = max(ready, self.available.get((mid, f.logical_path), now))
            dur, en = self._sample_task(t, mid)
            job = _Job(t, mid, ready, dur, en)
            self.jobs[t.task_id] = job
            self.machines[mid].queue.append(job)
            if mid not in touched:
                touched.append(mid)
        for mid in touched:
            self._provision(self.machines[mid], now)
            self._run(self.machines[mid], now)

    # -- machines -------------------------------------------------------
    def _provision(self, m: _Machine, now):
        if not m.spec.has_batch_scheduler:
            return
        demand = len(m.queue) + m.running
        while len(m.live_nodes()) * m.spec.cores_per_node < demand and len(m.live_nodes()) < m.spec.max_nodes:
            node = _Node(len(m.nodes), now)
            m.nodes.append(node)
            wait = self._queue_wait(m)
            m.requests += 1
            self._push(now + wait, "node_ready", f"{m.spec.machine_id}/{node.index:04d}", (m.spec.machine_id, node.index))

    def _run(self, m: _Machine, now):
        cores = m.spec.cores_per_node
        free = [n for n in m.nodes if n.ready_s is not None and n.released_s is None and n.busy < cores]
        if free and m.queue:
            waiting = deque()
            while m.queue:
                job = m.queue.popleft()
                node = next((n for n in free if n.busy < cores), None)
                if node is None or job.ready_s > now:
                    waiting.append(job)
                    continue
                node.busy += 1
                m.running += 1
                job.start_s, job.node = now, node.index
                self._log(now, "task_start", task_id=job.task.task_id, machine_id=m.spec.machine_id, node=node.index)
                self._push(now + job.duration_s, "task_end", job.task.task_id, job.task.task_id)
            m.queue = waiting
        live = [n for n in m.nodes if n.ready_s is not None and n.released_s is None]
        if m.running > len(live) * cores:
            raise InvariantViolation(f"{m.spec.machine_id}: {m.running} tasks on {len(live)} nodes")
        if m.spec.has_batch_scheduler and not m.queue:
            for n in m.nodes:
                if n.released_s is None and n.busy == 0:
                    self._push(now, "node_release", f"{m.spec.machine_id}/{n.index:04d}", (m.spec.machine_id, n.index))

    def _submit(self, tasks, now):
        for t in tasks:
            self._push(max(now, t.submit_time_s), "task_submit", t.task_id, t)

    # -- main loop ------------------------------------------------------
    def run(self) -> SimulationResult:
        self._events, self._seq = [], 0
        self.trace = []
        self.pending: list[TaskSpec] = []
        self.dispatch_at = None
        self.last_dispatch = -math.inf
        self.ledger = CacheLedger()
        self.available = {}
        self.jobs: dict[str, _Job] = {}
        self.machines = {m.machine_id: _Machine(m) for m in self.fleet}
        self.transfer_j = 0.0
        self.batches = 0
        self.sched_wall = 0.0
        released = 0
        for m in self.machines.values():
            if not m.spec.has_batch_scheduler:
                for k in range(m.spec.max_nodes):
                    m.nodes.append(_Node(k, 0.0))
                    self._push(m.spec.avg_queue_s, "node_ready", f"{m.spec.machine_id}/{k:04d}", (m.spec.machine_id, k))
        initial = self.workload.start()
        released += len(initial)
        self._submit(initial, 0.0)

        while self._events:
            now, _, _, _, kind, payload = heapq.heappop(self._events)
            if kind == "task_submit":
                self._log(now, kind, task_id=payload.task_id)
                self.pending.append(payload)
                if self.dispatch_at is None:
                    self.dispatch_at = max(now, self.last_dispatch + self.window)
                    self._push(self.dispatch_at, "batch_dispatch", "", None)
            elif kind == "batch_dispatch":
                self._log(now, kind, tasks=len(self.pending))
                self._dispatch_batch(now)
            elif kind == "node_ready":
                mid, idx = payload
                m = self.machines[mid]
                m.nodes[idx].ready_s = now
                self._log(now, kind, machine_id=mid, node=idx)
                self._run(m, now)
            elif kind == "transfer_done":
                self._log(now, kind, src=payload[0], dst=payload[1])
                self._run(self.machines[payload[1]], now)
            elif kind == "task_end":
                job = self.jobs[payload]
                m = self.machines[job.machine]
                job.end_s = now
                m.nodes[job.node].busy -= 1
                m.running -= 1
                m.completed += 1
                self._log(now, kind, task_id=payload, machine_id=job.machine, node=job.node)
                new = self.workload.on_complete(payload, now)
                released += len(new)
                self._submit(new, now)
                self._run(m, now)
            elif kind == "node_release":
                mid, idx = payload
                m = self.machines[mid]
                node = m.nodes[idx]
                if node.released_s is None and node.busy == 0 and not m.queue and node.ready_s is not None:
                    node.released_s = now
                    self._log(now, kind, machine_id=mid, node=idx)

        return self._result(released)

    def _result(self, released: int) -> SimulationResult:
        done = [j for j in self.jobs.values() if j.end_s is not None]
        if len(done) != released:
            raise SimulationError(f"{released - len(done)} tasks never finished")
        makespan = max((j.end_s for j in done), default=0.0)
        per_machine, idle_total, dyn_total = {}, 0.0, 0.0
        counts = {}
        for mid, m in self.machines.items():
            spec = m.spec
            dyn = math.fsum(j.energy_j for j in done if j.machine == mid)
            counts[mid] = m.completed
            idle = 0.0
            if spec.has_batch_scheduler:
                for n in m.nodes:
                    if n.ready_s is None:
                        continue
                    end = n.released_s if n.released_s is not None else makespan
                    idle += spec.idle_power_w * (end - n.ready_s + spec.provisioning_overhead_s)
            elif m.completed:
                idle = spec.idle_power_w * spec.max_nodes * (makespan + spec.provisioning_overhead_s)
            per_machine[mid] = idle + dyn
            idle_total += idle
            dyn_total += dyn
        total = idle_total + dyn_total
        return SimulationResult(
            makespan_s=makespan,
            node_energy_j={"total": total, "idle": idle_total, "dynamic": dyn_total, "per_machine": per_machine},
            transfer_energy_j=self.transfer_j,
            tasks_completed=len(done),
            per_machine_task_counts=counts,
            edp=edp(total, makespan),
            ed2p=ed2p(total, makespan),
            rng_seed=self.seed,
            label=self.strategy.label,
            workload_hash=self.workload.fingerprint(),
            batches=self.batches,
            config={
                "strategy": self.strategy.label,
                "alpha": self.strategy.alpha,
                "batch_window_s": self.window,
                "sigma": self.sigma,
                "stochastic_queue": self.stochastic_queue,
                "threshold_j": self.threshold_j,
                "fleet": [m.machine_id for m in self.fleet],
            },
            scheduling_wall_time_s=self.sched_wall,
            trace=self.trace,
        )


def run_simulation(workload, strategy: Strategy, fleet, profile_store, transfer_model=None, seed: int = 0,
                   batch_window_s: float = 1.0, sigma: float = 0.1, deterministic: bool = False,
                   threshold_j: float | None = None, record_trace: bool = False) -> SimulationResult:
    """Run one workload under one strategy.

    ``deterministic`` turns off duration noise and uses mean queue waits.
    """
    return Simulator(
        workload, strategy, fleet, profile_store, transfer_model, seed, batch_window_s,
        sigma=0.0 if deterministic else sigma, stochastic_queue=not deterministic,
        threshold_j=threshold_j, record_trace=record_trace,
    ).run()
