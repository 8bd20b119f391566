import json
import math
from collections import defaultdict

import pytest

from enersched.catalog import MOLDESIGN_PROFILES, profile_store, default_fleet
from enersched.core import FileRef, MachineSpec, Sharing, TaskSpec
from enersched.errors import ConfigError, ContractViolation, UnknownMachineError, ValidationError
from enersched.sim import (
    EVENT_KINDS,
    Strategy,
    compare_results,
    ed2p,
    edp,
    gen_moldesign_workload,
    gen_synthetic_workload,
    run_simulation,
)
from enersched.transfer import Network, TransferCostModel
from conftest import store_for

DESKTOP_LIKE = MachineSpec("desk", 16, 6.51, avg_queue_s=0.0, provisioning_overhead_s=0.0, has_batch_scheduler=False)


def test_single_task_accounting():
    store = store_for([DESKTOP_LIKE], {"f": {"desk": (10, 100)}})
    r = run_simulation([TaskSpec("t", "f")], Strategy("single", machine_id="desk"), [DESKTOP_LIKE], store, deterministic=True)
    assert r.makespan_s == 10.0
    assert r.energy_j == pytest.approx(165.1, abs=1e-9)
    assert r.edp == pytest.approx(1651.0) and r.ed2p == pytest.approx(16510.0)


def test_two_waves_on_four_cores():
    m = MachineSpec("m", 4, 1.0, has_batch_scheduler=False)
    store = store_for([m], {"f": {"m": (10, 1)}})
    tasks = [TaskSpec(f"t{i}", "f") for i in range(8)]
    r = run_simulation(tasks, Strategy("single", machine_id="m"), [m], store, deterministic=True)
    assert r.makespan_s == 20.0


def test_batch_node_queue_and_release():
    m = MachineSpec("hpc", 2, 100.0, avg_queue_s=30.0, provisioning_overhead_s=5.0, max_nodes=3)
    store = store_for([m], {"f": {"hpc": (10, 50)}})
    tasks = [TaskSpec(f"t{i}", "f") for i in range(5)]
    r = run_simulation(tasks, Strategy("single", machine_id="hpc"), [m], store, deterministic=True)
    # three nodes arrive at 30 s; two run 2 tasks each, the third one task, all done at 40 s
    assert r.makespan_s == 40.0
    assert r.node_energy_j["idle"] == pytest.approx(3 * 100 * (10 + 5))
    assert r.node_energy_j["dynamic"] == pytest.approx(250.0)


def test_edp_examples():
    assert edp(33.5e3, 640) / edp(54.5e3, 175) == pytest.approx(2.248, abs=5e-4)
    assert edp(66.1e3, 209) / edp(54.5e3, 175) == pytest.approx(1.448, abs=5e-4)
    assert edp(0, 123) == 0 and edp(2, 3) == 6
    assert ed2p(66.1e3, 209) / ed2p(54.5e3, 175) == pytest.approx(1.73, abs=5e-3)
    assert ed2p(0, 9) == 0 and ed2p(1, 2) == 4


def test_synthetic_workload_shape():
    w = gen_synthetic_workload()
    assert len(w) == 1792 and len({t.task_id for t in w}) == 1792
    assert gen_synthetic_workload(count_per_benchmark=0) == []
    assert gen_synthetic_workload(seed=5) == gen_synthetic_workload(seed=5)
    with pytest.raises(ConfigError):
        gen_synthetic_workload(["not_a_benchmark"])


def test_moldesign_structure():
    w = gen_moldesign_workload(1, 2, 3)
    assert w.size == 6
    assert [len(x) for x in w.waves()] == [2, 1, 3]
    assert gen_moldesign_workload(3, 2, 3).size == 3 * (2 + 1 + 3)
    with pytest.raises(ContractViolation):
        gen_moldesign_workload(0, 1, 1)


def _moldesign_run(strategy="cluster-mhra", rounds=3, **kw):
    fleet = default_fleet(["desktop", "ic", "faster"])
    store = profile_store(fleet, MOLDESIGN_PROFILES)
    w = gen_moldesign_workload(rounds, 6, 5, seed=2, data_home="desktop")
    costs = TransferCostModel(Network(fleet))
    return run_simulation(w, Strategy.parse(strategy, 0.5), fleet, store, costs, record_trace=True, **kw), w


def test_moldesign_waves_strictly_ordered():
    r, w = _moldesign_run()
    assert r.tasks_completed == w.size
    start, end = {}, {}
    for e in r.trace:
        if e["kind"] == "task_start":
            start[e["task_id"]] = e["time_s"]
        elif e["kind"] == "task_end":
            end[e["task_id"]] = e["time_s"]
    waves = w.waves()
    for prev, nxt in zip(waves, waves[1:]):
        assert max(end[t.task_id] for t in prev) <= min(start[t.task_id] for t in nxt)


def _replay(trace, fleet):
    """Check capacity and causality from the event log alone."""
    cores = {m.machine_id: m.cores_per_node for m in fleet}
    live = defaultdict(int)
    running = defaultdict(int)
    where = {}
    submitted, dispatches, done_transfers = {}, [], []
    last = -math.inf
    for e in trace:
        assert e["time_s"] >= last
        last = e["time_s"]
        kind = e["kind"]
        if kind == "task_submit":
            submitted[e["task_id"]] = e["time_s"]
        elif kind == "batch_dispatch":
            dispatches.append(e["time_s"])
        elif kind == "node_ready":
            live[e["machine_id"]] += 1
        elif kind == "node_release":
            live[e["machine_id"]] -= 1
            assert live[e["machine_id"]] >= 0
        elif kind == "transfer_done":
            done_transfers.append((e["time_s"], e["src"], e["dst"]))
        elif kind == "task_start":
            mid = e["machine_id"]
            running[mid] += 1
            where[e["task_id"]] = (mid, e["time_s"])
            assert running[mid] <= live[mid] * cores[mid]
            assert e["time_s"] >= submitted[e["task_id"]]
            assert any(submitted[e["task_id"]] <= d <= e["time_s"] for d in dispatches)
        elif kind == "task_end":
            running[e["machine_id"]] -= 1
    return where, done_transfers


def test_capacity_and_causality_with_transfers():
    fleet = default_fleet()
    tasks = gen_synthetic_workload(count_per_benchmark=30, seed=9)
    # stagger submissions so several batches are formed
    tasks = [TaskSpec(t.task_id, t.function_id, t.input_files, float(i // 40) * 2.5) for i, t in enumerate(tasks)]
    costs = TransferCostModel(Network(fleet))
    r = run_simulation(tasks, Strategy("round-robin"), fleet, profile_store(fleet), costs, seed=3, record_trace=True)
    assert r.tasks_completed == len(tasks) and r.batches > 1
    where, transfers = _replay(r.trace, fleet)
    for t in tasks:
        mid, started = where[t.task_id]
        for f in t.input_files:
            if f.home_machine != mid:
                assert any(tt <= started and s == f.home_machine and d == mid for tt, s, d in transfers)


def test_energy_conservation_and_separate_transfer_energy():
    fleet = default_fleet()
    tasks = gen_synthetic_workload(count_per_benchmark=50, seed=1)
    costs = TransferCostModel(Network(fleet))
    r = run_simulation(tasks, Strategy("round-robin"), fleet, profile_store(fleet), costs, seed=8)
    ne = r.node_energy_j
    assert ne["total"] == pytest.approx(ne["idle"] + ne["dynamic"], rel=1e-12)
    assert sum(ne["per_machine"].values()) == pytest.approx(ne["total"], rel=1e-12)
    assert r.transfer_energy_j > 0
    assert min(ne["idle"], ne["dynamic"], r.transfer_energy_j) >= 0


def test_dynamic_energy_is_sum_of_sampled_tasks():
    m = MachineSpec("m", 8, 3.0, has_batch_scheduler=False)
    store = store_for([m], {"f": {"m": (4, 40)}})
    tasks = [TaskSpec(f"t{i}", "f") for i in range(20)]
    det = run_simulation(tasks, Strategy("single", machine_id="m"), [m], store, deterministic=True)
    assert det.node_energy_j["dynamic"] == pytest.approx(800.0)
    noisy = run_simulation(tasks, Strategy("single", machine_id="m"), [m], store, seed=1)
    assert noisy.node_energy_j["dynamic"] != det.node_energy_j["dynamic"]
    assert noisy.node_energy_j["dynamic"] == pytest.approx(800.0, rel=0.1)


def test_makespan_at_least_longest_task():
    fleet = default_fleet()
    store = profile_store(fleet)
    r = run_simulation(gen_synthetic_workload(count_per_benchmark=10), Strategy("mhra", 0.5), fleet, store, deterministic=True)
    # the slowest benchmark takes at least its fastest-machine runtime
    longest = min(store.get("video_processing", m.machine_id).mean_runtime_s for m in fleet)
    assert r.makespan_s >= longest


def test_full_synthetic_batch_completes(table_fleet, bench_store):
    w = gen_synthetic_workload()
    r = run_simulation(w, Strategy("cluster-mhra", 0.5), table_fleet, bench_store, TransferCostModel(Network(table_fleet)))
    assert r.tasks_completed == 1792
    assert sum(r.per_machine_task_counts.values()) == 1792


def test_determinism_same_seed():
    a, _ = _moldesign_run(seed=42)
    b, _ = _moldesign_run(seed=42)
    c, _ = _moldesign_run(seed=43)
    assert a.dumps() == b.dumps() and a.trace == b.trace
    assert a.to_dict()["node_energy_j"] != c.to_dict()["node_energy_j"]


def test_event_kind_order():
    assert EVENT_KINDS.index("task_submit") < EVENT_KINDS.index("node_ready") < EVENT_KINDS.index("transfer_done")
    assert EVENT_KINDS.index("task_start") < EVENT_KINDS.index("task_end") < EVENT_KINDS.index("node_release")


def test_strategy_errors():
    with pytest.raises(ConfigError):
        Strategy.parse("fastest")
    with pytest.raises(ConfigError):
        Strategy("mhra", alpha=2.0)
    fleet = [DESKTOP_LIKE]
    with pytest.raises(UnknownMachineError):
        run_simulation([TaskSpec("t", "f")], Strategy.parse("single:nowhere"), fleet, store_for(fleet, {}))
    assert Strategy.parse("single:desk").machine_id == "desk"


def _doc(label, energy, runtime, wh="w"):
    return {"label": label, "makespan_s": runtime, "node_energy_j": {"total": energy}, "transfer_energy_j": 0.0, "workload_hash": wh}


def test_compare_rules():
    rows = compare_results([_doc("a", 10.0, 5.0), _doc("b", 10.0, 5.0)])
    assert all(r["edp_norm"] == 1.0 and r["ed2p_norm"] == 1.0 for r in rows)
    with pytest.raises(ContractViolation):
        compare_results([_doc("a", 1, 1)])
    with pytest.raises(ValidationError):
        compare_results([_doc("a", 1, 1, "x"), _doc("b", 1, 1, "y")])


def test_result_document_round_trips():
    r, _ = _moldesign_run(rounds=1)
    doc = json.loads(r.dumps())
    assert doc["tasks_completed"] == r.tasks_completed
    assert set(doc["node_energy_j"]) == {"total", "idle", "dynamic", "per_machine"}
    assert doc["config"]["strategy"] == "cluster-mhra(alpha=0.5)"
