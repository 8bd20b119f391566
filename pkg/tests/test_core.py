import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enersched.catalog import FLEET_TABLE, default_fleet
from enersched.core import (
    FileRef,
    MachineSpec,
    ProfileStore,
    Sharing,
    TaskRecord,
    TaskSpec,
    load_fleet,
    lookup_prediction,
    read_fleet,
    read_workload,
    update_profile,
    workload_hash,
    write_fleet,
    write_workload,
)
from enersched.errors import ParseError, UnknownMachineError, ValidationError

TABLE_DOC = [
    {"machine_id": mid, "cores_per_node": cores, "idle_power_w": idle, "tdp_w": tdp, "avg_queue_s": q,
     "has_batch_scheduler": batch}
    for mid, cores, tdp, idle, q, batch in FLEET_TABLE
]


def record(rt, energy=0.0, machine="m"):
    return TaskRecord("t", machine, 1, 0.0, rt, energy)


def test_load_fleet_table_rows():
    fleet = load_fleet(json.dumps(TABLE_DOC))
    assert len(fleet) == 4
    desktop, theta = fleet[0], fleet[1]
    assert (desktop.cores_per_node, desktop.idle_power_w, desktop.avg_queue_s) == (16, 6.51, 0.0)
    assert (theta.cores_per_node, theta.idle_power_w, theta.avg_queue_s) == (64, 110.0, 32.0)
    assert theta.provisioning_overhead_s == 32.0


def test_load_fleet_empty_and_idempotent():
    assert load_fleet([]) == []
    assert load_fleet(TABLE_DOC) == load_fleet(TABLE_DOC)


def test_load_fleet_rejects_zero_cores():
    doc = [dict(TABLE_DOC[0], cores_per_node=0)]
    with pytest.raises(ValidationError):
        load_fleet(doc)


def test_load_fleet_duplicate_id():
    with pytest.raises(ValidationError):
        load_fleet([TABLE_DOC[0], TABLE_DOC[0]])


def test_load_fleet_parse_error_names_field():
    doc = [dict(TABLE_DOC[0], idle_power_w="lots")]
    with pytest.raises(ParseError) as err:
        load_fleet(doc)
    assert "idle_power_w" in str(err.value)


def test_fleet_file_round_trip(tmp_path):
    path = tmp_path / "fleet.json"
    write_fleet(default_fleet(), path)
    assert read_fleet(path) == default_fleet()


def test_update_profile_running_mean():
    store = ProfileStore([MachineSpec("m", 1, 1.0)])
    store.set("f", "m", 10.0, 0.0, sample_count=1)
    prof = update_profile(store, record(20.0), "f")
    assert prof.mean_runtime_s == 15.0 and prof.sample_count == 2


def test_update_profile_first_sample():
    store = ProfileStore([MachineSpec("m", 1, 1.0)])
    prof = update_profile(store, record(5.0, 100.0), "f")
    assert (prof.mean_runtime_s, prof.mean_energy_j, prof.sample_count) == (5.0, 100.0, 1)


def test_update_profile_thousand_samples():
    store = ProfileStore([MachineSpec("m", 1, 1.0)])
    for i in range(1, 1001):
        prof = update_profile(store, record(float(i)), "f")
    assert prof.mean_runtime_s == pytest.approx(1001 * 1000 / 2 / 1000, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=40), st.randoms())
def test_update_profile_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    means = []
    for order in (values, shuffled):
        store = ProfileStore([MachineSpec("m", 1, 1.0)])
        for v in order:
            prof = update_profile(store, record(v, v), "f")
        means.append(prof.mean_runtime_s)
    assert means[0] == pytest.approx(means[1], rel=1e-9)


def test_lookup_known_profile():
    fleet = [MachineSpec("a", 1, 5.0), MachineSpec("b", 1, 7.0)]
    store = ProfileStore(fleet)
    store.set("f", "a", 12.0, 30.0)
    pred = lookup_prediction(store, "f", "a")
    assert (pred.runtime_s, pred.energy_j, pred.fallback) == (12.0, 30.0, False)


def test_lookup_cold_start_from_other_machine():
    fleet = [MachineSpec("a", 1, 5.0), MachineSpec("b", 1, 7.0)]
    store = ProfileStore(fleet)
    store.set("f", "a", 10.0, 50.0)
    pred = lookup_prediction(store, "f", "b")
    assert (pred.runtime_s, pred.energy_j, pred.fallback) == (10.0, 50.0, True)


def test_lookup_unseen_everywhere():
    fleet = [MachineSpec("a", 1, 5.0), MachineSpec("b", 1, 7.0)]
    pred = lookup_prediction(ProfileStore(fleet), "g", "b")
    assert (pred.runtime_s, pred.energy_j, pred.fallback) == (1.0, 7.0, True)


def test_lookup_unknown_machine():
    with pytest.raises(UnknownMachineError):
        lookup_prediction(ProfileStore([MachineSpec("a", 1, 5.0)]), "f", "zz")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ab"), st.floats(0.001, 1e3), st.floats(0, 1e5)), max_size=20),
       st.sampled_from("abc"))
def test_lookup_never_negative(observations, machine):
    fleet = [MachineSpec(m, 1, 3.0) for m in "abc"]
    store = ProfileStore(fleet)
    for mid, rt, en in observations:
        update_profile(store, record(rt, en, mid), "f")
    pred = lookup_prediction(store, "f", machine)
    assert pred.runtime_s >= 0 and pred.energy_j >= 0


def test_profiles_csv_round_trip(tmp_path):
    fleet = default_fleet()
    store = ProfileStore(fleet)
    store.set("f", "theta", 1.25, 3.5, 4)
    store.set("g", "ic", 0.1, 0.2, 1)
    path = tmp_path / "profiles.csv"
    store.write_csv(path)
    assert path.read_text().splitlines()[0] == "function_id,machine_id,mean_runtime_s,mean_energy_j,sample_count"
    again = ProfileStore.read_csv(path, fleet)
    assert again.get("f", "theta") == store.get("f", "theta")
    assert again.get("g", "ic") == store.get("g", "ic")


def test_workload_round_trip(tmp_path):
    tasks = [
        TaskSpec("t1", "f", (FileRef("/x", 10, "desktop", Sharing.SHARED),), 1.5),
        TaskSpec("t2", "g"),
    ]
    path = tmp_path / "w.jsonl"
    write_workload(tasks, path)
    back = read_workload(path, default_fleet())
    assert back == tasks
    assert workload_hash(back) == workload_hash(tasks)


def test_workload_unknown_home(tmp_path):
    path = tmp_path / "w.jsonl"
    write_workload([TaskSpec("t", "f", (FileRef("/x", 1, "mars"),))], path)
    with pytest.raises(ValidationError):
        read_workload(path, default_fleet())


def test_machine_spec_startup_energy():
    m = MachineSpec("x", 4, 110.0, avg_queue_s=32.0)
    assert m.startup_energy_j == pytest.approx(3520.0)
    assert np.isclose(MachineSpec("y", 4, 10.0, avg_queue_s=5.0, provisioning_overhead_s=0.0).startup_energy_j, 0.0)
