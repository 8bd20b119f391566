"""Built-in machine fleet and synthetic function profiles.

The fleet mirrors the four testbed machines (cores per node, idle power
for all sockets, mean batch-queue wait).  Node counts per machine are not
published; four nodes per HPC machine is our choice.

Profiles are synthetic: they encode the qualitative pattern reported for
the benchmarks (a small, frugal desktop; a fast but power-hungry modern
cluster; an older, slow machine; no machine best at everything), not
measured values.
"""

from __future__ import annotations

from .core import MachineSpec, ProfileStore

FLEET_TABLE = (
    # machine_id, cores, tdp_w, idle_w, avg_queue_s, batch scheduler
    ("desktop", 16, 65.0, 6.51, 0.0, False),
    ("theta", 64, 215.0, 110.0, 32.0, True),
    ("ic", 48, 205.0, 136.0, 24.0, True),
    ("faster", 64, 205.0, 205.0, 22.0, True),
)
HPC_MAX_NODES = 4


def default_fleet(machines=None) -> list[MachineSpec]:
    fleet = [
        MachineSpec(
            machine_id=mid,
            cores_per_node=cores,
            idle_power_w=idle,
            tdp_w=tdp,
            avg_queue_s=queue,
            has_batch_scheduler=batch,
            max_nodes=HPC_MAX_NODES if batch else 1,
        )
        for mid, cores, tdp, idle, queue, batch in FLEET_TABLE
    ]
    if machines is not None:
        fleet = [m for m in fleet if m.machine_id in set(machines)]
    return fleet


# (runtime_s, dynamic energy_j) per machine
BENCHMARK_PROFILES = {
    "graph_bfs": {"desktop": (1.2, 6.0), "theta": (6.0, 60.0), "ic": (2.0, 30.0), "faster": (0.8, 25.0)},
    "graph_mst": {"desktop": (1.5, 8.0), "theta": (7.0, 70.0), "ic": (2.5, 35.0), "faster": (1.0, 30.0)},
    "graph_pagerank": {"desktop": (3.0, 15.0), "theta": (12.0, 110.0), "ic": (40.0, 300.0), "faster": (0.6, 18.0)},
    "compression": {"desktop": (6.0, 40.0), "theta": (18.0, 200.0), "ic": (5.0, 70.0), "faster": (4.0, 80.0)},
    "dna_visualization": {"desktop": (8.0, 60.0), "theta": (25.0, 300.0), "ic": (6.0, 500.0), "faster": (5.0, 120.0)},
    "thumbnail": {"desktop": (1.0, 5.0), "theta": (4.0, 40.0), "ic": (0.9, 15.0), "faster": (1.1, 22.0)},
    "video_processing": {"desktop": (10.0, 90.0), "theta": (30.0, 400.0), "ic": (8.0, 150.0), "faster": (6.0, 160.0)},
}

# logical input per benchmark: (sharing, mean size in bytes); graphs share one input per benchmark
BENCHMARK_INPUTS = {
    "graph_bfs": ("shared", 20_000_000),
    "graph_mst": ("shared", 20_000_000),
    "graph_pagerank": ("shared", 20_000_000),
    "compression": ("exclusive", 8_000_000),
    "dna_visualization": ("exclusive", 2_000_000),
    "thumbnail": ("exclusive", 1_000_000),
    "video_processing": ("exclusive", 10_000_000),
}

# training is quick and frugal on the desktop and slow elsewhere; simulation and
# inference are embarrassingly parallel and fastest on the big cluster
MOLDESIGN_PROFILES = {
    "simulate": {"desktop": (60.0, 900.0), "theta": (80.0, 1500.0), "ic": (40.0, 700.0), "faster": (20.0, 400.0)},
    "train": {"desktop": (40.0, 500.0), "theta": (400.0, 40000.0), "ic": (350.0, 30000.0), "faster": (300.0, 25000.0)},
    "infer": {"desktop": (20.0, 250.0), "theta": (30.0, 600.0), "ic": (15.0, 300.0), "faster": (8.0, 150.0)},
}


def profile_store(fleet, table=None) -> ProfileStore:
    """A store holding ``table`` (default: the benchmark profiles) for machines in ``fleet``."""
    table = BENCHMARK_PROFILES if table is None else table
    store = ProfileStore(fleet)
    ids = {m.machine_id for m in fleet}
    for fid, per_machine in table.items():
        for mid, (rt, en) in per_machine.items():
            if mid in ids:
                store.set(fid, mid, rt, en, sample_count=1)
    return store
