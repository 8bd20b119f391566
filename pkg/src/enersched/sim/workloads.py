"""Synthetic workloads: a static FaaS benchmark mix and a staged molecular-design loop."""

from __future__ import annotations

import hashlib
import json
from typing import Sequence

import numpy as np

from ..catalog import BENCHMARK_INPUTS, BENCHMARK_PROFILES
from ..core import FileRef, Sharing, TaskSpec, workload_hash
from ..errors import ConfigError, ContractViolation


class StaticWorkload:
    """Every task known up front, released at its submit time."""

    def __init__(self, tasks: Sequence[TaskSpec]):
        self.tasks = list(tasks)

    def start(self) -> list[TaskSpec]:
        return list(self.tasks)

    def on_complete(self, task_id: str, now: float) -> list[TaskSpec]:
        return []

    @property
    def size(self) -> int:
        return len(self.tasks)

    def fingerprint(self) -> str:
        return workload_hash(self.tasks)


def gen_synthetic_workload(benchmark_mix="all", count_per_benchmark: int = 256, seed: int = 0, data_home: str | None = "desktop") -> list[TaskSpec]:
    """``count_per_benchmark`` invocations of each benchmark, interleaved in a seeded order.

    With ``data_home`` set, each task reads an input homed there; graph
    benchmarks share one input file each, the rest get their own file.
    """
    if count_per_benchmark < 0:
        raise ContractViolation("count_per_benchmark must be >= 0")
    names = list(BENCHMARK_PROFILES) if benchmark_mix in ("all", None) else list(benchmark_mix)
    unknown = [n for n in names if n not in BENCHMARK_PROFILES]
    if unknown:
        raise ConfigError(f"unknown benchmark ids: {', '.join(unknown)}")
    rng = np.random.default_rng(seed)
    tasks = []
    for name in names:
        sharing, mean_size = BENCHMARK_INPUTS[name]
        sizes = np.maximum(1, mean_size * rng.lognormal(-0.125, 0.5, count_per_benchmark)).astype(int)
        for k in range(count_per_benchmark):
            files = ()
            if data_home is not None:
                if sharing == "shared":
                    files = (FileRef(f"/data/{name}/input.bin", mean_size, data_home, Sharing.SHARED),)
                else:
                    files = (FileRef(f"/data/{name}/{k:05d}.bin", int(sizes[k]), data_home, Sharing.EXCLUSIVE),)
            tasks.append(TaskSpec(f"{name}-{k:05d}", name, files, 0.0))
    order = rng.permutation(len(tasks))
    return [tasks[i] for i in order]


class MolDesignWorkload:
    """Rounds of simulate -> train -> infer, each stage released when the previous finishes.

    The simulator only sees a stage's tasks once they are released, so the
    scheduler never knows the whole graph ahead of time.
    """

    STAGES = ("simulate", "train", "infer")

    def __init__(self, n_rounds: int, sims_per_round: int, infers_per_round: int, seed: int = 0, data_home: str | None = None):
        if min(n_rounds, sims_per_round, infers_per_round) < 1:
            raise ContractViolation("all moldesign counts must be >= 1")
        self.n_rounds = n_rounds
        self.sims_per_round = sims_per_round
        self.infers_per_round = infers_per_round
        self.seed = seed
        self.data_home = data_home
        self._outstanding: set[str] = set()
        self._next = 0

    @property
    def size(self) -> int:
        return self.n_rounds * (self.sims_per_round + 1 + self.infers_per_round)

    def _wave(self, index: int, now: float) -> list[TaskSpec]:
        rnd, stage = divmod(index, 3)
        fid = self.STAGES[stage]
        count = {"simulate": self.sims_per_round, "train": 1, "infer": self.infers_per_round}[fid]
        rng = np.random.default_rng([self.seed, index])
        out = []
        for k in range(count):
            files = ()
            if self.data_home is not None:
                size = int(1_000_000 * rng.lognormal(0.0, 0.3))
                if fid == "train":
                    files = (FileRef(f"/moldesign/r{rnd:03d}/train.h5", size * 50, self.data_home, Sharing.EXCLUSIVE),)
                else:
                    files = (
                        FileRef(f"/moldesign/r{rnd:03d}/model.pt", 5_000_000, self.data_home, Sharing.SHARED),
                        FileRef(f"/moldesign/r{rnd:03d}/{fid}-{k:05d}.xyz", size, self.data_home, Sharing.EXCLUSIVE),
                    )
            out.append(TaskSpec(f"r{rnd:03d}-{fid}-{k:05d}", fid, files, now))
        return out

    def waves(self) -> list[list[TaskSpec]]:
        return [self._wave(i, 0.0) for i in range(3 * self.n_rounds)]

    def _release(self, now: float) -> list[TaskSpec]:
        if self._next >= 3 * self.n_rounds:
            return []
        wave = self._wave(self._next, now)
        self._next += 1
        self._outstanding = {t.task_id for t in wave}
        return wave

    def start(self) -> list[TaskSpec]:
        self._next = 0
        self._outstanding = set()
        return self._release(0.0)

    def on_complete(self, task_id: str, now: float) -> list[TaskSpec]:
        self._outstanding.discard(task_id)
        if self._outstanding:
            return []
        return self._release(now)

    def fingerprint(self) -> str:
        doc = json.dumps(
            ["moldesign", self.n_rounds, self.sims_per_round, self.infers_per_round, self.seed, self.data_home]
        )
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def gen_moldesign_workload(n_rounds: int, sims_per_round: int, infers_per_round: int, seed: int = 0, data_home=None) -> MolDesignWorkload:
    return MolDesignWorkload(n_rounds, sims_per_round, infers_per_round, seed, data_home)
