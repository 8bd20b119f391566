"""Domain types, fleet/workload file IO, and the function profile store."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import ParseError, UnknownMachineError, ValidationError

PROFILE_FIELDS = ("function_id", "machine_id", "mean_runtime_s", "mean_energy_j", "sample_count")


def _require(doc, key, where):
    if key not in doc:
        raise ParseError("missing required field", f"{where}.{key}")
    return doc[key]


def _as_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ParseError(f"expected an integer, got {value!r}", name)
    return value


def _as_float(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected a number, got {value!r}", name)
    value = float(value)
    if not math.isfinite(value):
        raise ParseError(f"expected a finite number, got {value!r}", name)
    return value


def _as_str(value, name):
    if not isinstance(value, str) or not value:
        raise ParseError(f"expected a non-empty string, got {value!r}", name)
    return value


@dataclass(frozen=True)
class MachineSpec:
    """One compute endpoint: a homogeneous node class behind a (possibly absent) batch scheduler."""

    machine_id: str
    cores_per_node: int
    idle_power_w: float
    tdp_w: float = 0.0
    avg_queue_s: float = 0.0
    provisioning_overhead_s: float | None = None
    has_batch_scheduler: bool = True
    max_nodes: int = 1

    def __post_init__(self):
        if self.provisioning_overhead_s is None:
            object.__setattr__(self, "provisioning_overhead_s", float(self.avg_queue_s))
        where = f"machine[{self.machine_id}]"
        if self.cores_per_node < 1:
            raise ValidationError(f"{where}.cores_per_node must be >= 1, got {self.cores_per_node}")
        if self.max_nodes < 1:
            raise ValidationError(f"{where}.max_nodes must be >= 1, got {self.max_nodes}")
        if self.idle_power_w < 0:
            raise ValidationError(f"{where}.idle_power_w must be >= 0, got {self.idle_power_w}")
        if self.avg_queue_s < 0:
            raise ValidationError(f"{where}.avg_queue_s must be >= 0, got {self.avg_queue_s}")
        if self.provisioning_overhead_s < 0:
            raise ValidationError(f"{where}.provisioning_overhead_s must be >= 0")

    @property
    def startup_energy_j(self) -> float:
        """Idle energy charged for bringing up and releasing one node."""
        return self.idle_power_w * self.provisioning_overhead_s

    @classmethod
    def from_dict(cls, doc: Mapping, where: str = "machine") -> "MachineSpec":
        if not isinstance(doc, Mapping):
            raise ParseError(f"expected an object, got {type(doc).__name__}", where)
        mid = _as_str(_require(doc, "machine_id", where), f"{where}.machine_id")
        where = f"machine[{mid}]"
        overhead = doc.get("provisioning_overhead_s")
        batch = doc.get("has_batch_scheduler", True)
        if not isinstance(batch, bool):
            raise ParseError(f"expected a boolean, got {batch!r}", f"{where}.has_batch_scheduler")
        return cls(
            machine_id=mid,
            cores_per_node=_as_int(_require(doc, "cores_per_node", where), f"{where}.cores_per_node"),
            idle_power_w=_as_float(_require(doc, "idle_power_w", where), f"{where}.idle_power_w"),
            tdp_w=_as_float(doc.get("tdp_w", 0.0), f"{where}.tdp_w"),
            avg_queue_s=_as_float(doc.get("avg_queue_s", 0.0), f"{where}.avg_queue_s"),
            provisioning_overhead_s=None if overhead is None else _as_float(overhead, f"{where}.provisioning_overhead_s"),
            has_batch_scheduler=batch,
            max_nodes=_as_int(doc.get("max_nodes", 1), f"{where}.max_nodes"),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def load_fleet(document) -> list[MachineSpec]:
    """Build a validated fleet from a parsed JSON array (or JSON text)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", "fleet") from exc
    if not isinstance(document, list):
        raise ParseError("expected a JSON array of machines", "fleet")
    fleet = [MachineSpec.from_dict(doc, f"fleet[{i}]") for i, doc in enumerate(document)]
    seen = set()
    for m in fleet:
        if m.machine_id in seen:
            raise ValidationError(f"duplicate machine_id {m.machine_id!r}")
        seen.add(m.machine_id)
    return fleet


def read_fleet(path) -> list[MachineSpec]:
    return load_fleet(Path(path).read_text())


def write_fleet(fleet: Sequence[MachineSpec], path) -> None:
    Path(path).write_text(json.dumps([m.to_dict() for m in fleet], indent=2) + "\n")


class Sharing(str, Enum):
    EXCLUSIVE = "exclusive"
    SHARED = "shared"


@dataclass(frozen=True)
class FileRef:
    logical_path: str
    size_bytes: int
    home_machine: str
    sharing: Sharing = Sharing.EXCLUSIVE

    def __post_init__(self):
        if self.size_bytes < 0:
            raise ValidationError(f"file {self.logical_path!r}: size_bytes must be >= 0")
        if not isinstance(self.sharing, Sharing):
            object.__setattr__(self, "sharing", Sharing(self.sharing))

    @classmethod
    def from_dict(cls, doc, where="file") -> "FileRef":
        if not isinstance(doc, Mapping):
            raise ParseError("expected an object", where)
        sharing = doc.get("sharing", "exclusive")
        try:
            sharing = Sharing(sharing)
        except ValueError:
            raise ParseError(f"unknown sharing mode {sharing!r}", f"{where}.sharing") from None
        return cls(
            logical_path=_as_str(_require(doc, "logical_path", where), f"{where}.logical_path"),
            size_bytes=_as_int(_require(doc, "size_bytes", where), f"{where}.size_bytes"),
            home_machine=_as_str(_require(doc, "home_machine", where), f"{where}.home_machine"),
            sharing=sharing,
        )

    def to_dict(self) -> dict:
        return {
            "logical_path": self.logical_path,
            "size_bytes": self.size_bytes,
            "home_machine": self.home_machine,
            "sharing": self.sharing.value,
        }


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    function_id: str
    input_files: tuple[FileRef, ...] = ()
    submit_time_s: float = 0.0

    def __post_init__(self):
        if self.submit_time_s < 0:
            raise ValidationError(f"task {self.task_id!r}: submit_time_s must be >= 0")
        if not isinstance(self.input_files, tuple):
            object.__setattr__(self, "input_files", tuple(self.input_files))

    @classmethod
    def from_dict(cls, doc, where="task") -> "TaskSpec":
        if not isinstance(doc, Mapping):
            raise ParseError("expected an object", where)
        files = doc.get("input_files", [])
        if not isinstance(files, list):
            raise ParseError("expected a list", f"{where}.input_files")
        return cls(
            task_id=_as_str(_require(doc, "task_id", where), f"{where}.task_id"),
            function_id=_as_str(_require(doc, "function_id", where), f"{where}.function_id"),
            input_files=tuple(FileRef.from_dict(f, f"{where}.input_files[{i}]") for i, f in enumerate(files)),
            submit_time_s=_as_float(doc.get("submit_time_s", 0.0), f"{where}.submit_time_s"),
        )

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "function_id": self.function_id,
            "input_files": [f.to_dict() for f in self.input_files],
            "submit_time_s": self.submit_time_s,
        }


def read_workload(path, fleet: Sequence[MachineSpec] | None = None) -> list[TaskSpec]:
    """Read a JSON Lines workload. When a fleet is given, file homes are checked against it."""
    tasks = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", f"line {lineno}") from exc
            tasks.append(TaskSpec.from_dict(doc, f"line {lineno}"))
    validate_workload(tasks, fleet)
    return tasks


def validate_workload(tasks: Sequence[TaskSpec], fleet: Sequence[MachineSpec] | None = None) -> None:
    seen = set()
    known = None if fleet is None else {m.machine_id for m in fleet}
    for t in tasks:
        if t.task_id in seen:
            raise ValidationError(f"duplicate task_id {t.task_id!r}")
        seen.add(t.task_id)
        if known is not None:
            for f in t.input_files:
                if f.home_machine not in known:
                    raise ValidationError(
                        f"task {t.task_id!r}: file {f.logical_path!r} homed on unknown machine {f.home_machine!r}"
                    )


def dump_workload(tasks: Iterable[TaskSpec]) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in tasks)


def write_workload(tasks: Iterable[TaskSpec], path) -> None:
    Path(path).write_text(dump_workload(tasks))


def workload_hash(tasks: Iterable[TaskSpec]) -> str:
    return hashlib.sha256(dump_workload(tasks).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TaskRecord:
    """Observed execution of one task on one worker process."""

    task_id: str
    machine_id: str
    worker_process_id: int
    start_s: float
    end_s: float
    attributed_energy_j: float = 0.0

    def __post_init__(self):
        if self.end_s < self.start_s:
            raise ValidationError(f"task record {self.task_id!r}: end_s < start_s")
        if self.attributed_energy_j < 0:
            raise ValidationError(f"task record {self.task_id!r}: negative attributed energy")

    @property
    def runtime_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class FunctionProfile:
    function_id: str
    machine_id: str
    mean_runtime_s: float = 0.0
    mean_energy_j: float = 0.0
    sample_count: int = 0

    def observe(self, runtime_s: float, energy_j: float) -> None:
        self.sample_count += 1
        n = self.sample_count
        self.mean_runtime_s += (runtime_s - self.mean_runtime_s) / n
        self.mean_energy_j += (energy_j - self.mean_energy_j) / n


class Prediction(NamedTuple):
    runtime_s: float
    energy_j: float
    fallback: bool = False


class ProfileStore:
    """Running-mean runtime/energy per (function, machine).

    Writers are serialized by a lock; readers see whole profiles.
    """

    def __init__(self, fleet: Iterable[MachineSpec] = (), profiles: Iterable[FunctionProfile] = ()):
        self.machines = {m.machine_id: m for m in fleet}
        self._profiles: dict[tuple[str, str], FunctionProfile] = {}
        self._lock = threading.Lock()
        for p in profiles:
            self._profiles[(p.function_id, p.machine_id)] = p

    def __len__(self):
        return len(self._profiles)

    def __iter__(self):
        return iter(sorted(self._profiles.values(), key=lambda p: (p.function_id, p.machine_id)))

    def get(self, function_id: str, machine_id: str) -> FunctionProfile | None:
        return self._profiles.get((function_id, machine_id))

    def set(self, function_id, machine_id, runtime_s, energy_j, sample_count=1) -> FunctionProfile:
        prof = FunctionProfile(function_id, machine_id, float(runtime_s), float(energy_j), int(sample_count))
        with self._lock:
            self._profiles[(function_id, machine_id)] = prof
        return prof

    def update(self, record: TaskRecord, function_id: str) -> FunctionProfile:
        key = (function_id, record.machine_id)
        with self._lock:
            prof = self._profiles.get(key)
            if prof is None:
                prof = self._profiles[key] = FunctionProfile(function_id, record.machine_id)
            prof.observe(record.runtime_s, record.attributed_energy_j)
            return FunctionProfile(**asdict(prof))

    def lookup(self, function_id: str, machine_id: str) -> Prediction:
        machine = self.machines.get(machine_id)
        if machine is None:
            raise UnknownMachineError(f"unknown machine_id {machine_id!r}")
        prof = self._profiles.get((function_id, machine_id))
        if prof is not None and prof.sample_count > 0:
            return Prediction(max(prof.mean_runtime_s, 0.0), max(prof.mean_energy_j, 0.0))
        # cold start: average the machines this function has been seen on
        seen = [
            p for (fid, _), p in self._profiles.items() if fid == function_id and p.sample_count > 0
        ]
        if seen:
            rt = math.fsum(p.mean_runtime_s for p in seen) / len(seen)
            en = math.fsum(p.mean_energy_j for p in seen) / len(seen)
            return Prediction(max(rt, 0.0), max(en, 0.0), True)
        return Prediction(1.0, machine.idle_power_w * 1.0, True)

    @classmethod
    def read_csv(cls, path, fleet: Iterable[MachineSpec] = ()) -> "ProfileStore":
        store = cls(fleet)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != PROFILE_FIELDS:
                raise ParseError(f"expected header {','.join(PROFILE_FIELDS)}", str(path))
            for lineno, row in enumerate(reader, 2):
                where = f"{path}:{lineno}"
                try:
                    rt = float(row["mean_runtime_s"])
                    en = float(row["mean_energy_j"])
                    n = int(row["sample_count"])
                except (TypeError, ValueError) as exc:
                    raise ParseError(str(exc), where) from exc
                if n < 0 or (n > 0 and (rt <= 0 or en < 0)):
                    raise ValidationError(f"{where}: invalid profile values")
                store.set(row["function_id"], row["machine_id"], rt, en, n)
        return store

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROFILE_FIELDS)
            for p in self:
                w.writerow([p.function_id, p.machine_id, repr(p.mean_runtime_s), repr(p.mean_energy_j), p.sample_count])


def update_profile(store: ProfileStore, task_record: TaskRecord, function_id: str) -> FunctionProfile:
    return store.update(task_record, function_id)


def lookup_prediction(store: ProfileStore, function_id: str, machine_id: str) -> Prediction:
    return store.lookup(function_id, machine_id)
