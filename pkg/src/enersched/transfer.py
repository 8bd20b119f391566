"""Inter-site transfer cost: hop-based energy, regression-based time, batched planning."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import MachineSpec, Sharing, TaskSpec
from .errors import InsufficientDataError, ParseError, PlanningError, UnknownPathError, ValidationError
from .power import least_squares

BITS_PER_BYTE = 8
MIN_OBSERVATIONS = 3
HISTORY_HEADER = ("src", "dst", "n_files", "total_bytes", "seconds")


@dataclass(frozen=True)
class HopDevice:
    p_max_w: float
    bandwidth_bps: float

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValidationError(f"hop bandwidth must be > 0, got {self.bandwidth_bps}")
        if self.p_max_w < 0:
            raise ValidationError(f"hop p_max_w must be >= 0, got {self.p_max_w}")

    @property
    def joules_per_bit(self) -> float:
        return self.p_max_w / self.bandwidth_bps


DEVICE_CLASSES = {
    "core": HopDevice(4000.0, 1e11),
    "edge": HopDevice(1000.0, 4e10),
    "switch": HopDevice(300.0, 1e10),
}
DTN_CLASS = "edge"
FILESYSTEM_CLASS = "switch"
WAN_CLASSES = ("switch", "edge", "core", "edge", "switch")


@dataclass(frozen=True)
class NetworkPath:
    src_machine: str
    dst_machine: str
    per_hop_devices: tuple[HopDevice, ...] = ()

    @property
    def hop_count(self) -> int:
        return len(self.per_hop_devices)

    @property
    def bottleneck_bps(self) -> float:
        return min(h.bandwidth_bps for h in self.per_hop_devices)


def default_path(src: MachineSpec, dst: MachineSpec) -> NetworkPath:
    """WAN hops plus a DTN and a shared file-system hop at each batch-scheduled end."""
    if src.machine_id == dst.machine_id:
        return NetworkPath(src.machine_id, dst.machine_id)
    classes = list(WAN_CLASSES)
    for end in (src, dst):
        if end.has_batch_scheduler:
            classes += [DTN_CLASS, FILESYSTEM_CLASS]
    return NetworkPath(src.machine_id, dst.machine_id, tuple(DEVICE_CLASSES[c] for c in classes))


def transfer_energy(size_bytes: float, path: NetworkPath) -> float:
    """Joules to push ``size_bytes`` across every hop of ``path``."""
    bits = size_bytes * BITS_PER_BYTE
    return math.fsum(bits * hop.joules_per_bit for hop in path.per_hop_devices)


class Network:
    """Paths between machines; pairs not listed explicitly get :func:`default_path`."""

    def __init__(self, fleet: Sequence[MachineSpec], paths: Mapping[tuple[str, str], NetworkPath] | None = None):
        self.machines = {m.machine_id: m for m in fleet}
        self._paths = dict(paths or {})

    def path(self, src: str, dst: str) -> NetworkPath:
        p = self._paths.get((src, dst))
        if p is not None:
            return p
        try:
            p = default_path(self.machines[src], self.machines[dst])
        except KeyError as exc:
            raise UnknownPathError(f"no path {src}->{dst}: unknown machine {exc.args[0]!r}") from None
        self._paths[(src, dst)] = p
        return p


def _parse_hop(entry, where) -> HopDevice:
    if isinstance(entry, str):
        entry = {"class": entry}
    if not isinstance(entry, Mapping):
        raise ParseError("expected a hop object", where)
    if "class" in entry:
        try:
            return DEVICE_CLASSES[entry["class"]]
        except KeyError:
            raise ParseError(f"unknown device class {entry['class']!r}", f"{where}.class") from None
    try:
        return HopDevice(float(entry["p_max_w"]), float(entry["bandwidth_bps"]))
    except KeyError as exc:
        raise ParseError("missing field", f"{where}.{exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), where) from None


def load_network(document, fleet: Sequence[MachineSpec]) -> Network:
    """Parse ``{"src->dst": [hop, ...]}`` where a hop is a class name or explicit device."""
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, Mapping):
        raise ParseError("expected a JSON object keyed by 'src->dst'", "network")
    known = {m.machine_id for m in fleet}
    paths = {}
    for key, hops in document.items():
        src, sep, dst = key.partition("->")
        if not sep or not src or not dst:
            raise ParseError(f"bad path key {key!r}", "network")
        for mid in (src, dst):
            if mid not in known:
                raise ValidationError(f"network path {key!r} references unknown machine {mid!r}")
        if not isinstance(hops, list):
            raise ParseError("expected a list of hops", f"network[{key}]")
        paths[(src, dst)] = NetworkPath(src, dst, tuple(_parse_hop(h, f"network[{key}][{i}]") for i, h in enumerate(hops)))
    return Network(fleet, paths)


def read_network(path, fleet) -> Network:
    return load_network(Path(path).read_text(), fleet)


@dataclass(frozen=True)
class TransferCoefficients:
    seconds_per_file: float
    seconds_per_byte: float
    intercept_s: float

    def predict(self, n_files: float, total_bytes: float) -> float:
        return max(0.0, self.intercept_s + self.seconds_per_file * n_files + self.seconds_per_byte * total_bytes)


@dataclass(frozen=True)
class TransferObservation:
    src: str
    dst: str
    n_files: int
    total_bytes: int
    seconds: float


@dataclass
class TransferTimeModel:
    coefficients: dict[tuple[str, str], TransferCoefficients] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            f"{s}->{d}": {"seconds_per_file": c.seconds_per_file, "seconds_per_byte": c.seconds_per_byte, "intercept_s": c.intercept_s}
            for (s, d), c in sorted(self.coefficients.items())
        }

    @classmethod
    def from_dict(cls, doc) -> "TransferTimeModel":
        out = {}
        for key, c in doc.items():
            src, _, dst = key.partition("->")
            try:
                out[(src, dst)] = TransferCoefficients(
                    float(c["seconds_per_file"]), float(c["seconds_per_byte"]), float(c["intercept_s"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed coefficients: {exc!r}", f"transfer_model[{key}]") from None
        return cls(out)


def fit_transfer_model(history: Iterable[TransferObservation]) -> TransferTimeModel:
    """Per-path OLS of seconds on (file count, bytes) with an intercept."""
    by_path = defaultdict(list)
    for obs in history:
        by_path[(obs.src, obs.dst)].append(obs)
    coeffs = {}
    for key in sorted(by_path):
        rows = by_path[key]
        if len(rows) < MIN_OBSERVATIONS:
            raise InsufficientDataError(
                f"path {key[0]}->{key[1]}: need at least {MIN_OBSERVATIONS} observations, got {len(rows)}"
            )
        design = np.array([[r.n_files, r.total_bytes, 1.0] for r in rows], dtype=float)
        target = np.array([r.seconds for r in rows], dtype=float)
        a, b, c = least_squares(design, target, ("n_files", "total_bytes", "intercept"))
        coeffs[key] = TransferCoefficients(float(a), float(b), float(c))
    return TransferTimeModel(coeffs)


def _path_key(path) -> tuple[str, str]:
    if isinstance(path, NetworkPath):
        return (path.src_machine, path.dst_machine)
    return tuple(path)


def predict_transfer_time(model: TransferTimeModel, path, n_files: float, total_bytes: float) -> float:
    key = _path_key(path)
    try:
        coeffs = model.coefficients[key]
    except KeyError:
        raise UnknownPathError(f"no fitted transfer model for {key[0]}->{key[1]}") from None
    return coeffs.predict(n_files, total_bytes)


def read_history(path) -> list[TransferObservation]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != HISTORY_HEADER:
            raise ParseError(f"expected header {','.join(HISTORY_HEADER)}", str(path))
        for lineno, row in enumerate(reader, 2):
            try:
                out.append(
                    TransferObservation(
                        row["src"], row["dst"], int(row["n_files"]), int(row["total_bytes"]), float(row["seconds"])
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), f"{path}:{lineno}") from None
    return out


def read_transfer_model(path) -> TransferTimeModel:
    return TransferTimeModel.from_dict(json.loads(Path(path).read_text()))


def write_transfer_model(model: TransferTimeModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


class TransferCostModel:
    """Time and energy of one batch between two machines.

    Paths without a fitted regression fall back to size over the path's
    bottleneck bandwidth.
    """

    def __init__(self, network: Network, time_model: TransferTimeModel | None = None):
        self.network = network
        self.time_model = time_model or TransferTimeModel()

    def time(self, src: str, dst: str, n_files: int, total_bytes: int) -> float:
        if src == dst or n_files == 0:
            return 0.0
        coeffs = self.time_model.coefficients.get((src, dst))
        if coeffs is not None:
            return coeffs.predict(n_files, total_bytes)
        path = self.network.path(src, dst)
        if not path.per_hop_devices:
            return 0.0
        return total_bytes * BITS_PER_BYTE / path.bottleneck_bps

    def energy(self, src: str, dst: str, total_bytes: int) -> float:
        if src == dst:
            return 0.0
        return transfer_energy(total_bytes, self.network.path(src, dst))


class CacheLedger:
    """Shared files already resident (or in flight) on a machine."""

    def __init__(self, entries: Iterable[tuple[str, str]] = ()):
        self._entries = set(entries)

    def __contains__(self, item) -> bool:
        return item in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries))

    def add(self, machine_id: str, logical_path: str) -> None:
        self._entries.add((machine_id, logical_path))

    def copy(self) -> "CacheLedger":
        return CacheLedger(self._entries)


@dataclass(frozen=True)
class TransferBatch:
    src: str
    dst: str
    files: tuple[str, ...]
    total_bytes: int
    predicted_time_s: float
    predicted_energy_j: float


@dataclass
class TransferPlan:
    batches: list[TransferBatch]
    ledger: CacheLedger

    @property
    def total_bytes(self) -> int:
        return sum(b.total_bytes for b in self.batches)

    @property
    def energy_j(self) -> float:
        return math.fsum(b.predicted_energy_j for b in self.batches)

    def batch(self, src: str, dst: str) -> TransferBatch | None:
        for b in self.batches:
            if b.src == src and b.dst == dst:
                return b
        return None


def file_demand(tasks: Iterable[TaskSpec]) -> dict[str, tuple[int, int]]:
    """Files needed by a group of tasks, by home machine: ``{home: (n_files, bytes)}``.

    Shared files count once per group; exclusive files count per task.
    """
    counts: dict[str, list] = {}
    shared_seen = set()
    for t in tasks:
        for f in t.input_files:
            if f.sharing is Sharing.SHARED:
                if f.logical_path in shared_seen:
                    continue
                shared_seen.add(f.logical_path)
            acc = counts.setdefault(f.home_machine, [0, 0])
            acc[0] += 1
            acc[1] += f.size_bytes
    return {home: (n, b) for home, (n, b) in counts.items()}


def plan_batch_transfers(
    assignments: Mapping[str, str],
    tasks: Iterable[TaskSpec],
    cache_ledger: CacheLedger | None = None,
    costs: TransferCostModel | None = None,
    known_machines: Iterable[str] | None = None,
) -> TransferPlan:
    """Group every needed file into one batch per (src, dst) pair.

    ``assignments`` maps task_id to machine_id; tasks not in it are ignored.
    The input ledger is not modified: the returned plan carries the updated copy.
    """
    ledger = CacheLedger() if cache_ledger is None else cache_ledger.copy()
    known = None if known_machines is None else set(known_machines)
    if known is None and costs is not None:
        known = set(costs.network.machines)
    groups: dict[tuple[str, str], list] = {}
    for t in tasks:
        dst = assignments.get(t.task_id)
        if dst is None:
            continue
        for f in t.input_files:
            if known is not None and f.home_machine not in known:
                raise PlanningError(f"file {f.logical_path!r} is homed on unknown machine {f.home_machine!r}")
            if f.home_machine == dst:
                continue
            if f.sharing is Sharing.SHARED:
                if (dst, f.logical_path) in ledger:
                    continue
                ledger.add(dst, f.logical_path)
            g = groups.setdefault((f.home_machine, dst), [[], 0])
            g[0].append(f.logical_path)
            g[1] += f.size_bytes
    batches = []
    for (src, dst), (files, size) in groups.items():
        if costs is None:
            t_s = e_j = 0.0
        else:
            t_s = costs.time(src, dst, len(files), size)
            e_j = costs.energy(src, dst, size)
        batches.append(TransferBatch(src, dst, tuple(files), size, t_s, e_j))
    return TransferPlan(batches, ledger)
