"""Agglomerative clustering of task embeddings with a startup-energy stop rule.

Average linkage over Euclidean distance on min-max normalized embeddings.
A cluster freezes (stops merging) once its mean-across-machines predicted
energy exceeds the threshold.  Ties go to the pair whose lowest task ids
sort first.

Identical embeddings are exactly zero apart, so they always merge before
anything else; they are chunked up front in linear time and only the
leftover partial chunks go through the quadratic merge loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import MachineSpec
from ..errors import ContractViolation
from .objective import TaskEmbedding


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    task_ids: tuple[str, ...]
    centroid: tuple[float, ...]
    energy_per_machine: tuple[float, ...]
    runtime_per_machine: tuple[float, ...]

    @property
    def mean_energy(self) -> float:
        return float(np.mean(self.energy_per_machine))

    @property
    def mean_runtime(self) -> float:
        return float(np.mean(self.runtime_per_machine))


def startup_energy_threshold(fleet: Sequence[MachineSpec]) -> float:
    """Cheapest node startup among batch-scheduled machines (0 if there are none)."""
    costs = [m.startup_energy_j for m in fleet if m.has_batch_scheduler]
    return min(costs) if costs else 0.0


def normalize(V: np.ndarray) -> np.ndarray:
    lo = V.min(axis=0)
    span = V.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (V - lo) / safe, 0.0)


TIE_RTOL = 1e-12


def _tie_bound(d: float) -> float:
    """Distances up to this value count as tied with ``d`` (absorbs rounding)."""
    return d + TIE_RTOL * max(d, 1.0)


def _frozen(energy_sum: np.ndarray, threshold: float) -> bool:
    return float(np.mean(energy_sum)) > threshold


def _make_clusters(order_ids, V, groups) -> list[Cluster]:
    out = []
    for k, members in enumerate(groups):
        rows = V[members]
        out.append(
            Cluster(
                cluster_id=f"c{k:05d}",
                task_ids=tuple(order_ids[i] for i in members),
                centroid=tuple(float(x) for x in rows.mean(axis=0)),
                energy_per_machine=tuple(float(x) for x in rows[:, 1::2].sum(axis=0)),
                runtime_per_machine=tuple(float(x) for x in rows[:, 0::2].sum(axis=0)),
            )
        )
    return out


def _prepare(embeddings):
    ordered = sorted(embeddings, key=lambda e: e.task_id)
    ids = [e.task_id for e in ordered]
    if len(set(ids)) != len(ids):
        raise ContractViolation("duplicate task ids in embeddings")
    V = np.array([e.vector for e in ordered], dtype=float)
    return ids, V


def cluster_tasks(
    embeddings: Sequence[TaskEmbedding],
    fleet: Sequence[MachineSpec] | None = None,
    startup_energy_threshold_j: float | None = None,
) -> list[Cluster]:
    if not embeddings:
        return []
    threshold = startup_energy_threshold_j
    if threshold is None:
        threshold = startup_energy_threshold(fleet or ())
    if threshold < 0:
        raise ContractViolation(f"threshold must be >= 0, got {threshold}")
    ids, V = _prepare(embeddings)
    X = normalize(V)
    energies = V[:, 1::2]

    # phase 1: chunk identical rows in id order
    by_row: dict[bytes, list[int]] = {}
    for i in range(len(ids)):
        by_row.setdefault(X[i].tobytes(), []).append(i)
    frozen_groups: list[list[int]] = []
    open_groups: list[list[int]] = []
    for members in by_row.values():
        # every restart sees the same row, so the freeze point repeats
        cums = np.cumsum(np.broadcast_to(energies[members[0]], (len(members), energies.shape[1])), axis=0)
        hits = np.flatnonzero(cums.mean(axis=1) > threshold)
        size = int(hits[0]) + 1 if hits.size else len(members) + 1
        full = len(members) // size * size
        frozen_groups.extend(members[a : a + size] for a in range(0, full, size))
        if full < len(members):
            open_groups.append(members[full:])

    # phase 2: average linkage over the leftovers (distinct rows only)
    open_groups.sort(key=lambda g: g[0])
    k = len(open_groups)
    if k > 1:
        reps = X[[g[0] for g in open_groups]]
        D = np.sqrt(((reps[:, None, :] - reps[None, :, :]) ** 2).sum(axis=2))
        sizes = np.array([len(g) for g in open_groups], dtype=float)
        acc = np.array([energies[g].sum(axis=0) for g in open_groups])
        active = np.ones(k, dtype=bool)
        iu = np.triu(np.ones((k, k), dtype=bool), 1)
        while active.sum() > 1:
            mask = iu & active[:, None] & active[None, :]
            masked = np.where(mask, D, np.inf)
            d_min = masked.min()
            if not np.isfinite(d_min):
                break
            # groups stay ordered by lowest member, so the first near-tie in
            # row-major order is the pair with the lowest task ids
            flat = int(np.flatnonzero(masked <= _tie_bound(d_min))[0])
            i, j = divmod(flat, k)
            ni, nj = sizes[i], sizes[j]
            merged = (ni * D[i] + nj * D[j]) / (ni + nj)
            D[i, :] = merged
            D[:, i] = merged
            D[i, i] = 0.0
            sizes[i] = ni + nj
            acc[i] = acc[i] + acc[j]
            open_groups[i] = sorted(open_groups[i] + open_groups[j])
            active[j] = False
            if _frozen(acc[i], threshold):
                active[i] = False
                frozen_groups.append(open_groups[i])
        for idx in np.flatnonzero(active):
            frozen_groups.append(open_groups[idx])
    else:
        frozen_groups.extend(open_groups)

    groups = sorted((sorted(g) for g in frozen_groups), key=lambda g: g[0])
    return _make_clusters(ids, V, groups)


def cluster_tasks_naive(embeddings, startup_energy_threshold_j: float) -> list[Cluster]:
    """Textbook O(n^3) loop recomputing every linkage each step. Reference for tests."""
    if not embeddings:
        return []
    ids, V = _prepare(embeddings)
    X = normalize(V)
    energies = V[:, 1::2]
    clusters = [[i] for i in range(len(ids))]
    frozen = [_frozen(energies[i], startup_energy_threshold_j) for i in range(len(ids))]
    while True:
        live = [c for c in range(len(clusters)) if not frozen[c]]
        pairs = []
        for a_pos, a in enumerate(live):
            for b in live[a_pos + 1 :]:
                A, B = clusters[a], clusters[b]
                d = float(np.mean([np.linalg.norm(X[p] - X[q]) for p in A for q in B]))
                pairs.append((d, tuple(sorted((min(A), min(B)))), a, b))
        if not pairs:
            break
        bound = _tie_bound(min(p[0] for p in pairs))
        _, _, a, b = min((p for p in pairs if p[0] <= bound), key=lambda p: p[1])
        merged = sorted(clusters[a] + clusters[b])
        keep = [c for idx, c in enumerate(clusters) if idx not in (a, b)]
        keep_frozen = [f for idx, f in enumerate(frozen) if idx not in (a, b)]
        clusters = keep + [merged]
        frozen = keep_frozen + [_frozen(energies[merged].sum(axis=0), startup_energy_threshold_j)]
    groups = sorted(clusters, key=lambda g: g[0])
    return _make_clusters(ids, V, groups)
