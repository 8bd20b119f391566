"""Fused energy/runtime metrics and result comparison tables."""

from __future__ import annotations

import io
import csv

from ..errors import ContractViolation, ValidationError


def edp(energy_j: float, runtime_s: float) -> float:
    """Energy-delay product, J*s."""
    if energy_j < 0 or runtime_s < 0:
        raise ContractViolation("edp inputs must be >= 0")
    return energy_j * runtime_s


def ed2p(energy_j: float, runtime_s: float) -> float:
    """Energy-delay-squared product, J*s^2."""
    if energy_j < 0 or runtime_s < 0:
        raise ContractViolation("ed2p inputs must be >= 0")
    return energy_j * runtime_s * runtime_s


def _normalized(values):
    lo = min(values)
    if lo <= 0:
        return [1.0 if v == lo else float("inf") for v in values]
    return [v / lo for v in values]


def compare_results(results) -> list[dict]:
    """Table rows for result documents; EDP and ED2P are divided by their column minimum.

    Each document needs ``label``, ``makespan_s``, ``node_energy_j.total``,
    ``transfer_energy_j`` and ``workload_hash``.
    """
    if len(results) < 2:
        raise ContractViolation("comparison needs at least two results")
    hashes = {r.get("workload_hash") for r in results}
    if len(hashes) != 1:
        raise ValidationError(f"results come from different workloads: {sorted(map(str, hashes))}")
    rows = []
    for r in results:
        energy = float(r["node_energy_j"]["total"])
        runtime = float(r["makespan_s"])
        rows.append(
            {
                "label": r["label"],
                "runtime_s": runtime,
                "energy_j": energy,
                "transfer_energy_j": float(r.get("transfer_energy_j", 0.0)),
                "edp": edp(energy, runtime),
                "ed2p": ed2p(energy, runtime),
            }
        )
    for key in ("edp", "ed2p"):
        for row, v in zip(rows, _normalized([row[key] for row in rows])):
            row[f"{key}_norm"] = v
    return rows


COLUMNS = ("label", "runtime_s", "energy_j", "transfer_energy_j", "edp_norm", "ed2p_norm")


def _fmt(key, value):
    if key == "label":
        return str(value)
    if key.endswith("_norm"):
        return f"{value:.2f}"
    return f"{value:.3f}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(k, r[k]) for k in COLUMNS])
    return buf.getvalue()


def rows_to_markdown(rows) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(k, r[k]) for k in COLUMNS) + " |")
    return "\n".join(lines) + "\n"
