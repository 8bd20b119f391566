"""Command-line entry point: ``enersched <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import catalog
from .core import ProfileStore, TaskRecord, read_fleet, read_workload, write_fleet, write_workload
from .errors import ConfigError, EnerschedError, InvariantViolation
from .power import attribute_task_energy, fit_power_model, process_power_series, read_counters, read_model, read_power, write_model
from .sched import schedule_cluster_mhra, schedule_mhra, schedule_round_robin, schedule_single
from .sim import Strategy, compare_results, gen_moldesign_workload, gen_synthetic_workload, rows_to_csv, rows_to_markdown, run_simulation
from .transfer import Network, TransferCostModel, fit_transfer_model, read_history, read_network, read_transfer_model, write_transfer_model

log = logging.getLogger("enersched")

SCHEMAS = {
    "fit-power": """\
counters CSV:  timestamp_s,process_id,llc_misses,instructions_retired,cpu_cycles,ref_cycles
               0.0,4242,1200000,880000000,1000000000,990000000
power CSV:     timestamp_s,device_id,power_w
               0.0,node0,143.2
model JSON:    {"device_id": "node0", "weights": [...4 floats], "intercept_w": 110.0, "r_squared": 0.998, ...}""",
    "fit-transfer": """\
history CSV:   src,dst,n_files,total_bytes,seconds
               desktop,faster,12,48000000,3.9
model JSON:    {"desktop->faster": {"seconds_per_file": ..., "seconds_per_byte": ..., "intercept_s": ...}}""",
    "attribute": """\
task records CSV: task_id,function_id,machine_id,worker_process_id,start_s,end_s
                  t0,graph_bfs,faster,4242,10.0,12.5
output CSV:       task_id,energy_j,runtime_s
profiles CSV:     function_id,machine_id,mean_runtime_s,mean_energy_j,sample_count""",
    "schedule": """\
fleet JSON:    [{"machine_id": "faster", "cores_per_node": 64, "idle_power_w": 205.0, "avg_queue_s": 22.0,
                 "has_batch_scheduler": true, "max_nodes": 4}, ...]
workload JSONL: {"task_id": "t0", "function_id": "graph_bfs", "submit_time_s": 0.0,
                 "input_files": [{"logical_path": "/data/a.bin", "size_bytes": 1000, "home_machine": "desktop", "sharing": "exclusive"}]}
network JSON:  {"desktop->faster": ["switch", "edge", "core", {"p_max_w": 1000, "bandwidth_bps": 4e10}]}
schedule JSONL: {"task_id": "t0", "cluster_id": "c00000", "machine_id": "desktop"}
summary JSON:  {"alpha": 0.5, "sf1_j": ..., "sf2_s": ..., "predicted_e_tot_j": ..., "predicted_c_max_s": ..., "objective": ..., "heuristic_chosen": ...}
timing JSON:   {"scheduling_wall_time_s": ...}""",
    "simulate": """\
result JSON:   {"makespan_s": ..., "node_energy_j": {"total", "idle", "dynamic", "per_machine"}, "transfer_energy_j": ...,
                "tasks_completed": ..., "per_machine_task_counts": {...}, "edp": ..., "ed2p": ..., "rng_seed": ..., "config": {...}}
trace JSONL:   {"time_s": 0.0, "kind": "task_submit", "task_id": "t0"}
sweep CSV:     alpha,makespan_s,energy_j,transfer_energy_j,edp,ed2p,<machine>_tasks...""",
    "compare": "table columns: label,runtime_s,energy_j,transfer_energy_j,edp_norm,ed2p_norm",
    "gen-workload": "workload JSONL as for 'schedule'; --with-config also writes fleet.json and profiles.csv",
}


# -- helpers -------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _need(args, name):
    value = getattr(args, name, None)
    if value in (None, ""):
        raise ConfigError(f"missing required option --{name.replace('_', '-')}")
    return value


def _out(args, name, default):
    value = getattr(args, name, None)
    return Path(value) if value else Path(args.out_dir) / default


def _fleet(args):
    return read_fleet(args.fleet) if args.fleet else catalog.default_fleet()


def _store(args, fleet, moldesign=False):
    if args.profiles:
        return ProfileStore.read_csv(args.profiles, fleet)
    return catalog.profile_store(fleet, catalog.MOLDESIGN_PROFILES if moldesign else None)


def _costs(args, fleet):
    network = read_network(args.network, fleet) if args.network else Network(fleet)
    time_model = read_transfer_model(args.transfer_model) if args.transfer_model else None
    return TransferCostModel(network, time_model)


def _check_alpha(alpha):
    if not 0.0 <= float(alpha) <= 1.0:
        raise ConfigError(f"--alpha must be in [0, 1], got {alpha}")
    return float(alpha)


def _alpha_arg(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be in [0, 1], got {value}")
    return value


# -- commands ------------------------------------------------------------


def cmd_fit_power(args) -> int:
    counters = read_counters(_need(args, "counters"))
    power = read_power(_need(args, "power"))
    model = fit_power_model(counters, power, _need(args, "device"), args.period)
    out = _out(args, "out", "power_model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_model(model, out)
    r = model.report
    print(f"device {model.device_id}: r_squared={model.r_squared:.6f} intervals={r.intervals_used} "
          f"dropped_counters={r.dropped_counter_samples} dropped_power={r.dropped_power_samples}")
    print(f"wrote {out}")
    return 0


def cmd_fit_transfer(args) -> int:
    model = fit_transfer_model(read_history(_need(args, "history")))
    out = _out(args, "out", "transfer_model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_transfer_model(model, out)
    for (src, dst), c in sorted(model.coefficients.items()):
        print(f"{src}->{dst}: {c.seconds_per_file:.6g} s/file, {c.seconds_per_byte:.6g} s/byte, {c.intercept_s:.3f} s")
    print(f"wrote {out}")
    return 0


RECORD_HEADER = ("task_id", "function_id", "machine_id", "worker_process_id", "start_s", "end_s")


def _read_records(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(RECORD_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, 2):
            try:
                rec = TaskRecord(row["task_id"], row["machine_id"], int(row["worker_process_id"]),
                                 float(row["start_s"]), float(row["end_s"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
            out.append((rec, row["function_id"]))
        return out


def cmd_attribute(args) -> int:
    counters = read_counters(_need(args, "counters"))
    power = read_power(_need(args, "power"))
    model = read_model(_need(args, "model"))
    records = _read_records(_need(args, "tasks"))
    series = process_power_series(model, counters, power, args.period, args.dynamic_only)
    rows, skipped, attributed = [], 0, []
    for rec, fid in records:
        s = series.get(rec.worker_process_id)
        if s is None or not s.samples:
            log.warning("task %s: no power series for process %d; skipped", rec.task_id, rec.worker_process_id)
            skipped += 1
            continue
        energy = attribute_task_energy(s, rec.start_s, rec.end_s)
        rows.append((rec.task_id, f"{energy:.3f}", f"{rec.runtime_s:.3f}"))
        attributed.append((rec, fid, energy))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("task_id", "energy_j", "runtime_s"))
    w.writerows(rows)
    out = _out(args, "out", "task_energy.csv")
    _atomic_write(out, buf.getvalue())
    if args.update_profiles:
        path = Path(args.update_profiles)
        store = ProfileStore.read_csv(path) if path.exists() else ProfileStore()
        for rec, fid, energy in attributed:
            store.update(TaskRecord(rec.task_id, rec.machine_id, rec.worker_process_id, rec.start_s, rec.end_s, energy), fid)
        store.write_csv(path)
    print(f"attributed {len(rows)} tasks, skipped {skipped}; wrote {out}")
    return 0


def _run_schedule(strategy: Strategy, tasks, fleet, store, costs, threshold):
    if strategy.kind == "cluster-mhra":
        return schedule_cluster_mhra(tasks, fleet, store, costs, strategy.alpha, threshold)
    if strategy.kind == "mhra":
        return schedule_mhra(tasks, fleet, store, costs, strategy.alpha)
    if strategy.kind == "round-robin":
        return schedule_round_robin(tasks, fleet, store, costs, strategy.alpha)
    return schedule_single(tasks, fleet, strategy.machine_id, store, costs, strategy.alpha)


def cmd_schedule(args) -> int:
    fleet = _fleet(args)
    tasks = read_workload(_need(args, "workload"), fleet)
    strategy = Strategy.parse(args.strategy, _check_alpha(args.alpha))
    sched = _run_schedule(strategy, tasks, fleet, _store(args, fleet), _costs(args, fleet), args.threshold)
    out = Path(args.out_dir)
    summary = dict(sched.summary(), strategy=strategy.label, machine_task_counts=sched.machine_counts(fleet),
                   n_tasks=len(tasks), n_units=len(sched.units), transfer_energy_j=round(sched.transfer_energy_j, 3))
    _atomic_write(out / "schedule.jsonl", sched.dumps_rows(tasks))
    _atomic_write(out / "summary.json", _dump_json(summary))
    # wall time is kept apart so the other outputs stay byte-identical across runs
    _atomic_write(out / "timing.json", _dump_json({"scheduling_wall_time_s": round(sched.wall_time_s, 6)}))
    print(f"{strategy.label}: {len(tasks)} tasks in {len(sched.units)} units, heuristic {sched.heuristic}, "
          f"predicted {sched.predicted_e_tot_j:.3f} J / {sched.predicted_c_max_s:.3f} s, "
          f"scheduled in {sched.wall_time_s:.3f} s")
    return 0


def _parse_moldesign(text):
    try:
        r, s, i = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--moldesign expects ROUNDS:SIMS:INFERS, got {text!r}") from None
    return r, s, i


def _parse_sweep(text):
    key, _, values = text.partition("=")
    if key.strip() != "alpha" or not values:
        raise ConfigError(f"--sweep supports alpha=v1,v2,... only, got {text!r}")
    try:
        return [_check_alpha(float(v)) for v in values.split(",")]
    except ValueError:
        raise ConfigError(f"--sweep: bad number in {values!r}") from None


def cmd_simulate(args) -> int:
    fleet = _fleet(args)
    moldesign = _parse_moldesign(args.moldesign) if args.moldesign else None
    if moldesign is None:
        tasks = read_workload(_need(args, "workload"), fleet)
        make_workload = lambda: tasks  # noqa: E731
    else:
        make_workload = lambda: gen_moldesign_workload(*moldesign, seed=args.seed, data_home=args.data_home)  # noqa: E731
    store = _store(args, fleet, moldesign is not None)
    costs = _costs(args, fleet)
    alphas = _parse_sweep(args.sweep) if args.sweep else [_check_alpha(args.alpha)]
    out = Path(args.out_dir)
    results = []
    for alpha in alphas:
        strategy = Strategy.parse(args.strategy, alpha)
        res = run_simulation(make_workload(), strategy, fleet, store, costs, seed=args.seed,
                             batch_window_s=args.batch_window, sigma=args.sigma, deterministic=args.deterministic,
                             threshold_j=args.threshold, record_trace=args.trace)
        doc = res.to_dict()
        doc["config"].update(workload=args.workload, moldesign=args.moldesign, seed=args.seed)
        if args.label:
            doc["label"] = args.label if len(alphas) == 1 else f"{args.label}(alpha={alpha:g})"
        suffix = "" if not args.sweep else f"-alpha-{alpha:g}"
        _atomic_write(out / f"result{suffix}.json", _dump_json(doc))
        if args.trace:
            _atomic_write(out / f"trace{suffix}.jsonl", "".join(json.dumps(e, sort_keys=True) + "\n" for e in res.trace))
        results.append((alpha, res))
        print(f"{doc['label']}: makespan {res.makespan_s:.3f} s, node energy {res.energy_j:.3f} J, "
              f"transfer {res.transfer_energy_j:.3f} J, {res.tasks_completed} tasks")
    if args.sweep:
        machines = [m.machine_id for m in fleet]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "makespan_s", "energy_j", "transfer_energy_j", "edp", "ed2p"] + [f"{m}_tasks" for m in machines])
        for alpha, r in results:
            w.writerow([f"{alpha:g}", f"{r.makespan_s:.3f}", f"{r.energy_j:.3f}", f"{r.transfer_energy_j:.3f}",
                        f"{r.edp:.3f}", f"{r.ed2p:.3f}"] + [r.per_machine_task_counts[m] for m in machines])
        _atomic_write(out / "sweep.csv", buf.getvalue())
    return 0


def cmd_compare(args) -> int:
    if len(args.results) < 2:
        raise ConfigError("compare needs at least two result files")
    docs = []
    for path in args.results:
        try:
            docs.append(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    rows = compare_results(docs)
    text = rows_to_markdown(rows) if args.format == "markdown" else rows_to_csv(rows)
    if args.out:
        _atomic_write(Path(args.out), text)
    sys.stdout.write(text)
    return 0


def cmd_gen_workload(args) -> int:
    mix = "all" if args.benchmarks == "all" else [b.strip() for b in args.benchmarks.split(",") if b.strip()]
    home = None if args.data_home in ("", "none") else args.data_home
    tasks = gen_synthetic_workload(mix, args.count, args.seed, home)
    out = _out(args, "out", "workload.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_workload(tasks, out)
    print(f"wrote {len(tasks)} tasks to {out}")
    if args.with_config:
        fleet = catalog.default_fleet()
        write_fleet(fleet, out.parent / "fleet.json")
        catalog.profile_store(fleet).write_csv(out.parent / "profiles.csv")
        print(f"wrote {out.parent / 'fleet.json'} and {out.parent / 'profiles.csv'}")
    return 0


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults, keyed by option name")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    common.add_argument("-v", "--verbose", action="store_true")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--fleet", help="fleet JSON (default: built-in four-machine fleet)")
    inputs.add_argument("--profiles", help="profiles CSV (default: built-in synthetic profiles)")
    inputs.add_argument("--network", help="network JSON (default: generic WAN path per pair)")
    inputs.add_argument("--transfer-model", help="fitted transfer-time model JSON")
    inputs.add_argument("--workload", help="workload JSONL")
    inputs.add_argument("--strategy", default="cluster-mhra", help="cluster-mhra | mhra | round-robin | single:<machine_id>")
    inputs.add_argument("--alpha", type=_alpha_arg, default=0.5, help="energy weight in [0, 1] (default 0.5)")
    inputs.add_argument("--threshold", type=float, default=None, help="cluster freeze threshold in J (default: cheapest node startup)")

    parser = argparse.ArgumentParser(prog="enersched", description="Energy-aware task placement across heterogeneous machines.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_text, parents=(common,)):
        p = sub.add_parser(name, parents=list(parents), help=help_text, description=help_text,
                           epilog=SCHEMAS[name], formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("fit-power", cmd_fit_power, "fit a linear counter-to-power model for one device")
    p.add_argument("--counters")
    p.add_argument("--power")
    p.add_argument("--device")
    p.add_argument("--period", type=float, default=1.0, help="sampling period in s (default 1)")
    p.add_argument("--out")

    p = add("fit-transfer", cmd_fit_transfer, "fit per-path transfer-time regressions from history")
    p.add_argument("--history")
    p.add_argument("--out")

    p = add("attribute", cmd_attribute, "attribute measured device energy to tasks")
    p.add_argument("--counters")
    p.add_argument("--power")
    p.add_argument("--model")
    p.add_argument("--tasks", help="task records CSV")
    p.add_argument("--period", type=float, default=1.0)
    p.add_argument("--dynamic-only", action="store_true", help="subtract idle power before attribution")
    p.add_argument("--update-profiles", metavar="PROFILES_CSV", help="fold results into this profiles CSV")
    p.add_argument("--out")

    add("schedule", cmd_schedule, "place a workload and write the schedule", (common, inputs))

    p = add("simulate", cmd_simulate, "simulate a workload under one strategy", (common, inputs))
    p.add_argument("--batch-window", type=float, default=1.0, help="scheduling batch window in s (default 1)")
    p.add_argument("--sigma", type=float, default=0.1, help="lognormal spread of durations and energies")
    p.add_argument("--deterministic", action="store_true", help="no sampling noise, mean queue waits")
    p.add_argument("--trace", action="store_true", help="also write the event trace as JSON Lines")
    p.add_argument("--sweep", help="alpha=v1,v2,... : one run per value plus sweep.csv")
    p.add_argument("--moldesign", metavar="R:S:I", help="use the staged molecular-design workload")
    p.add_argument("--data-home", default=None, help="machine holding moldesign inputs (default: none)")
    p.add_argument("--label")

    p = add("compare", cmd_compare, "compare result files in one table")
    p.add_argument("results", nargs="*")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--out")

    p = add("gen-workload", cmd_gen_workload, "generate the synthetic benchmark workload")
    p.add_argument("--benchmarks", default="all", help="comma list or 'all'")
    p.add_argument("--count", type=int, default=256, help="invocations per benchmark (default 256)")
    p.add_argument("--data-home", default="desktop", help="machine holding inputs, or 'none'")
    p.add_argument("--with-config", action="store_true", help="also write fleet.json and profiles.csv")
    p.add_argument("--out")
    return parser


def _apply_config(parser, argv):
    """Load ``--config`` and install its keys as defaults on the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {known.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{known.config}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{known.config}: expected a JSON object")
    defaults = {k.replace("-", "_"): v for k, v in doc.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            valid = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in defaults.items() if k in valid})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse usage errors and --help
            return exc.code if isinstance(exc.code, int) else 2
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return 2
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except EnerschedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
