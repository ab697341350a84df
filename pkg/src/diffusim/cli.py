"""Command-line interface.

Subcommands::

    simulate     generate truth trajectories and observations
    reference    build and store large-particle reference ensembles
    run          execute a full filtering experiment
    grid-search  sweep diffusion bandwidths on a fixed scenario
    metrics      recompute metrics from stored artifacts
    report       aggregate run directories into a comparison table
    plot         render SVG diagnostics from a run directory

Exit codes: 0 success, 2 completed with partial failures, 64 usage or
configuration error, 70 internal error.  Every artifact-producing command
persists its effective configuration, so any output directory can be
reproduced from its own ``config.json``.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .errors import CapabilityError, DiffusimError
from .experiment import (
    FILTER_IDS,
    OBS,
    SIM,
    SUBSAMPLE,
    TRUTH,
    ExperimentConfig,
    FilterSpec,
    build_observation,
    build_reference,
    config_from_dict,
    config_to_dict,
    default_config,
    generate_truth,
    grid_search,
    realize_observations,
    run_experiment,
)
from .metrics import EmpiricalMeasure, averaged_w2, density_grid, subsample_reference
from .records import (
    dump_json,
    load_run_summary,
    load_steps_csv,
    read_ensemble,
    write_ensemble,
    write_run_record,
)
from .ssm import RngStream, StateEnsemble
from .svgplot import heatmap_svg, scatter_svg, timeseries_svg, write_svg

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_INTERNAL = 70

# Benchmark-table bandwidth optima, used when the user picks the diffusion
# filter without naming bandwidths.
DEFAULT_BANDWIDTHS = {"l63": (0.1, 0.25), "l96": (0.2, 0.5)}


class UsageError(Exception):
    """Bad invocation or malformed configuration; maps to exit 64."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep our contract
        raise UsageError(message)


def _add_common(parser: _Parser, include_filters: bool = True) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML or JSON experiment config")
    parser.add_argument("--system", choices=["l63", "l96"], help="benchmark system")
    parser.add_argument("--dim", type=int, metavar="D", help="state dimension (cyclic system only)")
    parser.add_argument("--sims", type=int, metavar="S", help="number of independent simulations")
    parser.add_argument("--steps", type=int, metavar="K", help="assimilation steps per simulation")
    parser.add_argument("--seed", type=int, metavar="U64", help="base seed for every stream")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    if include_filters:
        parser.add_argument("--filter", action="append", choices=sorted(FILTER_IDS),
                            metavar="KIND", help="filter to run (repeatable; default: all three)")
        parser.add_argument("--n", action="append", type=int, metavar="N",
                            help="ensemble size (repeatable; default: 100)")
        parser.add_argument("--sigma-x", type=float, metavar="F", help="state bandwidth")
        parser.add_argument("--sigma-y", type=float, metavar="F", help="observation bandwidth")
        parser.add_argument("--sigma-max", type=float, default=None, metavar="F",
                            help="terminal noise scale of the diffusion schedule (default 5)")
        parser.add_argument("--store-ensembles", action="store_true",
                            help="dump full prediction/posterior ensembles per step")
    parser.add_argument("--subsample", type=int, metavar="M",
                        help="reference subsample size for the transport metric")


def build_parser() -> _Parser:
    parser = _Parser(prog="diffusim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"diffusim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate truth and observations")
    _add_common(p, include_filters=False)

    p = sub.add_parser("reference", help="build large-particle reference ensembles")
    _add_common(p, include_filters=False)
    p.add_argument("--n", type=int, metavar="N", help="reference particle count")

    p = sub.add_parser("run", help="execute a filtering experiment")
    _add_common(p)

    p = sub.add_parser("grid-search", help="sweep diffusion bandwidths")
    _add_common(p, include_filters=False)
    p.add_argument("--n", type=int, default=100, metavar="N", help="ensemble size to tune")

    p = sub.add_parser("metrics", help="recompute metrics from stored artifacts")
    p.add_argument("run_out", metavar="RUN_OUT", help="output directory of a previous `run`")
    p.add_argument("--reference", metavar="PATH", help="output directory of a previous `reference`")
    p.add_argument("--subsample", type=int, metavar="M", help="reference subsample size")
    p.add_argument("--seed", type=int, metavar="U64", help="ignored; streams come from the stored config")
    p.add_argument("--out", metavar="PATH", help="where to write recomputed metrics JSON")

    p = sub.add_parser("report", help="aggregate run directories into a table")
    p.add_argument("run_dirs", nargs="*", metavar="RUN_DIR", help="record directories or `run` outputs")
    p.add_argument("--seed", type=int, metavar="U64", help="ignored; reports are deterministic")
    p.add_argument("--out", metavar="DIR", help="also write report.csv and report.txt here")

    p = sub.add_parser("plot", help="render SVG diagnostics")
    p.add_argument("run_dir", metavar="RECORD_DIR", help="one record directory (…/runs/<label>)")
    p.add_argument("--kind", choices=["density", "timeseries", "scatter"], default="timeseries")
    p.add_argument("--coordinate", type=int, default=0, metavar="I", help="state coordinate to show")
    p.add_argument("--coordinate2", type=int, default=2, metavar="J",
                   help="second coordinate of the scatter plane")
    p.add_argument("--step", type=int, metavar="K", help="step for scatter (default: last)")
    p.add_argument("--step-range", metavar="A:B", help="inclusive step range for density/timeseries")
    p.add_argument("--bins", type=int, default=60, metavar="B", help="density grid bins")
    p.add_argument("--seed", type=int, metavar="U64", help="ignored; plots are deterministic")
    p.add_argument("--out", metavar="PATH", help="output SVG path (default: inside the record dir)")
    return parser


# ---------------------------------------------------------------------------
# configuration assembly


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    try:
        if path.endswith(".json"):
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise UsageError(f"{path}: {where}: {exc.problem or exc}")
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be a mapping, got {type(data).__name__}")
    return data


def _default_filters(system: str, args) -> List[FilterSpec]:
    kinds = args.filter if getattr(args, "filter", None) else sorted(FILTER_IDS, key=FILTER_IDS.get)
    sx_default, sy_default = DEFAULT_BANDWIDTHS[system]
    specs = []
    for kind in kinds:
        if kind == "diffusion":
            specs.append(FilterSpec(
                kind="diffusion",
                sigma_x=getattr(args, "sigma_x", None) or sx_default,
                sigma_y=getattr(args, "sigma_y", None) or sy_default,
                sigma_max=getattr(args, "sigma_max", None) or 5.0,
            ))
        else:
            specs.append(FilterSpec(kind=kind))
    return specs


def _assemble_config(args, need_filters: bool) -> ExperimentConfig:
    """Merge file config (if any) with flag overrides into a validated config."""
    if args.config:
        data = _load_config_file(args.config)
    else:
        data = config_to_dict(default_config(args.system or "l63", getattr(args, "dim", None)))
        data["filters"] = []
    if args.system:
        if data.get("system") != args.system:
            data = {**config_to_dict(default_config(args.system, getattr(args, "dim", None))),
                    "filters": data.get("filters", [])}
    if getattr(args, "dim", None):
        data["dim"] = args.dim
    if getattr(args, "steps", None) is not None:
        data["steps"] = args.steps
    if getattr(args, "sims", None) is not None:
        data["sims"] = args.sims
    if getattr(args, "seed", None) is not None:
        data["base_seed"] = args.seed
    if getattr(args, "subsample", None) is not None:
        data["reference_subsample"] = args.subsample
    if getattr(args, "store_ensembles", False):
        data["store_ensembles"] = True
    if getattr(args, "n", None) and isinstance(args.n, list):
        data["ensemble_sizes"] = list(args.n)
    try:
        config = config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}")
    if need_filters:
        flag_filters = getattr(args, "filter", None) or getattr(args, "sigma_x", None)
        if flag_filters or not config.filters:
            config.filters = _default_filters(config.system, args)
    return config


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(config: ExperimentConfig, command: str, out: Path, extras: Optional[dict] = None) -> None:
    payload = {"command": command, "config": config_to_dict(config)}
    if extras:
        payload.update(extras)
    dump_json(payload, out / "config.json")


def _load_snapshot(out_dir: Path) -> ExperimentConfig:
    path = out_dir / "config.json"
    if not path.exists():
        raise UsageError(f"{out_dir} has no config.json; not a diffusim output directory")
    with open(path) as fh:
        payload = json.load(fh)
    try:
        return config_from_dict(payload["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid stored config: {exc}")


# ---------------------------------------------------------------------------
# truth/observation artifacts


def _write_indexed_csv(path: Path, prefix: str, start_k: int, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(matrix)
    with open(path, "w") as fh:
        fh.write(",".join(["k"] + [f"{prefix}_{i}" for i in range(matrix.shape[1])]) + "\n")
        for offset, row in enumerate(matrix):
            fh.write(",".join([str(start_k + offset)] + [repr(float(v)) for v in row]) + "\n")


def _read_indexed_csv(path: Path) -> np.ndarray:
    with open(path) as fh:
        next(fh)
        rows = [[float(c) for c in line.strip().split(",")] for line in fh if line.strip()]
    data = np.asarray(rows)
    return data[:, 1:]


def _sim_dir(root: Path, sim: int) -> Path:
    return root / "sims" / f"s{sim:03d}"


def _write_scenario(config: ExperimentConfig, out: Path, sim: int) -> tuple:
    """Generate and persist one simulation's truth and observations."""
    sim_rng = RngStream(config.base_seed).child(SIM, sim)
    truth = generate_truth(config, sim_rng.child(TRUTH))
    observations = realize_observations(truth, build_observation(config), sim_rng.child(OBS))
    sdir = _sim_dir(out, sim)
    sdir.mkdir(parents=True, exist_ok=True)
    _write_indexed_csv(sdir / "truth.csv", "x", 0, truth)
    _write_indexed_csv(sdir / "observations.csv", "y", 1, observations)
    return truth, observations


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    config = _assemble_config(args, need_filters=False)
    out = _out_dir(args, "diffusim_sim")
    for sim in range(config.sims):
        truth, observations = _write_scenario(config, out, sim)
        print(f"sim {sim}: {truth.shape[0] - 1} steps, obs dim {observations.shape[1]} -> {_sim_dir(out, sim)}")
    _snapshot(config, "simulate", out)
    return EXIT_OK


def cmd_reference(args) -> int:
    config = _assemble_config(args, need_filters=False)
    if args.n is not None:
        if args.n < 2:
            raise UsageError(f"--n must be >= 2, got {args.n}")
        config.reference_n = args.n
    if config.dim > 6:
        raise UsageError(
            f"particle-filter reference refused for dim {config.dim} > 6; "
            "use the RMSE metric for high-dimensional systems"
        )
    out = _out_dir(args, "diffusim_ref")
    for sim in range(config.sims):
        sim_rng = RngStream(config.base_seed).child(SIM, sim)
        _, observations = _write_scenario(config, out, sim)
        measures = build_reference(config, observations, config.reference_n, sim_rng)
        sdir = _sim_dir(out, sim)
        for k, measure in enumerate(measures, start=1):
            write_ensemble(sdir / f"ref_k{k:04d}.bin", measure.support)
        print(f"sim {sim}: stored {len(measures)} reference ensembles of {config.reference_n}")
    _snapshot(config, "reference", out)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _assemble_config(args, need_filters=True)
    out = _out_dir(args, "diffusim_run")
    result = run_experiment(config, progress=lambda line: print(line, file=sys.stderr))
    for sim in range(config.sims):
        _write_scenario(config, out, sim)
    runs_dir = out / "runs"
    for record in result.records:
        write_run_record(runs_dir, record, store_ensembles=config.store_ensembles)
    dump_json(result.summary, out / "summary.json")
    _snapshot(config, "run", out)

    failures = [
        {"label": r.label, "filter": r.filter_kind, "n": r.n, "sim_index": r.sim_index,
         "failure": r.failure}
        for r in result.records if r.failed
    ]
    if failures:
        dump_json({"failed_cells": failures, "total_cells": len(result.records)},
                  out / "failures.json")
        print(f"{len(failures)}/{len(result.records)} cells failed; see {out / 'failures.json'}",
              file=sys.stderr)
        return EXIT_PARTIAL
    _print_summary_table(result.summary)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_grid_search(args) -> int:
    config = _assemble_config(args, need_filters=False)
    out = _out_dir(args, "diffusim_grid")
    result = grid_search(config, n=args.n, progress=lambda line: print(line, file=sys.stderr))
    with open(out / "grid.csv", "w") as fh:
        fh.write("sigma_x,sigma_y,metric,failed_sims\n")
        for cell in result.table:
            fh.write(f"{cell['sigma_x']!r},{cell['sigma_y']!r},{cell['metric']!r},{cell['failed_sims']}\n")
    dump_json({"metric": result.metric, "best": list(result.best), "table": result.table},
              out / "grid.json")
    _snapshot(config, "grid-search", out, extras={"n": args.n})
    print(f"best bandwidths (sigma_x, sigma_y) = {result.best} by mean {result.metric}")
    print(f"wrote {out}")
    return EXIT_OK


def _record_dirs(run_out: Path) -> List[Path]:
    runs = run_out / "runs"
    if not runs.is_dir():
        raise UsageError(f"{run_out} has no runs/ directory; pass the output of `diffusim run`")
    dirs = sorted(p for p in runs.iterdir() if (p / "summary.json").exists())
    if not dirs:
        raise UsageError(f"{runs} holds no record directories")
    return dirs


def _posterior_ensembles(record_dir: Path, k_steps: int) -> List[np.ndarray]:
    members = []
    for k in range(1, k_steps + 1):
        path = record_dir / f"post_k{k:04d}.bin"
        if not path.exists():
            raise UsageError(
                f"{record_dir} has no stored ensemble for step {k}; "
                "rerun with --store-ensembles to enable ensemble-based outputs"
            )
        members.append(read_ensemble(path))
    return members


def _check_reference_compat(run_out: Path, config: ExperimentConfig, ref_root: Path) -> None:
    """A reference is only replayable against runs sharing its scenario."""
    ref_config_path = ref_root / "config.json"
    if not ref_config_path.exists():
        return
    with open(ref_config_path) as fh:
        ref_snapshot = json.load(fh).get("config", {})
    exempt = _COMPAT_EXEMPT | {"reference_subsample", "metric"}
    diff = [line for line in _config_diff(config_to_dict(config), ref_snapshot)
            if line.split(":")[0].strip() not in exempt]
    if diff:
        raise UsageError(
            f"reference {ref_root} was built for a different scenario than {run_out}:\n"
            + "\n".join(diff)
        )


def cmd_metrics(args) -> int:
    run_out = Path(args.run_out)
    config = _load_snapshot(run_out)
    if args.reference is not None:
        _check_reference_compat(run_out, config, Path(args.reference))
    truths = {}
    recomputed = {}
    mismatch = 0.0
    for record_dir in _record_dirs(run_out):
        summary = load_run_summary(record_dir)
        entry = {"stored": summary["metrics"], "recomputed": {}}
        recomputed[record_dir.name] = entry
        if summary["failed"]:
            entry["recomputed"] = None
            continue
        sim = summary["sim_index"]
        if sim not in truths:
            truth_path = _sim_dir(run_out, sim) / "truth.csv"
            if not truth_path.exists():
                raise UsageError(f"{truth_path} missing; cannot recompute metrics")
            truths[sim] = _read_indexed_csv(truth_path)
        truth = truths[sim]
        steps = load_steps_csv(record_dir)
        post_mean = np.atleast_2d(steps["post_mean"])
        k_done = post_mean.shape[0]
        rmse = float(np.mean([
            np.linalg.norm(truth[k + 1] - post_mean[k]) / np.sqrt(truth.shape[1])
            for k in range(k_done)
        ]))
        entry["recomputed"]["rmse"] = rmse
        if "rmse" in summary["metrics"]:
            mismatch = max(mismatch, abs(rmse - summary["metrics"]["rmse"]))

        if config.metric == "w2":
            if args.reference is None:
                raise UsageError(
                    "recomputing the transport metric needs --reference DIR "
                    "(build one with `diffusim reference`)"
                )
            posts = _posterior_ensembles(record_dir, k_done)
            ref_dir = _sim_dir(Path(args.reference), sim)
            sim_rng = RngStream(config.base_seed).child(SIM, sim)
            subsample = args.subsample or config.reference_subsample
            targets = []
            for k in range(1, k_done + 1):
                ref_path = ref_dir / f"ref_k{k:04d}.bin"
                if not ref_path.exists():
                    raise UsageError(f"{ref_path} missing; rebuild with `diffusim reference`")
                ref = EmpiricalMeasure(read_ensemble(ref_path))
                m = min(subsample, ref.n_points)
                targets.append(subsample_reference(ref, m, sim_rng.child(SUBSAMPLE, k)))
            w2 = averaged_w2([StateEnsemble(p, step_index=i + 1) for i, p in enumerate(posts)],
                             targets)
            entry["recomputed"]["w2"] = w2
            if "w2" in summary["metrics"]:
                mismatch = max(mismatch, abs(w2 - summary["metrics"]["w2"]))

    out_path = Path(args.out) if args.out else run_out / "metrics_recomputed.json"
    if out_path.is_dir():
        out_path = out_path / "metrics_recomputed.json"
    dump_json({"max_abs_difference": mismatch, "records": recomputed}, out_path)
    for name, entry in sorted(recomputed.items()):
        print(f"{name}: stored {entry['stored']} recomputed {entry['recomputed']}")
    print(f"max |stored - recomputed| = {mismatch:.3e}")
    print(f"wrote {out_path}")
    return EXIT_OK


_COMPAT_EXEMPT = {"filters", "ensemble_sizes", "store_ensembles", "output_dir",
                  "sigma_x_grid", "sigma_y_grid", "schema_version"}


def _config_diff(a: dict, b: dict) -> List[str]:
    keys = (set(a) | set(b)) - _COMPAT_EXEMPT
    lines = []
    for key in sorted(keys):
        va, vb = a.get(key, "<absent>"), b.get(key, "<absent>")
        if va != vb:
            lines.append(f"  {key}: {va!r} != {vb!r}")
    return lines


def _collect_report_records(run_dirs: Sequence[str]) -> List[dict]:
    records = []
    for raw in run_dirs:
        path = Path(raw)
        if (path / "summary.json").exists() and (path / "steps.csv").exists():
            records.append(load_run_summary(path))
        elif (path / "runs").is_dir():
            for record_dir in _record_dirs(path):
                records.append(load_run_summary(record_dir))
        elif (path / "summary.json").exists():
            records.append(load_run_summary(path))
        else:
            raise UsageError(f"{raw} is neither a record directory nor a `run` output")
    return records


def _print_summary_table(summary: dict) -> None:
    cells = summary.get("cells", [])
    if not cells:
        return
    metric = summary.get("metric", "metric")
    kinds = sorted({c["filter"] for c in cells}, key=lambda k: FILTER_IDS.get(k, 99))
    sizes = sorted({c["n"] for c in cells})
    by_key = {(c["filter"], c["n"]): c for c in cells}
    header = ["N"] + kinds
    rows = []
    for n in sizes:
        means = {k: by_key.get((k, n), {}).get("mean") for k in kinds}
        finite = {k: v for k, v in means.items() if v is not None}
        best = min(finite, key=finite.get) if finite else None
        row = [str(n)]
        for k in kinds:
            if means[k] is None:
                row.append("-")
            else:
                mark = "*" if k == best else " "
                row.append(f"{means[k]:.4f}{mark}")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    print(f"mean {metric} over simulations (lower is better; * best per row)")
    for row in [header] + rows:
        print("  " + "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)))


def cmd_report(args) -> int:
    if not args.run_dirs:
        raise UsageError("report needs at least one run directory")
    records = _collect_report_records(args.run_dirs)
    base = records[0]["config"]
    for other in records[1:]:
        diff = _config_diff(base, other["config"])
        if diff:
            raise UsageError(
                "refusing to aggregate runs with incompatible configs:\n" + "\n".join(diff)
            )
    metric = base["metric"]
    cells: dict = {}
    for rec in records:
        cells.setdefault((rec["filter"], rec["n"]), []).append(rec)
    table = []
    for (kind, n), recs in sorted(cells.items(), key=lambda kv: (kv[0][1], FILTER_IDS.get(kv[0][0], 99))):
        values = [r["metrics"][metric] for r in recs if not r["failed"] and metric in r["metrics"]]
        table.append({
            "filter": kind,
            "n": n,
            "sims": len(recs),
            "failed": sum(r["failed"] for r in recs),
            "mean": float(np.mean(values)) if values else None,
            "median": float(np.median(values)) if values else None,
        })
    summary = {"metric": metric, "cells": table, "system": base["system"], "dim": base["dim"]}
    _print_summary_table(summary)
    if args.out:
        out = _out_dir(args, "diffusim_report")
        with open(out / "report.csv", "w") as fh:
            fh.write("filter,n,sims,failed,mean,median\n")
            for cell in table:
                fh.write(
                    f"{cell['filter']},{cell['n']},{cell['sims']},{cell['failed']},"
                    f"{'' if cell['mean'] is None else repr(cell['mean'])},"
                    f"{'' if cell['median'] is None else repr(cell['median'])}\n"
                )
        buffer = io.StringIO()
        with contextlib.redirect_stdout(buffer):
            _print_summary_table(summary)
        (out / "report.txt").write_text(buffer.getvalue())
        print(f"wrote {out / 'report.csv'} and {out / 'report.txt'}")
    return EXIT_OK


def _parse_step_range(raw: Optional[str], k_max: int) -> tuple:
    if raw is None:
        return 1, k_max
    parts = raw.split(":")
    if len(parts) != 2:
        raise UsageError(f"--step-range must look like A:B, got {raw!r}")
    try:
        lo = int(parts[0]) if parts[0] else 1
        hi = int(parts[1]) if parts[1] else k_max
    except ValueError:
        raise UsageError(f"--step-range must hold integers, got {raw!r}")
    if not (1 <= lo <= hi <= k_max):
        raise UsageError(f"--step-range {raw} outside the recorded range 1:{k_max}")
    return lo, hi


def _load_plot_context(record_dir: Path):
    if not (record_dir / "summary.json").exists():
        raise UsageError(f"{record_dir} is not a record directory (no summary.json)")
    summary = load_run_summary(record_dir)
    steps = load_steps_csv(record_dir) if (record_dir / "steps.csv").exists() else None
    truth = None
    sims_root = record_dir.parent.parent
    truth_path = _sim_dir(sims_root, summary["sim_index"]) / "truth.csv"
    if truth_path.exists():
        truth = _read_indexed_csv(truth_path)
    return summary, steps, truth


def cmd_plot(args) -> int:
    record_dir = Path(args.run_dir)
    summary, steps, truth = _load_plot_context(record_dir)
    if steps is None:
        raise UsageError(f"{record_dir} has no steps.csv; nothing to plot")
    coord = args.coordinate
    dim = summary["config"]["dim"]
    if not (0 <= coord < dim):
        raise UsageError(f"--coordinate {coord} outside state dimension {dim}")
    k_max = int(np.max(steps["k"])) if steps["k"].size else 0
    if k_max == 0:
        raise UsageError(f"{record_dir} recorded no steps")
    lo, hi = _parse_step_range(args.step_range, k_max)
    ks = np.arange(lo, hi + 1)
    label = f"{summary['filter']} N={summary['n']} sim {summary['sim_index']}"

    if args.kind == "timeseries":
        post_mean = np.atleast_2d(steps["post_mean"])[lo - 1:hi, coord]
        post_std = np.atleast_2d(steps["post_std"])[lo - 1:hi, coord]
        truth_coord = truth[lo:hi + 1, coord] if truth is not None else None
        observations = None
        if summary["config"]["system"] == "l63" and coord == 2:
            observations = np.atleast_1d(steps["obs"])[lo - 1:hi]
        svg = timeseries_svg(ks, post_mean, post_std, truth=truth_coord,
                             observations=observations,
                             title=f"posterior mean, x[{coord}] — {label}",
                             y_label=f"x[{coord}]")
        default_name = f"timeseries_c{coord}.svg"
    elif args.kind == "density":
        posts = _posterior_ensembles(record_dir, k_max)
        values = np.stack([p[:, coord] for p in posts[lo - 1:hi]])
        span_lo, span_hi = float(values.min()), float(values.max())
        if truth is not None:
            span_lo = min(span_lo, float(truth[lo:hi + 1, coord].min()))
            span_hi = max(span_hi, float(truth[lo:hi + 1, coord].max()))
        pad = 0.05 * (span_hi - span_lo) or 0.5
        edges = np.linspace(span_lo - pad, span_hi + pad, args.bins + 1)
        heat = density_grid(values, edges, normalize=True)
        truth_coord = truth[lo:hi + 1, coord] if truth is not None else None
        svg = heatmap_svg(heat, edges, truth=truth_coord,
                          title=f"posterior density, x[{coord}] — {label}",
                          y_label=f"x[{coord}]")
        default_name = f"density_c{coord}.svg"
    else:  # scatter
        step = args.step if args.step is not None else k_max
        if not (1 <= step <= k_max):
            raise UsageError(f"--step {step} outside the recorded range 1:{k_max}")
        coord2 = args.coordinate2
        if not (0 <= coord2 < dim):
            raise UsageError(f"--coordinate2 {coord2} outside state dimension {dim}")
        pred_path = record_dir / f"pred_k{step:04d}.bin"
        post_path = record_dir / f"post_k{step:04d}.bin"
        for path in (pred_path, post_path):
            if not path.exists():
                raise UsageError(
                    f"{path} missing; rerun with --store-ensembles to enable scatter plots"
                )
        truth_row = truth[step] if truth is not None else None
        svg = scatter_svg(read_ensemble(pred_path), read_ensemble(post_path),
                          coords=(coord, coord2), truth=truth_row,
                          title=f"step {step} — {label}")
        default_name = f"scatter_k{step:04d}_c{coord}c{coord2}.svg"

    if args.out:
        out_path = Path(args.out)
        if out_path.is_dir() or args.out.endswith("/"):
            out_path.mkdir(parents=True, exist_ok=True)
            out_path = out_path / default_name
    else:
        out_path = record_dir / default_name
    write_svg(out_path, svg)
    print(f"wrote {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


_COMMANDS = {
    "simulate": cmd_simulate,
    "reference": cmd_reference,
    "run": cmd_run,
    "grid-search": cmd_grid_search,
    "metrics": cmd_metrics,
    "report": cmd_report,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"diffusim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapabilityError as exc:
        print(f"diffusim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help/--version
        code = exc.code if isinstance(exc.code, int) else 0
        return EXIT_OK if code == 0 else EXIT_USAGE
    except DiffusimError as exc:
        print(f"diffusim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - the contract maps surprises to 70
        print(f"diffusim: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
