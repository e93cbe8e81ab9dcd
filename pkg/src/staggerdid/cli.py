"""Command-line entry point: ``staggerdid estimate | simulate | montecarlo``.

Exit codes: 0 success, 2 bad arguments, 3 data or configuration error,
4 estimation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .did import DidSpec, estimate_did
from .errors import EstimationError, InvalidConfig, PanelError
from .eventstudy import EndpointRule, EventStudySpec, estimate_fe, estimate_iw, pretrend_test
from .panel import PanelSchema, drop_movers, filter_balanced, load_panel
from .simulate import THREADS_ENV, default_threads, generate_panel, load_config, realized_shares, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4
MANIFEST_SCHEMA_ID = "staggerdid.manifest/1"
PRETRENDS_SCHEMA_ID = "staggerdid.pretrends/1"
TRUTH_SCHEMA_ID = "staggerdid.truth/1"


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(path, command, inputs, parameters, seed, outputs, started) -> None:
    _write_json(path, {
        "schema": MANIFEST_SCHEMA_ID,
        "command": command,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items()},
        "parameters": parameters,
        "seed": seed,
        "tool_version": __version__,
        "numba": _kernels.USING_NUMBA,
        "outputs": sorted(outputs),
        "wall_time_seconds": round(time.perf_counter() - started, 6),
    })


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--window expects 'lo,hi', got {text!r}") from None
    if lo > hi:
        raise UsageError("--window lower end exceeds upper end")
    return lo, hi


def _parse_list(text: str | None) -> tuple:
    if not text:
        return ()
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _event_spec(args, controls=()) -> EventStudySpec:
    lo, hi = _parse_window(args.window)
    try:
        return EventStudySpec.window(lo, hi, reference_period=args.ref, endpoint_rule=EndpointRule(args.endpoint), controls=controls)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _apply_threads(args) -> int:
    threads = args.threads or default_threads()
    os.environ[THREADS_ENV] = str(threads)
    return threads


# --------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    started = time.perf_counter()
    _apply_threads(args)
    out = Path(args.out)
    controls = _parse_list(args.controls)
    if args.method == "did" and not (args.treatment_group and args.treatment_status):
        raise UsageError("--method did needs --treatment-group and --treatment-status")
    spec = _event_spec(args, controls) if args.method != "did" else None

    schema = PanelSchema(outcome=args.outcome, cluster=args.cluster)
    data = load_panel(args.input, schema)
    if args.drop_movers:
        data = drop_movers(data)
    if args.min_consecutive:
        data = filter_balanced(data, args.min_consecutive)
    for c in controls + tuple(x for x in (args.treatment_group, args.treatment_status) if x):
        if c not in data.covariates:
            raise PanelError(f"column {c!r} not found in {args.input}")

    out.mkdir(parents=True, exist_ok=True)
    outputs = ["estimates.csv", "estimates.json", "manifest.json"]
    if args.method == "did":
        did_spec = DidSpec(args.treatment_group, args.treatment_status, controls, include_time_fe=not args.no_time_fe)
        table = estimate_did(data, did_spec)
    elif args.method == "fe":
        table = estimate_fe(data, None, spec)
    else:
        result = estimate_iw(data, None, spec)
        table = result.table
        result.catt.write_csv(out / "catt.csv")
        result.catt.write_json(out / "catt.json")
        outputs += ["catt.csv", "catt.json"]

    table.write_csv(out / "estimates.csv")
    table.write_json(out / "estimates.json")
    if args.method != "did":
        leads = table.lead_labels()
        doc = {"schema": PRETRENDS_SCHEMA_ID, "method": args.method, "leads": leads, "statistic": None, "dof": 0, "p_value": None}
        if leads:
            stat, dof, p = pretrend_test(table, leads)
            doc.update(statistic=stat, dof=dof, p_value=p)
        _write_json(out / "pretrends.json", doc)
        outputs.append("pretrends.json")

    title = {"fe": "Two-way fixed effects event study", "iw": "Interaction-weighted event study", "did": "Random-effects DiD"}[args.method]
    if args.method == "did":
        print(table.format_table(title=title))
    else:
        print(table.format_table(title=f"{title} (outcome: {args.outcome})", reference_period=args.ref))
    params = {
        "method": args.method,
        "window": args.window,
        "ref": args.ref,
        "endpoint": args.endpoint,
        "cluster": args.cluster,
        "outcome": args.outcome,
        "controls": list(controls),
        "min_consecutive": args.min_consecutive,
        "drop_movers": bool(args.drop_movers),
        "treatment_group": args.treatment_group,
        "treatment_status": args.treatment_status,
        "time_fe": not args.no_time_fe,
    }
    _write_manifest(out / "manifest.json", "estimate", {"input": args.input}, params, None, outputs, started)
    return EXIT_OK


def _truth_doc(config, data, truth) -> dict:
    cohort_counts = {}
    for e in config.cohort_adoption_periods:
        cohort_counts[str(e)] = int(np.sum(data.adoption == e))
    shares = realized_shares(data)
    return {
        "schema": TRUTH_SCHEMA_ID,
        "config": config.to_dict(),
        "never_treated_units": int(np.isnan(data.adoption).sum()),
        "cohort_units": cohort_counts,
        "realized_shares": {str(l): {str(e): s for e, s in sh.items()} for l, sh in sorted(shares.items())},
        "catt": [
            {"cohort": e, "rel_period": l, "truth": float(d), "n": int(n)}
            for (e, l), d, n in zip(truth.cells, truth.delta, truth.cell_counts)
        ],
    }


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    data, truth = generate_panel(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_csv(out)
    _write_json(out.parent / "truth.json", _truth_doc(config, data, truth))
    print(f"wrote {data.n_obs} observations on {data.n_units} units to {out}")
    _write_manifest(
        out.parent / "manifest.json",
        "simulate",
        {"config": args.config},
        {"out": out.name, "seed_override": args.seed},
        int(config.seed),
        [out.name, "truth.json", "manifest.json"],
        started,
    )
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    started = time.perf_counter()
    threads = _apply_threads(args)
    methods = _parse_list(args.methods)
    if not methods or set(methods) - {"fe", "iw"}:
        raise UsageError("--methods takes a comma list of fe, iw")
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    if not 0.0 < args.ci < 1.0:
        raise UsageError("--ci must lie in (0, 1)")
    _parse_window(args.window)
    config = load_config(args.config)
    spec = _event_spec(args, tuple(config.covariates))
    summary = run_monte_carlo(config, spec, args.reps, methods, threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary.write_csv(out / "mc_summary.csv")
    summary.write_json(out / "mc_summary.json")
    summary.plot_data(args.ci).to_csv(out / "plot_data.csv", index=False, float_format="%.17g", lineterminator="\n")
    frame = summary.to_frame()
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.5f}"))
    params = {"reps": args.reps, "methods": list(methods), "window": args.window, "ref": args.ref, "endpoint": args.endpoint, "ci": args.ci}
    _write_manifest(
        out / "manifest.json",
        "montecarlo",
        {"config": args.config},
        params,
        int(config.seed),
        ["mc_summary.csv", "mc_summary.json", "plot_data.csv", "manifest.json"],
        started,
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_event_args(p) -> None:
    p.add_argument("--window", default="-3,3", help="relative-period window 'lo,hi' (default -3,3)")
    p.add_argument("--ref", type=int, default=-1, help="omitted reference period (default -1)")
    p.add_argument("--endpoint", choices=[r.value for r in EndpointRule], default="pool", help="treatment of periods outside the window")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="staggerdid", description="Staggered-adoption event studies and DiD.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate FE / IW event studies or the random-effects DiD")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["fe", "iw", "did"], required=True)
    _add_event_args(p)
    p.add_argument("--cluster", default="cluster", help="clustering column (constant within unit)")
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--controls", default="")
    p.add_argument("--min-consecutive", type=int, default=None, help="keep units with this many consecutive waves")
    p.add_argument("--drop-movers", action="store_true")
    p.add_argument("--treatment-group", default=None, help="DiD: unit-level treatment dummy")
    p.add_argument("--treatment-status", default=None, help="DiD: time-varying treatment dummy")
    p.add_argument("--no-time-fe", action="store_true", help="DiD: omit period dummies")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="write a synthetic panel CSV and its ground truth")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="compare estimators over simulated replications")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--methods", default="fe,iw")
    _add_event_args(p)
    p.add_argument("--ci", type=float, default=0.90, help="CI level for plot data (default 0.90)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PanelError, InvalidConfig, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
