"""Command-line entry point.

Subcommands: build-model, optimize-primary, reduce, simulate, report, verify.
Exit codes: 0 success, 1 criterion/check failure, 2 usage or configuration
error. GRIDFREQ_LOG={error,info,debug} selects log verbosity on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import (ConfigError, grid_bundle, load_grid_config,
                     load_scenario, primary_params_dict, reduced_bundle,
                     write_bundle)
from .harness import compute_metrics, emit_report, run_closed_loop, scenario_manifest
from .primary import PrimaryBounds, PrimaryWeights, closed_loop_region, optimize_primary, primary_cost
from .reduction import hsv_ratio, reduce_grid
from .trace import Metrics, RegionMetrics, read_trace_csv


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("GRIDFREQ_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_build_model(args) -> int:
    grid = load_grid_config(args.config)
    matrices, labels, scalars = grid_bundle(grid)
    write_bundle(args.out, matrices, labels, scalars)
    print(f"wrote {args.out}: {grid.n_states} states, "
          f"{grid.n_regions} regions, {grid.n_lines} tie-lines")
    return 0


def _parse_design(path: str | None):
    doc = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    weights = {
        name: PrimaryWeights(**w) for name, w in doc.get("weights", {}).items()
    }
    bounds = PrimaryBounds(**doc["bounds"]) if "bounds" in doc else PrimaryBounds()
    return weights, bounds, float(doc.get("dp", -0.02)), int(doc.get("n_starts", 64))


def _cmd_optimize_primary(args) -> int:
    grid = load_grid_config(args.config)
    weights, bounds, dp, n_starts = _parse_design(args.design)
    if args.starts is not None:
        n_starts = args.starts
    names = grid.region_names if args.region == "all" else [args.region]
    unknown = set(names) - set(grid.region_names)
    if unknown:
        raise ConfigError(f"unknown region(s): {sorted(unknown)}")
    out_names, params = [], []
    for name in names:
        i = grid.region_index[name]
        w = weights.get(name, PrimaryWeights())
        model = grid.region_models[i]
        lam = float(grid.lam[i, i])
        p = optimize_primary(model, lam, w, bounds=bounds, dp=dp, n_starts=n_starts)
        cost = primary_cost(closed_loop_region(model, p, lam), w, dp=dp)
        print(f"{name}: kbar_d={p.kbar_d:.6g} h_c={p.h_c:.6g} d_c={p.d_c:.6g} "
              f"gamma={p.gamma:.6g} cost={cost:.9g}")
        out_names.append(name)
        params.append(p)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(primary_params_dict(out_names, params), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _parse_orders(spec: str | None, region_names):
    if spec is None:
        return None
    if "=" not in spec:
        return int(spec)
    orders = {}
    for part in spec.split(","):
        name, _, val = part.partition("=")
        if name not in region_names:
            raise ConfigError(f"--orders: unknown region {name!r}")
        orders[name] = int(val)
    missing = set(region_names) - set(orders)
    if missing:
        raise ConfigError(f"--orders: missing regions {sorted(missing)}")
    return [orders[name] for name in region_names]


def _cmd_reduce(args) -> int:
    grid = load_grid_config(args.config)
    orders = _parse_orders(args.orders, grid.region_names)
    reduced = reduce_grid(grid, orders=orders, energy=args.energy)
    matrices, labels, scalars = reduced_bundle(reduced)
    write_bundle(args.out, matrices, labels, scalars)
    for name, r in zip(reduced.region_names, reduced.region_orders):
        rho = hsv_ratio(reduced.hsv[name], r)
        print(f"{name}: order {r} (energy {rho:.6f})")
    print(f"wrote {args.out}: {reduced.order} states "
          f"(error bound {reduced.error_bound:.6g})")
    return 0


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.no_primary:
        scenario.primary_on = False
    if args.no_mpc:
        scenario.mpc_on = False
    trace = run_closed_loop(scenario)
    n_rocof = scenario.mpc.n_rocof if scenario.mpc is not None else 5
    metrics = compute_metrics(trace, n_rocof=n_rocof,
                              last_disturbance_s=scenario.last_disturbance_s)
    manifest = scenario_manifest(scenario)
    paths = emit_report(trace, metrics, args.out, manifest)
    for name, m in metrics.regions.items():
        settled = "unsettled" if m.settling_time_s is None else f"{m.settling_time_s:.2f}s"
        print(f"{name}: nadir {m.nadir_hz:+.4f} Hz, ufls={'yes' if m.ufls_crossed else 'no'}, "
              f"settled {settled}, max RoCoF {m.max_rocof_hz_s:.4f} Hz/s")
    print(f"wrote {paths['trace']}, {paths['metrics']}, {paths['manifest']}")
    return 0


def _cmd_report(args) -> int:
    cols = read_trace_csv(args.trace)
    t = cols["t_s"]
    names = [c[3:-3] for c in cols if c.startswith("df_") and c.endswith("_hz")]
    if not names:
        raise ConfigError(f"{args.trace}: no df_*_hz columns found")
    from .harness import _settling_time

    regions = {}
    settle_all: float | None = 0.0
    for name in names:
        df = cols[f"df_{name}_hz"]
        nadir = float(df.min()) if df.size else 0.0
        settling = _settling_time(t, df, args.band, args.t_start)
        if len(t) > args.n_rocof:
            dt = float(t[1] - t[0])
            diff = (df[args.n_rocof:] - df[:-args.n_rocof]) / (args.n_rocof * dt)
            rocof = float(np.abs(diff).max())
        else:
            rocof = 0.0
        regions[name] = RegionMetrics(
            nadir_hz=nadir,
            ufls_crossed=bool(nadir <= args.threshold),
            settling_time_s=settling,
            max_rocof_hz_s=rocof,
            steady_state_df_hz=float(df[-1]) if df.size else 0.0,
        )
        if settling is None:
            settle_all = None
        elif settle_all is not None:
            settle_all = max(settle_all, settling)
    ptl_cols = [cols[c] for c in cols if c.startswith("ptl_")]
    metrics = Metrics(
        regions=regions,
        any_ufls=any(m.ufls_crossed for m in regions.values()),
        settled_all_s=settle_all,
        max_abs_ptl_pu=float(max((np.abs(c).max() for c in ptl_cols), default=0.0)),
        band_hz=args.band,
        ufls_threshold_hz=args.threshold,
    )
    text = json.dumps(metrics.to_dict(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_checks

    results = run_checks(suite=args.suite)
    failures = 0
    for res in results:
        status = "PASS" if res["ok"] else "FAIL"
        print(f"{status} {res['id']} [{res['suite']}] {res['title']}: {res['detail']}")
        failures += 0 if res["ok"] else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 1 if failures else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridfreq",
        description="Multi-area grid frequency models with two-layer "
                    "inverter-based frequency regulation.")
    parser.add_argument("--version", action="version", version=f"gridfreq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-model", help="assemble the full state-space model")
    p.add_argument("--config", required=True, help="grid configuration JSON")
    p.add_argument("--out", required=True, help="output model bundle path")
    p.set_defaults(fn=_cmd_build_model)

    p = sub.add_parser("optimize-primary", help="tune droop/VSM parameters per region")
    p.add_argument("--config", required=True, help="grid configuration JSON")
    p.add_argument("--region", default="all", help="region name or 'all'")
    p.add_argument("--out", required=True, help="output parameter JSON")
    p.add_argument("--design", default=None,
                   help="optional design JSON: weights/bounds/dp/n_starts")
    p.add_argument("--starts", type=int, default=None, help="multi-start count override")
    p.set_defaults(fn=_cmd_optimize_primary)

    p = sub.add_parser("reduce", help="balance and truncate the regional models")
    p.add_argument("--config", required=True, help="grid configuration JSON")
    p.add_argument("--out", required=True, help="output reduced-model bundle path")
    p.add_argument("--orders", default=None,
                   help="per-region order: integer or name=r,name=r,...")
    p.add_argument("--energy", type=float, default=0.999,
                   help="Hankel energy target when --orders is omitted")
    p.set_defaults(fn=_cmd_reduce)

    p = sub.add_parser("simulate", help="run a closed-loop scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-primary", action="store_true", help="disable the primary layer")
    p.add_argument("--no-mpc", action="store_true", help="disable the secondary layer")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("report", help="recompute metrics from a trace CSV")
    p.add_argument("--trace", required=True, help="trace.csv path")
    p.add_argument("--out", default=None, help="metrics JSON path (default stdout)")
    p.add_argument("--band", type=float, default=0.015, help="settling band in Hz")
    p.add_argument("--threshold", type=float, default=-0.15, help="UFLS threshold in Hz")
    p.add_argument("--n-rocof", type=int, default=5, help="RoCoF window in samples")
    p.add_argument("--t-start", type=float, default=0.0,
                   help="settling reference time (last disturbance)")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--suite", default="all",
                   choices=["all", "numerics", "reduction", "observer", "mpc", "e2e"])
    p.add_argument("--out", default=None, help="optional JSON results path")
    p.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
