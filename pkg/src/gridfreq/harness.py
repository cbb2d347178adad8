"""Closed-loop co-simulation of the full plant with both control layers.

The simulation advances on a fixed dt_sim grid. The full-order grid and the
continuous primary filters are merged into one LTI system and discretized
exactly (ZOH) once, so within-step integration is exact for the piecewise
constant disturbance and secondary command. The observer runs at dt_sim next
to the plant; the secondary controller fires every apply_steps control ticks
after its configured delay and its command is held between ticks.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .mpc import MpcConfig, SecondaryController, continuous_primary_bank
from .numerics import zoh_discretize
from .observer import ObserverState, design_filter, sample_for_mpc, step_filter
from .primary import PrimaryParams
from .reduction import ReducedGridModel
from .sfr import GridModel
from .trace import Metrics, RegionMetrics, SimulationTrace

__all__ = [
    "Disturbance",
    "Scenario",
    "run_closed_loop",
    "compute_metrics",
    "emit_report",
    "scenario_manifest",
    "default_mpc_config",
]


@dataclass(frozen=True)
class Disturbance:
    """Step change of net power in one region, on that region's MVA base."""

    t_s: float
    region: str
    magnitude_pu: float

    def __post_init__(self):
        if self.t_s < 0:
            raise ValueError("disturbance times must be non-negative")


@dataclass
class Scenario:
    name: str
    grid: GridModel
    primary: list[PrimaryParams] | None = None
    reduced: ReducedGridModel | None = None
    mpc: MpcConfig | None = None
    disturbances: tuple[Disturbance, ...] = ()
    t_end: float = 20.0
    dt_sim: float = 0.01
    primary_on: bool = True
    mpc_on: bool = True
    dphat0: np.ndarray | None = None
    observer_q_scale: float = 10.0
    observer_r_scale: float = 1.0
    report_order: list[str] | None = None

    def __post_init__(self):
        if self.t_end <= 0 or self.dt_sim <= 0:
            raise ValueError("t_end and dt_sim must be positive")
        names = set(self.grid.region_names)
        for d in self.disturbances:
            if d.region not in names:
                raise ValueError(f"disturbance region {d.region!r} not in the grid")
            if d.t_s > self.t_end:
                raise ValueError("disturbance scheduled after t_end")
            k = d.t_s / self.dt_sim
            if abs(k - round(k)) > 1e-9:
                raise ValueError("disturbance times must fall on the dt_sim grid")
        if self.primary_on:
            if self.primary is None or len(self.primary) != self.grid.n_regions:
                raise ValueError("primary_on requires one parameter set per region")
        if self.mpc_on:
            if self.reduced is None or self.mpc is None:
                raise ValueError("mpc_on requires a reduced model and an MpcConfig")
            if self.mpc.n_regions != self.grid.n_regions:
                raise ValueError("MpcConfig region count must match the grid")
            ratio = self.mpc.dt / self.dt_sim
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError("dt_sim must divide the control step dt")
        if self.dphat0 is not None:
            self.dphat0 = np.asarray(self.dphat0, dtype=float).reshape(self.grid.n_regions)

    @property
    def last_disturbance_s(self) -> float:
        return max((d.t_s for d in self.disturbances), default=0.0)


def default_mpc_config(grid: GridModel, budget: float = 0.02, **overrides) -> MpcConfig:
    """MpcConfig with scheduled-power bounds derived from the grid's
    renewable shares (+/- budget/lambda_i on regions that have converters)."""
    shares = np.diag(grid.lam)
    u_lo, u_hi = MpcConfig.bounds_from_shares(shares, budget=budget)
    kwargs = dict(n_regions=grid.n_regions, f0=grid.f0, u_lo=u_lo, u_hi=u_hi)
    kwargs.update(overrides)
    return MpcConfig(**kwargs)


def _combined_plant(grid: GridModel, primary: list[PrimaryParams] | None):
    """Merge plant and continuous primary filters into one LTI system with
    inputs (dP, u_mpc) and output rows for df, tie flows, u_prim and dP_m."""
    n, n_x = grid.n_regions, grid.n_states
    c_freq, c_tie = grid.c_freq, grid.c_tie
    if primary is None:
        nf = 0
        a = grid.a
        uprim_rows = np.zeros((n, n_x))
    else:
        af, bf, cf, df = continuous_primary_bank(primary, n)
        nf = 2 * n
        blam = grid.b @ grid.lam
        a = np.zeros((n_x + nf, n_x + nf))
        a[:n_x, :n_x] = grid.a - blam @ df @ c_freq
        a[:n_x, n_x:] = blam @ cf
        a[n_x:, :n_x] = -bf @ c_freq
        a[n_x:, n_x:] = af
        uprim_rows = np.hstack([-df @ c_freq, cf])
    b = np.zeros((n_x + nf, 2 * n))
    b[:n_x, :n] = grid.b
    b[:n_x, n:] = grid.b @ grid.lam
    pad = np.zeros((c_freq.shape[0], nf))
    rows = {
        "freq": np.hstack([c_freq, pad]),
        "tie": np.hstack([c_tie, np.zeros((c_tie.shape[0], nf))]),
        "uprim": uprim_rows,
        "pm": np.hstack([grid.pm_rows, np.zeros((n, nf))]),
    }
    return a, b, rows, n_x


def _disturbance_profile(scenario: Scenario, n_steps: int) -> np.ndarray:
    """Per-step disturbance vector, cumulative over the schedule."""
    n = scenario.grid.n_regions
    idx = scenario.grid.region_index
    dp = np.zeros((n_steps + 1, n))
    for d in scenario.disturbances:
        k = int(round(d.t_s / scenario.dt_sim))
        dp[k:, idx[d.region]] += d.magnitude_pu
    return dp


def run_closed_loop(scenario: Scenario) -> SimulationTrace:
    grid = scenario.grid
    n = grid.n_regions
    dt = scenario.dt_sim
    n_steps = int(round(scenario.t_end / dt))
    primary = scenario.primary if scenario.primary_on else None

    a, b, rows, n_x = _combined_plant(grid, primary)
    ad, bd = zoh_discretize(a, b, dt)

    observer = None
    obs_state = None
    controller = None
    steps_per_tick = 1
    if scenario.mpc_on:
        observer = design_filter(scenario.reduced, qw=scenario.observer_q_scale,
                                 rv=scenario.observer_r_scale)
        dphat0 = scenario.dphat0 if scenario.dphat0 is not None else np.zeros(n)
        obs_state = ObserverState(xhat=np.zeros(scenario.reduced.order),
                                  dphat=dphat0.copy())
        controller = SecondaryController(scenario.mpc, scenario.reduced, primary)
        steps_per_tick = int(round(scenario.mpc.dt / dt))

    dp = _disturbance_profile(scenario, n_steps)
    x = np.zeros(a.shape[0])
    u_mpc = np.zeros(n)

    t = np.arange(n_steps + 1) * dt
    df_pu = np.zeros((n_steps + 1, n))
    ptl = np.zeros((n_steps + 1, grid.n_lines))
    u_prim_hist = np.zeros((n_steps + 1, n))
    u_mpc_hist = np.zeros((n_steps + 1, n))
    dphat_hist = np.zeros((n_steps + 1, n))
    eps_f_hist = np.zeros(n_steps + 1)
    eps_u_hist = np.zeros(n_steps + 1)
    states = np.zeros((n_steps + 1, n_x))
    xhat_hist = np.zeros((n_steps + 1, scenario.reduced.order)) if scenario.mpc_on else None
    eps_f_cur = 0.0
    eps_u_cur = 0.0

    for k in range(n_steps + 1):
        df = rows["freq"] @ x
        tie = rows["tie"] @ x
        u_prim = rows["uprim"] @ x
        if scenario.mpc_on and k < n_steps and k % steps_per_tick == 0:
            xhat, dphat = sample_for_mpc(obs_state)
            before = len(controller.solve_log)
            u_mpc = controller.step(k // steps_per_tick, df, xhat, dphat)
            if len(controller.solve_log) > before:
                entry = controller.solve_log[-1]
                if entry["status"] == "optimal":
                    eps_f_cur = entry["eps_f_max"]
                    eps_u_cur = entry["eps_u_max"]
        df_pu[k] = df
        ptl[k] = tie
        u_prim_hist[k] = u_prim
        u_mpc_hist[k] = u_mpc
        if scenario.mpc_on:
            dphat_hist[k] = obs_state.dphat
            xhat_hist[k] = obs_state.xhat
        eps_f_hist[k] = eps_f_cur
        eps_u_hist[k] = eps_u_cur
        states[k] = x[:n_x]
        if k == n_steps:
            break
        if scenario.mpc_on:
            obs_state = step_filter(observer, obs_state, u_prim + u_mpc,
                                    np.concatenate([df, tie]), dt)
        x = ad @ x + bd @ np.concatenate([dp[k], u_mpc])

    return SimulationTrace(
        t=t,
        region_names=list(grid.region_names),
        line_names=[ln.name for ln in grid.lines],
        df_pu=df_pu,
        df_hz=df_pu * grid.f0,
        ptl_pu=ptl,
        u_prim=u_prim_hist,
        u_mpc=u_mpc_hist,
        dphat=dphat_hist,
        eps_f_max=eps_f_hist,
        eps_u_max=eps_u_hist,
        f0=grid.f0,
        report_order=scenario.report_order,
        states=states,
        xhat=xhat_hist,
        xhat_norm=np.linalg.norm(xhat_hist, axis=1) if xhat_hist is not None else None,
        solve_log=controller.solve_log if controller is not None else [],
    )


def _settling_time(t: np.ndarray, df_hz: np.ndarray, band_hz: float,
                   t_start: float) -> float | None:
    """First time >= t_start from which |df| stays within the band."""
    inside = np.abs(df_hz) <= band_hz
    ok_from = np.ones(len(t) + 1, dtype=bool)
    for k in range(len(t) - 1, -1, -1):
        ok_from[k] = inside[k] and ok_from[k + 1]
    for k in range(len(t)):
        if t[k] >= t_start - 1e-12 and ok_from[k]:
            return float(t[k] - t_start)
    return None


def compute_metrics(trace: SimulationTrace, band_hz: float = 0.015,
                    ufls_threshold_hz: float = -0.15, n_rocof: int = 5,
                    last_disturbance_s: float = 0.0) -> Metrics:
    t = trace.t
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    regions: dict[str, RegionMetrics] = {}
    settle_all: float | None = 0.0
    for j, name in enumerate(trace.region_names):
        df = trace.df_hz[:, j]
        nadir = float(df.min())
        settling = _settling_time(t, df, band_hz, last_disturbance_s)
        if len(t) > n_rocof and dt > 0:
            diff = (df[n_rocof:] - df[:-n_rocof]) / (n_rocof * dt)
            rocof = float(np.abs(diff).max())
        else:
            rocof = 0.0
        regions[name] = RegionMetrics(
            nadir_hz=nadir,
            ufls_crossed=bool(nadir <= ufls_threshold_hz),
            settling_time_s=settling,
            max_rocof_hz_s=rocof,
            steady_state_df_hz=float(df[-1]),
        )
        if settling is None:
            settle_all = None
        elif settle_all is not None:
            settle_all = max(settle_all, settling)
    return Metrics(
        regions=regions,
        any_ufls=any(m.ufls_crossed for m in regions.values()),
        settled_all_s=settle_all,
        max_abs_ptl_pu=float(np.abs(trace.ptl_pu).max()) if trace.ptl_pu.size else 0.0,
        band_hz=band_hz,
        ufls_threshold_hz=ufls_threshold_hz,
    )


def scenario_manifest(scenario: Scenario) -> dict:
    grid = scenario.grid
    man = {
        "package": "gridfreq",
        "version": __version__,
        "scenario": scenario.name,
        "t_end_s": scenario.t_end,
        "dt_sim_s": scenario.dt_sim,
        "primary_on": scenario.primary_on,
        "mpc_on": scenario.mpc_on,
        "disturbances": [asdict(d) for d in scenario.disturbances],
        "grid": {
            "f0_hz": grid.f0,
            "k_sync": grid.k_sync,
            "n_states": grid.n_states,
            "regions": [
                {
                    "name": r.name,
                    "total_gw": r.total_gw,
                    "renewable_gw": r.renewable_gw,
                    "inertia_s": grid.h_eq[i],
                    "damping": grid.d_eq[i],
                }
                for i, r in enumerate(grid.regions)
            ],
            "lines": [
                {"name": ln.name, "capacity_gw": ln.capacity_gw} for ln in grid.lines
            ],
        },
    }
    if scenario.primary is not None:
        man["primary"] = {
            name: asdict(p)
            for name, p in zip(grid.region_names, scenario.primary)
        }
    if scenario.mpc is not None:
        cfg = scenario.mpc
        man["mpc"] = {
            "H": cfg.horizon,
            "h": cfg.apply_steps,
            "dt": cfg.dt,
            "Q_diag": cfg.q_diag.tolist(),
            "R_diag": cfg.r_diag.tolist(),
            "eta_f": cfg.eta_f.tolist(),
            "eta_u": cfg.eta_u.tolist(),
            "df_lo": cfg.df_lo,
            "df_hi": cfg.df_hi,
            "f0": cfg.f0,
            "rocof_max": cfg.rocof_max,
            "n_r": cfg.n_rocof,
            "ptl_lo": cfg.ptl_lo,
            "ptl_hi": cfg.ptl_hi,
            "du_max": cfg.du_max,
            "p_ibr_star": cfg.p_ibr_star.tolist(),
            "u_lo": cfg.u_lo.tolist(),
            "u_hi": cfg.u_hi.tolist(),
            "first_command_delay_s": cfg.first_command_delay_s,
        }
    if scenario.reduced is not None:
        man["reduction"] = {
            "region_orders": dict(zip(scenario.reduced.region_names,
                                      scenario.reduced.region_orders)),
            "order": scenario.reduced.order,
            "error_bound": scenario.reduced.error_bound,
        }
    if scenario.mpc_on:
        man["observer"] = {
            "q_scale": scenario.observer_q_scale,
            "r_scale": scenario.observer_r_scale,
            "dphat0": (scenario.dphat0.tolist()
                       if scenario.dphat0 is not None else None),
        }
    return man


class _CompactJson(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def emit_report(trace: SimulationTrace, metrics: Metrics, out_dir: str,
                manifest: dict | None = None) -> dict[str, str]:
    """Write trace.csv, metrics.json and manifest.json under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "trace": os.path.join(out_dir, "trace.csv"),
        "metrics": os.path.join(out_dir, "metrics.json"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    with open(paths["trace"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trace.to_csv())
    with open(paths["metrics"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True, cls=_CompactJson)
        fh.write("\n")
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest or {}, fh, indent=2, sort_keys=True, cls=_CompactJson)
        fh.write("\n")
    return paths
