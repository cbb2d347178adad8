"""Simulation trace and metrics containers plus their on-disk forms.

Trace CSVs are written with 12 significant digits and a fixed column layout so
that repeated runs of the same scenario produce byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


def _fmt(v: float) -> str:
    return f"{v:.12g}"


@dataclass
class SimulationTrace:
    """Sampled closed- or open-loop trajectory of a grid scenario.

    Frequencies are carried both in per-unit and Hz; control columns are zero
    for layers that were disabled. `states` (full plant state history) and
    `xhat` (observer estimates) are kept in memory for analysis but are not
    part of the CSV schema.
    """

    t: np.ndarray
    region_names: list[str]
    line_names: list[str]
    df_pu: np.ndarray
    df_hz: np.ndarray
    ptl_pu: np.ndarray
    u_prim: np.ndarray
    u_mpc: np.ndarray
    dphat: np.ndarray
    eps_f_max: np.ndarray
    eps_u_max: np.ndarray
    f0: float = 60.0
    report_order: list[str] | None = None
    states: np.ndarray | None = None
    xhat: np.ndarray | None = None
    xhat_norm: np.ndarray | None = None
    solve_log: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.t)
        for name in ("df_pu", "df_hz", "u_prim", "u_mpc", "dphat"):
            arr = getattr(self, name)
            if arr.shape != (n, len(self.region_names)):
                raise ValueError(f"{name} must have shape ({n}, {len(self.region_names)})")
        if self.ptl_pu.shape != (n, len(self.line_names)):
            raise ValueError("ptl_pu shape inconsistent with line_names")
        if self.eps_f_max.shape != (n,) or self.eps_u_max.shape != (n,):
            raise ValueError("slack columns must be 1-D of trace length")

    def _order(self) -> list[int]:
        order = self.report_order or self.region_names
        if sorted(order) != sorted(self.region_names):
            raise ValueError("report_order must be a permutation of region_names")
        return [self.region_names.index(name) for name in order]

    def column_names(self) -> list[str]:
        order = self.report_order or self.region_names
        initials = [name[0] for name in order]
        if len(set(initials)) != len(initials):
            initials = order  # fall back to full names on initial collisions
        cols = ["t_s"]
        cols += [f"df_{name}_hz" for name in order]
        cols += [f"ptl_{a[0]}{b[0]}_pu" for a, b in (n.split("-") for n in self.line_names)]
        cols += [f"uprim_{i}" for i in initials]
        cols += [f"umpc_{i}" for i in initials]
        cols += [f"dphat_{i}" for i in initials]
        cols += ["eps_f_max", "eps_u_max"]
        return cols

    def to_csv(self) -> str:
        idx = self._order()
        buf = io.StringIO()
        buf.write(",".join(self.column_names()) + "\n")
        for k in range(len(self.t)):
            row = [_fmt(self.t[k])]
            row += [_fmt(self.df_hz[k, j]) for j in idx]
            row += [_fmt(v) for v in self.ptl_pu[k]]
            row += [_fmt(self.u_prim[k, j]) for j in idx]
            row += [_fmt(self.u_mpc[k, j]) for j in idx]
            row += [_fmt(self.dphat[k, j]) for j in idx]
            row += [_fmt(self.eps_f_max[k]), _fmt(self.eps_u_max[k])]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Read a trace CSV back as a column-name -> array mapping."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty trace file")
        names = header.split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(names)))
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: column count mismatch")
    return {name: data[:, j] for j, name in enumerate(names)}


@dataclass
class RegionMetrics:
    nadir_hz: float
    ufls_crossed: bool
    settling_time_s: float | None
    max_rocof_hz_s: float
    steady_state_df_hz: float


@dataclass
class Metrics:
    regions: dict[str, RegionMetrics]
    any_ufls: bool
    settled_all_s: float | None
    max_abs_ptl_pu: float
    band_hz: float
    ufls_threshold_hz: float

    def to_dict(self) -> dict:
        return {
            "band_hz": self.band_hz,
            "ufls_threshold_hz": self.ufls_threshold_hz,
            "any_ufls": self.any_ufls,
            "settled_all_s": self.settled_all_s,
            "max_abs_ptl_pu": self.max_abs_ptl_pu,
            "regions": {
                name: {
                    "nadir_hz": m.nadir_hz,
                    "ufls_crossed": m.ufls_crossed,
                    "settling_time_s": m.settling_time_s,
                    "max_rocof_hz_s": m.max_rocof_hz_s,
                    "steady_state_df_hz": m.steady_state_df_hz,
                }
                for name, m in self.regions.items()
            },
        }
