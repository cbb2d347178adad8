"""Configuration files and on-disk model bundles.

Grid, primary-parameter and scenario documents are JSON with the normative
field names (regions[].{name, units[], renewable_gw, total_gw},
lines[].{a, b, capacity_gw}, constants.{f0, k_sync};
primary.{region}.{kbar_d, h_c, d_c, gamma, t_d, t_c}; mpc.{H, h, dt, ...}).
State-space models are exported as plain-text bundles: named sections with a
dimension header and row-major values at 17 significant digits, so a re-read
reproduces every matrix bit-exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .harness import Disturbance, Scenario
from .mpc import MpcConfig
from .primary import PrimaryParams
from .reduction import ReducedGridModel, reduce_grid
from .sfr import (DEFAULT_TG, GasTgParams, GeneratorUnit, GridModel,
                  RegionSpec, SteamTgParams, TieLine, assemble_grid)

__all__ = [
    "load_grid_config",
    "parse_grid_config",
    "grid_config_dict",
    "load_primary_params",
    "parse_primary_params",
    "primary_params_dict",
    "parse_mpc_config",
    "mpc_config_dict",
    "load_scenario",
    "parse_scenario",
    "write_bundle",
    "read_bundle",
    "grid_bundle",
    "reduced_bundle",
]

_PRIMARY_FIELDS = ("kbar_d", "h_c", "d_c", "gamma", "t_d", "t_c")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return d[key]


def _parse_tg(kind: str, raw, where: str):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: tg must be an object or null")
    cls = SteamTgParams if kind == "steam" else GasTgParams
    valid = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - valid
    if unknown:
        raise ConfigError(f"{where}: unknown tg fields {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_unit(raw: dict, where: str) -> GeneratorUnit:
    kind = _require(raw, "kind", where)
    kwargs = {
        "kind": kind,
        "rated_gw": float(_require(raw, "rated_gw", where)),
    }
    if "inertia_h" in raw:
        kwargs["inertia_h"] = float(raw["inertia_h"])
    if "damping_d" in raw:
        kwargs["damping_d"] = float(raw["damping_d"])
    if "tg" in raw:
        kwargs["tg"] = _parse_tg(kind, raw["tg"], where)
    try:
        return GeneratorUnit(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_grid_config(doc: dict):
    """Validate a grid document; returns (regions, lines, constants dict)."""
    if not isinstance(doc, dict):
        raise ConfigError("grid config must be an object")
    raw_regions = _require(doc, "regions", "grid config")
    if not isinstance(raw_regions, list) or not raw_regions:
        raise ConfigError("grid config: regions must be a non-empty list")
    regions = []
    for i, raw in enumerate(raw_regions):
        where = f"regions[{i}]"
        name = _require(raw, "name", where)
        units = tuple(
            _parse_unit(u, f"{where}.units[{j}]")
            for j, u in enumerate(_require(raw, "units", where))
        )
        try:
            regions.append(RegionSpec(
                name=name,
                units=units,
                renewable_gw=float(raw.get("renewable_gw", 0.0)),
                total_gw=float(_require(raw, "total_gw", where)),
            ))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    lines = []
    for i, raw in enumerate(doc.get("lines", [])):
        where = f"lines[{i}]"
        try:
            lines.append(TieLine(
                a=_require(raw, "a", where),
                b=_require(raw, "b", where),
                capacity_gw=float(_require(raw, "capacity_gw", where)),
            ))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    constants = doc.get("constants", {})
    if not isinstance(constants, dict):
        raise ConfigError("grid config: constants must be an object")
    return tuple(regions), tuple(lines), {
        "f0": float(constants.get("f0", 60.0)),
        "k_sync": float(constants.get("k_sync", 0.1)),
    }


def load_grid_config(path: str) -> GridModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    regions, lines, constants = parse_grid_config(doc)
    try:
        return assemble_grid(regions, lines, **constants)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _tg_dict(tg) -> dict | None:
    if tg is None:
        return None
    return {f: getattr(tg, f) for f in tg.__dataclass_fields__}


def grid_config_dict(regions, lines, f0: float = 60.0, k_sync: float = 0.1) -> dict:
    """Serializable document for a grid definition (inverse of parse)."""
    return {
        "regions": [
            {
                "name": r.name,
                "units": [
                    {
                        "kind": u.kind,
                        "rated_gw": u.rated_gw,
                        "inertia_h": u.inertia_h,
                        "damping_d": u.damping_d,
                        **({} if isinstance(u.tg, type(DEFAULT_TG)) else {"tg": _tg_dict(u.tg)}),
                    }
                    for u in r.units
                ],
                "renewable_gw": r.renewable_gw,
                "total_gw": r.total_gw,
            }
            for r in regions
        ],
        "lines": [
            {"a": ln.a, "b": ln.b, "capacity_gw": ln.capacity_gw} for ln in lines
        ],
        "constants": {"f0": f0, "k_sync": k_sync},
    }


def parse_primary_params(doc: dict, region_names) -> list[PrimaryParams]:
    """Read primary.{region}.{kbar_d, h_c, d_c, gamma, t_d, t_c}."""
    block = doc.get("primary", doc)
    if not isinstance(block, dict):
        raise ConfigError("primary parameters must be an object")
    out = []
    for name in region_names:
        if name not in block:
            raise ConfigError(f"primary parameters missing region {name!r}")
        raw = block[name]
        unknown = set(raw) - set(_PRIMARY_FIELDS)
        if unknown:
            raise ConfigError(f"primary.{name}: unknown fields {sorted(unknown)}")
        try:
            out.append(PrimaryParams(**{k: float(raw[k]) for k in raw}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"primary.{name}: {exc}") from exc
    return out


def load_primary_params(path: str, region_names) -> list[PrimaryParams]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_primary_params(doc, region_names)


def primary_params_dict(region_names, params) -> dict:
    return {
        "primary": {
            name: {f: getattr(p, f) for f in _PRIMARY_FIELDS}
            for name, p in zip(region_names, params)
        }
    }


_MPC_KEYS = {
    "H": "horizon",
    "h": "apply_steps",
    "dt": "dt",
    "Q_diag": "q_diag",
    "R_diag": "r_diag",
    "eta_f": "eta_f",
    "eta_u": "eta_u",
    "df_lo": "df_lo",
    "df_hi": "df_hi",
    "f0": "f0",
    "rocof_max": "rocof_max",
    "n_r": "n_rocof",
    "ptl_lo": "ptl_lo",
    "ptl_hi": "ptl_hi",
    "du_max": "du_max",
    "p_ibr_star": "p_ibr_star",
    "u_lo": "u_lo",
    "u_hi": "u_hi",
    "first_command_delay_s": "first_command_delay_s",
}


def parse_mpc_config(doc: dict, grid: GridModel) -> MpcConfig:
    """Build an MpcConfig from the mpc.{...} block; u bounds default to the
    grid's renewable-share-derived values when omitted."""
    unknown = set(doc) - set(_MPC_KEYS)
    if unknown:
        raise ConfigError(f"mpc: unknown fields {sorted(unknown)}")
    kwargs = {"n_regions": grid.n_regions, "f0": grid.f0}
    shares = np.diag(grid.lam)
    kwargs["u_lo"], kwargs["u_hi"] = MpcConfig.bounds_from_shares(shares)
    for key, field in _MPC_KEYS.items():
        if key in doc:
            val = doc[key]
            kwargs[field] = np.asarray(val, dtype=float) if isinstance(val, list) else val
    try:
        return MpcConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"mpc: {exc}") from exc


def mpc_config_dict(cfg: MpcConfig) -> dict:
    out = {}
    for key, field in _MPC_KEYS.items():
        val = getattr(cfg, field)
        out[key] = val.tolist() if isinstance(val, np.ndarray) else val
    return out


def parse_scenario(doc: dict, base_dir: str = ".") -> Scenario:
    name = doc.get("name", "scenario")
    raw_grid = _require(doc, "grid", "scenario")
    if isinstance(raw_grid, str):
        grid = load_grid_config(os.path.join(base_dir, raw_grid))
    else:
        regions, lines, constants = parse_grid_config(raw_grid)
        grid = assemble_grid(regions, lines, **constants)

    primary = None
    raw_primary = doc.get("primary")
    if isinstance(raw_primary, str):
        primary = load_primary_params(os.path.join(base_dir, raw_primary),
                                      grid.region_names)
    elif isinstance(raw_primary, dict):
        primary = parse_primary_params(raw_primary, grid.region_names)

    primary_on = bool(doc.get("primary_on", primary is not None))
    mpc_on = bool(doc.get("mpc_on", "mpc" in doc))

    mpc = None
    reduced: ReducedGridModel | None = None
    if mpc_on:
        mpc = parse_mpc_config(doc.get("mpc", {}), grid)
        red_doc = doc.get("reduction", {})
        orders = red_doc.get("orders")
        if isinstance(orders, dict):
            orders = [int(orders[name]) for name in grid.region_names]
        elif isinstance(orders, list):
            orders = [int(v) for v in orders]
        reduced = reduce_grid(grid, orders=orders,
                              energy=float(red_doc.get("energy", 0.999)))

    disturbances = tuple(
        Disturbance(t_s=float(d["t_s"]), region=d["region"],
                    magnitude_pu=float(d["magnitude_pu"]))
        for d in doc.get("disturbances", [])
    )

    obs = doc.get("observer", {})
    dphat0 = obs.get("dphat0")
    if isinstance(dphat0, dict):
        dphat0 = [float(dphat0.get(name, 0.0)) for name in grid.region_names]

    try:
        return Scenario(
            name=name,
            grid=grid,
            primary=primary,
            reduced=reduced,
            mpc=mpc,
            disturbances=disturbances,
            t_end=float(doc.get("t_end", 20.0)),
            dt_sim=float(doc.get("dt_sim", 0.01)),
            primary_on=primary_on,
            mpc_on=mpc_on,
            dphat0=None if dphat0 is None else np.asarray(dphat0, dtype=float),
            observer_q_scale=float(obs.get("q_scale", 10.0)),
            observer_r_scale=float(obs.get("r_scale", 1.0)),
            report_order=doc.get("report_order"),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# plain-text matrix bundles


def write_bundle(path: str, matrices: dict[str, np.ndarray],
                 labels: dict[str, list[str]] | None = None,
                 scalars: dict[str, float] | None = None) -> None:
    """Write named matrices/label lists/scalars; values use 17 significant
    digits so reading the file back reproduces them exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("gridfreq-bundle 1\n")
        for key in sorted(scalars or {}):
            fh.write(f"scalar {key} {scalars[key]:.17g}\n")
        for key in sorted(labels or {}):
            items = labels[key]
            fh.write(f"labels {key} {len(items)}\n")
            for item in items:
                fh.write(item + "\n")
        for key in sorted(matrices or {}):
            mat = np.atleast_2d(np.asarray(matrices[key], dtype=float))
            fh.write(f"matrix {key} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_bundle(path: str):
    """Inverse of write_bundle: returns (matrices, labels, scalars)."""
    matrices: dict[str, np.ndarray] = {}
    labels: dict[str, list[str]] = {}
    scalars: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:1] != ["gridfreq-bundle"]:
            raise ConfigError(f"{path}: not a gridfreq bundle")
        line = fh.readline()
        while line:
            parts = line.split()
            if parts[0] == "scalar":
                scalars[parts[1]] = float(parts[2])
            elif parts[0] == "labels":
                count = int(parts[2])
                labels[parts[1]] = [fh.readline().rstrip("\n") for _ in range(count)]
            elif parts[0] == "matrix":
                rows, cols = int(parts[2]), int(parts[3])
                data = [
                    [float(v) for v in fh.readline().split()] for _ in range(rows)
                ]
                mat = np.asarray(data, dtype=float).reshape(rows, cols)
                matrices[parts[1]] = mat
            else:
                raise ConfigError(f"{path}: unknown section {parts[0]!r}")
            line = fh.readline()
    return matrices, labels, scalars


def grid_bundle(grid: GridModel) -> tuple[dict, dict, dict]:
    matrices = {"A": grid.a, "B": grid.b, "C": grid.c, "Lambda": grid.lam}
    labels = {"state": list(grid.state_labels), "output": list(grid.output_labels)}
    scalars = {"f0": grid.f0, "k_sync": grid.k_sync}
    return matrices, labels, scalars


def reduced_bundle(reduced: ReducedGridModel) -> tuple[dict, dict, dict]:
    matrices = {
        "A": reduced.a,
        "B": reduced.b,
        "C": reduced.c,
        "Lambda": reduced.lam,
    }
    if reduced.hsv:
        matrices["hsv"] = np.concatenate(
            [reduced.hsv[name] for name in reduced.region_names]
        ).reshape(1, -1)
    if reduced.projection is not None:
        matrices["projection"] = reduced.projection
    labels = {
        "state": list(reduced.state_labels),
        "region": list(reduced.region_names),
        "order": [str(r) for r in reduced.region_orders],
    }
    scalars = {"f0": reduced.f0, "error_bound": reduced.error_bound}
    return matrices, labels, scalars
