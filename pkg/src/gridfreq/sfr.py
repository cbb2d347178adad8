"""Multi-area system-frequency-response (SFR) model construction.

Each region is a single center-of-inertia swing state plus one aggregated
turbine-governor (ASM) block per generation family present (steam; gas/diesel;
combined-cycle). Regions couple through synchronizing tie-line integrator
states. All powers are per-unit on the owning region's total capacity S_T;
tie-line states live in a common GW*p.u. base so a single state serves both
endpoints.

Sign conventions: a load increase is a negative power imbalance dP < 0;
IBR output deviation u enters the swing as +lambda*u, so injection (support
during under-frequency) means u > 0; each TG block has DC gain -kappa/R from
df to its mechanical power contribution, which the swing adds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .numerics import integrate_lti
from .trace import SimulationTrace

__all__ = [
    "SteamTgParams",
    "GasTgParams",
    "GeneratorUnit",
    "RegionSpec",
    "TieLine",
    "StateSpaceModel",
    "GridModel",
    "DEFAULT_TG",
    "equivalent_inertia",
    "equivalent_damping",
    "asm_aggregate",
    "build_region_model",
    "assemble_grid",
    "simulate_open_loop",
]

KINDS = ("steam", "gas", "diesel", "ccgt")

# ASM families: diesel units share the gas-turbine governor model.
_FAMILY_OF_KIND = {"steam": "steam", "gas": "gas", "diesel": "gas", "ccgt": "ccgt"}
_FAMILY_ORDER = ("steam", "gas", "ccgt")


@dataclass(frozen=True)
class SteamTgParams:
    """Reheat steam turbine-governor: governor valve, steam chest, reheater."""

    droop_r: float = 0.05
    t_g: float = 0.2
    t_ch: float = 0.3
    t_rh: float = 7.0
    f_hp: float = 0.3

    def __post_init__(self):
        if self.droop_r <= 0 or min(self.t_g, self.t_ch, self.t_rh) <= 0:
            raise ValueError("steam TG time constants and droop must be positive")
        if not 0.0 <= self.f_hp <= 1.0:
            raise ValueError("f_hp must lie in [0, 1]")

    n_states = 3
    state_names = ("valve", "pressure", "reheat")


@dataclass(frozen=True)
class GasTgParams:
    """Gas turbine (Rowen-style) governor chain: command, fuel valve, gas
    volume, compressor discharge. Also used for diesel and the gas side of
    combined-cycle plants."""

    droop_r: float = 0.05
    t_gov: float = 0.05
    t_v: float = 0.05
    t_f: float = 0.4
    t_cd: float = 0.2

    def __post_init__(self):
        if self.droop_r <= 0 or min(self.t_gov, self.t_v, self.t_f, self.t_cd) <= 0:
            raise ValueError("gas TG time constants and droop must be positive")

    n_states = 4
    state_names = ("governor", "fuel_valve", "volume", "discharge")


class _DefaultTg:
    """Sentinel: use the family's default governor parameters."""

    def __repr__(self):  # pragma: no cover - cosmetic
        return "DEFAULT_TG"


DEFAULT_TG = _DefaultTg()


def _default_tg_for(kind: str):
    return SteamTgParams() if kind == "steam" else GasTgParams()


@dataclass(frozen=True)
class GeneratorUnit:
    """One aggregated synchronous plant. `tg=None` means no governor (the unit
    still contributes inertia, damping and capacity)."""

    kind: str
    rated_gw: float
    inertia_h: float = 5.0
    damping_d: float = 1.0
    tg: SteamTgParams | GasTgParams | None | _DefaultTg = DEFAULT_TG

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        if self.rated_gw <= 0:
            raise ValueError("rated_gw must be positive")
        if self.inertia_h < 0 or self.damping_d < 0:
            raise ValueError("inertia_h and damping_d must be non-negative")
        if isinstance(self.tg, _DefaultTg):
            object.__setattr__(self, "tg", _default_tg_for(self.kind))
        if self.tg is not None:
            want = SteamTgParams if self.kind == "steam" else GasTgParams
            if not isinstance(self.tg, want):
                raise ValueError(f"{self.kind} unit requires {want.__name__} governor parameters")

    @property
    def family(self) -> str:
        return _FAMILY_OF_KIND[self.kind]


@dataclass(frozen=True)
class RegionSpec:
    """One operational region: synchronous units plus renewable capacity,
    with S_T = sum of unit capacities + renewable capacity."""

    name: str
    units: tuple[GeneratorUnit, ...]
    renewable_gw: float = 0.0
    total_gw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.name:
            raise ValueError("region name must be non-empty")
        if self.renewable_gw < 0:
            raise ValueError("renewable_gw must be non-negative")
        if self.total_gw <= 0:
            raise ValueError("total_gw must be positive")
        s = sum(u.rated_gw for u in self.units) + self.renewable_gw
        if abs(s - self.total_gw) > 1e-6:
            raise ValueError(
                f"region {self.name!r}: unit + renewable capacity {s} != total_gw {self.total_gw}")
        if self.renewable_share >= 1.0:
            raise ValueError(f"region {self.name!r}: renewable share must be < 1")

    @property
    def sync_gw(self) -> float:
        return sum(u.rated_gw for u in self.units)

    @property
    def renewable_share(self) -> float:
        return self.renewable_gw / self.total_gw


@dataclass(frozen=True)
class TieLine:
    """AC tie between two regions; the synchronizing coefficient is
    capacity_gw * k_sync (GW per radian of angle difference)."""

    a: str
    b: str
    capacity_gw: float

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("tie line endpoints must differ")
        if self.capacity_gw <= 0:
            raise ValueError("capacity_gw must be positive")

    @property
    def name(self) -> str:
        return f"{self.a}-{self.b}"


@dataclass
class StateSpaceModel:
    """(A, B, C, D) realization with labeled channels. Treated as immutable."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_labels: list[str]
    input_labels: list[str]
    output_labels: list[str]

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.d = np.atleast_2d(np.asarray(self.d, dtype=float))
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise ValueError("a must be square")
        if self.b.shape[0] != n or self.c.shape[1] != n:
            raise ValueError("b/c dimensions inconsistent with a")
        if self.d.shape != (self.c.shape[0], self.b.shape[1]):
            raise ValueError("d dimensions inconsistent with b/c")
        for labels, count, what in (
            (self.state_labels, n, "state"),
            (self.input_labels, self.b.shape[1], "input"),
            (self.output_labels, self.c.shape[0], "output"),
        ):
            if len(labels) != count:
                raise ValueError(f"{what} labels must have length {count}")
        for arr in (self.a, self.b, self.c, self.d):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError("model matrices must be finite")

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    def dc_gain(self) -> np.ndarray:
        return self.d - self.c @ np.linalg.solve(self.a, self.b)


def equivalent_inertia(region: RegionSpec) -> float:
    """Center-of-inertia constant H_i = sum(S_m H_m) / S_T over synchronous units."""
    return sum(u.rated_gw * u.inertia_h for u in region.units) / region.total_gw


def equivalent_damping(region: RegionSpec) -> float:
    """Capacity-weighted damping D_i = sum(S_m D_m) / S_T over synchronous units."""
    return sum(u.rated_gw * u.damping_d for u in region.units) / region.total_gw


def asm_aggregate(units: list[GeneratorUnit] | tuple[GeneratorUnit, ...], kind: str):
    """Capacity-weighted aggregate governor parameters of one ASM family.

    `kind` selects the family: "steam", "gas" (which includes diesel units) or
    "ccgt". Units without a governor are excluded.
    """
    if kind not in _FAMILY_ORDER:
        raise ValueError(f"unknown ASM family {kind!r}; expected one of {_FAMILY_ORDER}")
    members = [u for u in units if u.family == kind and u.tg is not None]
    if not members:
        raise ValueError(f"no governed units of family {kind!r}")
    total = sum(u.rated_gw for u in members)
    proto = members[0].tg
    agg = {}
    for f in fields(proto):
        agg[f.name] = sum(u.rated_gw * getattr(u.tg, f.name) for u in members) / total
    return replace(proto, **agg)


def _family_block(params) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A, b, w) of one governor chain driven by df; output P_m = w' x with
    DC gain -1/R."""
    if isinstance(params, SteamTgParams):
        tg, tch, trh = params.t_g, params.t_ch, params.t_rh
        a = np.array([
            [-1.0 / tg, 0.0, 0.0],
            [1.0 / tch, -1.0 / tch, 0.0],
            [0.0, 1.0 / trh, -1.0 / trh],
        ])
        b = np.array([-1.0 / (params.droop_r * tg), 0.0, 0.0])
        w = np.array([0.0, params.f_hp, 1.0 - params.f_hp])
        return a, b, w
    tgov, tv, tf, tcd = params.t_gov, params.t_v, params.t_f, params.t_cd
    a = np.array([
        [-1.0 / tgov, 0.0, 0.0, 0.0],
        [1.0 / tv, -1.0 / tv, 0.0, 0.0],
        [0.0, 1.0 / tf, -1.0 / tf, 0.0],
        [0.0, 0.0, 1.0 / tcd, -1.0 / tcd],
    ])
    b = np.array([-1.0 / (params.droop_r * tgov), 0.0, 0.0, 0.0])
    w = np.array([0.0, 0.0, 0.0, 1.0])
    return a, b, w


def region_families(region: RegionSpec) -> list[tuple[str, float, object]]:
    """(family, kappa, aggregated params) for each governed family present,
    in fixed steam/gas/ccgt order. kappa is the family capacity share of S_T."""
    out = []
    for fam in _FAMILY_ORDER:
        members = [u for u in region.units if u.family == fam and u.tg is not None]
        if not members:
            continue
        kappa = sum(u.rated_gw for u in members) / region.total_gw
        out.append((fam, kappa, asm_aggregate(region.units, fam)))
    return out


def build_region_model(region: RegionSpec) -> StateSpaceModel:
    """Single-region SFR model: input net power imbalance (p.u. on S_T),
    output df (p.u.). State 0 is the swing frequency; governor chains follow
    in steam/gas/ccgt order."""
    h_eq = equivalent_inertia(region)
    d_eq = equivalent_damping(region)
    if h_eq <= 0:
        raise ValueError(f"region {region.name!r} has no inertia; cannot form swing dynamics")
    fams = region_families(region)
    n = 1 + sum(fam[2].n_states for fam in fams)
    a = np.zeros((n, n))
    a[0, 0] = -d_eq / (2.0 * h_eq)
    labels = [f"{region.name}.freq"]
    col = 1
    for fam, kappa, params in fams:
        blk, bvec, w = _family_block(params)
        k = params.n_states
        sl = slice(col, col + k)
        a[sl, sl] = blk
        a[sl, 0] = bvec
        a[0, sl] = kappa * w / (2.0 * h_eq)
        labels += [f"{region.name}.{fam}.{s}" for s in params.state_names]
        col += k
    b = np.zeros((n, 1))
    b[0, 0] = 1.0 / (2.0 * h_eq)
    c = np.zeros((1, n))
    c[0, 0] = 1.0
    return StateSpaceModel(a, b, c, np.zeros((1, 1)), labels, [region.name], [f"df.{region.name}"])


@dataclass
class GridModel:
    """Assembled multi-area plant xdot = A x + B (dP - Lambda u), y = C x with
    y = [df per region (p.u.); tie-line flows (p.u. on first-endpoint base)]."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    state_labels: list[str]
    output_labels: list[str]
    regions: tuple[RegionSpec, ...]
    lines: tuple[TieLine, ...]
    f0: float
    k_sync: float
    region_slices: list[slice]
    freq_idx: np.ndarray
    tie_idx: np.ndarray
    s_t: np.ndarray
    h_eq: np.ndarray
    d_eq: np.ndarray
    pm_rows: np.ndarray
    region_models: list[StateSpaceModel] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def region_names(self) -> list[str]:
        return [r.name for r in self.regions]

    @property
    def region_index(self) -> dict[str, int]:
        return {r.name: i for i, r in enumerate(self.regions)}

    @property
    def line_index(self) -> dict[str, int]:
        return {ln.name: i for i, ln in enumerate(self.lines)}

    @property
    def c_freq(self) -> np.ndarray:
        return self.c[: self.n_regions]

    @property
    def c_tie(self) -> np.ndarray:
        return self.c[self.n_regions:]


def _check_bounded_response(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> None:
    """Reject an assembled grid whose forced response could grow unbounded.

    A meshed tie topology places one exact zero eigenvalue on A per
    independent cycle: a circulating tie flow that cancels at every bus, so
    no swing state ever sees it. Such modes are invariant and carry no input
    coupling, hence they stay out of the forced response and are accepted
    here. Any other eigenvalue on or beyond the imaginary axis, or a marginal
    mode the inputs can reach, is a genuine instability.
    """
    vals, vecs = np.linalg.eig(a.T)
    for k in np.flatnonzero(vals.real >= -tol):
        lam_k = vals[k]
        if lam_k.real > tol:
            raise ValueError(
                f"assembled grid is unstable (eigenvalue {lam_k:.3e})")
        # left eigenvector of A; a reachable marginal mode integrates input
        coupling = float(np.abs(vecs[:, k] @ b).max())
        if coupling > 1e-7:
            raise ValueError(
                "assembled grid has a marginal mode reachable from the power "
                f"inputs (eigenvalue {lam_k:.3e}, coupling {coupling:.3e})")


def assemble_grid(regions, lines=(), f0: float = 60.0, k_sync: float = 0.1,
                  check_stability: bool = True) -> GridModel:
    """Couple per-region models through tie-line integrator states.

    Each line l contributes one state w_l (GW*p.u. base) with
    wdot_l = 2 pi T_ab (df_a - df_b), T_ab = capacity_gw * k_sync; region a's
    swing sees -w_l / S_T^(a) and region b sees +w_l / S_T^(b). Reported line
    flow is w_l on the first endpoint's base.
    """
    regions = tuple(regions)
    lines = tuple(lines)
    if not regions:
        raise ValueError("at least one region is required")
    names = [r.name for r in regions]
    if len(set(names)) != len(names):
        raise ValueError("duplicate region names")
    index = {n: i for i, n in enumerate(names)}
    seen_pairs = set()
    for ln in lines:
        if ln.a not in index or ln.b not in index:
            raise ValueError(f"tie line {ln.name!r} references unknown region")
        pair = frozenset((ln.a, ln.b))
        if pair in seen_pairs:
            raise ValueError(f"duplicate tie line between {ln.a!r} and {ln.b!r}")
        seen_pairs.add(pair)

    models = [build_region_model(r) for r in regions]
    sizes = [m.n_states for m in models]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_reg = int(offsets[-1])
    n_l = len(lines)
    n = n_reg + n_l
    n_r = len(regions)

    a = np.zeros((n, n))
    b = np.zeros((n, n_r))
    state_labels: list[str] = []
    region_slices = []
    for i, m in enumerate(models):
        sl = slice(int(offsets[i]), int(offsets[i + 1]))
        region_slices.append(sl)
        a[sl, sl] = m.a
        b[sl, i] = m.b[:, 0]
        state_labels += m.state_labels
    freq_idx = offsets[:-1].astype(int)
    tie_idx = np.arange(n_reg, n)

    s_t = np.array([r.total_gw for r in regions])
    h_eq = np.array([equivalent_inertia(r) for r in regions])
    d_eq = np.array([equivalent_damping(r) for r in regions])

    for l, ln in enumerate(lines):
        ia, ib = index[ln.a], index[ln.b]
        col = n_reg + l
        t_ab = ln.capacity_gw * k_sync
        a[col, freq_idx[ia]] = 2.0 * math.pi * t_ab
        a[col, freq_idx[ib]] = -2.0 * math.pi * t_ab
        a[freq_idx[ia], col] = -1.0 / (2.0 * h_eq[ia] * s_t[ia])
        a[freq_idx[ib], col] = 1.0 / (2.0 * h_eq[ib] * s_t[ib])
        state_labels.append(f"tie.{ln.name}")

    c = np.zeros((n_r + n_l, n))
    for i in range(n_r):
        c[i, freq_idx[i]] = 1.0
    for l, ln in enumerate(lines):
        c[n_r + l, n_reg + l] = 1.0 / s_t[index[ln.a]]
    output_labels = [f"df.{nm}" for nm in names] + [f"ptl.{ln.name}" for ln in lines]

    lam = np.diag([r.renewable_share for r in regions])

    # mechanical-power read-out rows: dP_m per region from its governor states
    pm = np.zeros((n_r, n))
    for i, (r, m) in enumerate(zip(regions, models)):
        row = m.a[0] * 2.0 * h_eq[i]
        row[0] = 0.0  # drop the damping term, keep the TG contributions
        pm[i, region_slices[i]] = row

    grid = GridModel(
        a=a, b=b, c=c, lam=lam, state_labels=state_labels,
        output_labels=output_labels, regions=regions, lines=lines, f0=f0,
        k_sync=k_sync, region_slices=region_slices, freq_idx=freq_idx,
        tie_idx=tie_idx, s_t=s_t, h_eq=h_eq, d_eq=d_eq, pm_rows=pm,
        region_models=models,
    )
    if check_stability:
        _check_bounded_response(a, b)
    return grid


def _input_sequence(sig, n: int, steps: int, dt: float, name: str) -> np.ndarray:
    if sig is None:
        return np.zeros((steps, n))
    if callable(sig):
        return np.array([np.asarray(sig(k * dt), dtype=float).reshape(n) for k in range(steps)])
    arr = np.asarray(sig, dtype=float)
    if arr.ndim == 1:
        return np.broadcast_to(arr.reshape(n), (steps, n)).copy()
    if arr.shape != (steps, n):
        raise ValueError(f"{name} must be a vector, callable, or ({steps}, {n}) array")
    return arr


def simulate_open_loop(grid: GridModel, dp, u=None, t_end: float = 20.0,
                       dt_sim: float = 0.01) -> SimulationTrace:
    """Open-loop response to disturbance dP(t) and external IBR input u(t),
    both piecewise constant on the dt_sim grid."""
    steps = int(round(t_end / dt_sim))
    if abs(steps * dt_sim - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a whole number of dt_sim steps")
    n_r = grid.n_regions
    dps = _input_sequence(dp, n_r, steps, dt_sim, "dp")
    us = _input_sequence(u, n_r, steps, dt_sim, "u")
    v = dps + us @ grid.lam.T
    t, xs = integrate_lti(grid.a, grid.b, v, np.zeros(grid.n_states), dt_sim, t_end)
    y = xs @ grid.c.T
    df_pu = y[:, :n_r]
    nt = len(t)
    u_full = np.vstack([us, us[-1:] if steps else np.zeros((1, n_r))])[:nt]
    zeros_r = np.zeros((nt, n_r))
    return SimulationTrace(
        t=t, region_names=grid.region_names,
        line_names=[ln.name for ln in grid.lines],
        df_pu=df_pu, df_hz=grid.f0 * df_pu, ptl_pu=y[:, n_r:],
        u_prim=zeros_r, u_mpc=u_full, dphat=zeros_r,
        eps_f_max=np.zeros(nt), eps_u_max=np.zeros(nt), f0=grid.f0,
        states=xs,
    )
