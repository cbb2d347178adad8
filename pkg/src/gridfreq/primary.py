"""Inverter primary response: blended droop / virtual-synchronous-machine
filter and its per-region tuning.

The per-region controller is
    F(s) = (1 - gamma) Kbar_d / (1 + T_d s) + gamma (2 H_c s + D_c) / (1 + T_c s),
realized with two filter states and a direct feedthrough gamma*2H_c/T_c. The
plant sees +lambda * u_prim with u_prim = F(s)(-df), so positive F acts as
extra droop/inertia and support during under-frequency shows up as u_prim > 0.
Parameters are tuned per region by minimizing the simulated
quadratic cost
    (1/T) integral_0^T mu1 df^2 + mu2 dfdot^2 + mu3 u_prim^2 dt
for a step disturbance, over a box, with a deterministic Halton multi-start
compass search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import expm, spectral_abscissa
from .sfr import StateSpaceModel

__all__ = [
    "PrimaryParams",
    "PrimaryWeights",
    "PrimaryBounds",
    "primary_tf",
    "closed_loop_region",
    "primary_cost",
    "optimize_primary",
]


@dataclass(frozen=True)
class PrimaryParams:
    kbar_d: float
    h_c: float
    d_c: float
    gamma: float
    t_d: float = 0.05
    t_c: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.t_d <= 0 or self.t_c <= 0:
            raise ValueError("filter time constants must be positive")
        if self.kbar_d < 0 or self.h_c < 0 or self.d_c < 0:
            raise ValueError("gains must be non-negative")


@dataclass(frozen=True)
class PrimaryWeights:
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    horizon_s: float = 20.0

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3) < 0 or self.horizon_s <= 0:
            raise ValueError("weights must be non-negative and horizon positive")


@dataclass(frozen=True)
class PrimaryBounds:
    kbar_min: float = 0.0
    kbar_max: float = 30.0
    h_min: float = 0.0
    h_max: float = 2.5
    d_min: float = 0.0
    d_max: float = 1.0

    def __post_init__(self):
        if self.kbar_max < self.kbar_min or self.h_max < self.h_min or self.d_max < self.d_min:
            raise ValueError("upper bounds must dominate lower bounds")


def primary_tf(p: PrimaryParams) -> StateSpaceModel:
    """Two-state realization of F(s) from df to u_prim (feedthrough
    gamma*2H_c/T_c; DC gain (1-gamma)Kbar_d + gamma D_c)."""
    a = np.diag([-1.0 / p.t_d, -1.0 / p.t_c])
    b = np.array([[1.0 / p.t_d], [1.0 / p.t_c]])
    c = np.array([[(1.0 - p.gamma) * p.kbar_d,
                   p.gamma * (p.d_c - 2.0 * p.h_c / p.t_c)]])
    d = np.array([[p.gamma * 2.0 * p.h_c / p.t_c]])
    return StateSpaceModel(a, b, c, d, ["droop", "vsm"], ["df"], ["u_prim"])


def closed_loop_region(region_model: StateSpaceModel, p: PrimaryParams,
                       lam: float) -> StateSpaceModel:
    """Close u_prim = F(s)(-df) around a single-region plant that adds
    +lam*u_prim to its power balance.

    Input: net disturbance dP; outputs [df, dfdot, u_prim]. Requires a
    strictly proper plant (no df feedthrough), which rules out an algebraic
    loop with the controller feedthrough.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lam must lie in [0, 1)")
    if np.any(region_model.d != 0.0):
        raise ValueError("plant must be strictly proper")
    ctl = primary_tf(p)
    ap, bp, cp = region_model.a, region_model.b, region_model.c
    n_p = ap.shape[0]
    n_c = ctl.n_states
    dfb = float(ctl.d[0, 0])
    a = np.zeros((n_p + n_c, n_p + n_c))
    a[:n_p, :n_p] = ap - lam * dfb * (bp @ cp)
    a[:n_p, n_p:] = lam * (bp @ ctl.c)
    a[n_p:, :n_p] = -ctl.b @ cp
    a[n_p:, n_p:] = ctl.a
    b = np.zeros((n_p + n_c, 1))
    b[:n_p, 0] = bp[:, 0]
    c = np.zeros((3, n_p + n_c))
    c[0, :n_p] = cp[0]
    c[1] = a[0]  # dfdot row: swing state is plant state 0
    c[2, :n_p] = -dfb * cp[0]
    c[2, n_p:] = ctl.c[0]
    d = np.zeros((3, 1))
    d[1, 0] = b[0, 0]
    labels = region_model.state_labels + [f"prim.{s}" for s in ctl.state_labels]
    return StateSpaceModel(a, b, c, d, labels, ["dp"], ["df", "dfdot", "u_prim"])


def _step_outputs(model: StateSpaceModel, dp: float, dt: float, steps: int):
    """Outputs of the step response on the dt grid, exact under ZOH.

    Uses x_k = x_ss - Ad^k x_ss (zero initial state) and builds all powers by
    scan-doubling, so the cost stays a handful of dense matmuls.
    """
    a, b = model.a, model.b
    ad = expm(a, dt)
    x_ss = np.linalg.solve(a, -b[:, 0] * dp)
    v = x_ss.reshape(-1, 1)
    m = ad
    while v.shape[1] < steps + 1:
        v = np.hstack([v, m @ v])
        m = m @ m
    xs = x_ss[:, None] - v[:, : steps + 1]
    return model.c @ xs + model.d * dp


def primary_cost(cl_model: StateSpaceModel, weights: PrimaryWeights,
                 dp: float = -0.02, dt_sim: float = 0.01,
                 f0: float = 60.0) -> float:
    """Average quadratic cost of the closed-loop step response over the design
    horizon; +inf for an unstable loop.

    Frequency deviation and its rate are weighted in Hz / Hz-per-s (the unit
    operational limits are written in); converter effort stays per-unit.
    """
    if spectral_abscissa(cl_model.a) >= -1e-12:
        return float("inf")
    steps = int(round(weights.horizon_s / dt_sim))
    z = _step_outputs(cl_model, dp, dt_sim, steps)
    w = np.array([weights.mu1 * f0 * f0, weights.mu2 * f0 * f0, weights.mu3])
    integrand = w @ (z * z)
    return float(np.trapezoid(integrand, dx=dt_sim) / weights.horizon_s)


def _halton(index: int, base: int) -> float:
    f, r = 1.0, 0.0
    i = index
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def _box_of(bounds: PrimaryBounds) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([bounds.kbar_min, bounds.h_min, bounds.d_min, 0.0])
    hi = np.array([bounds.kbar_max, bounds.h_max, bounds.d_max, 1.0])
    return lo, hi


def optimize_primary(region_model: StateSpaceModel, lam: float,
                     weights: PrimaryWeights,
                     bounds: PrimaryBounds = PrimaryBounds(),
                     dp: float = -0.02, n_starts: int = 64,
                     resolution: float = 1e-4, dt_sim: float = 0.01,
                     t_d: float = 0.05, t_c: float = 0.05,
                     f0: float = 60.0) -> PrimaryParams:
    """Deterministic multi-start compass search over (Kbar_d, H_c, D_c, gamma).

    Start 0 is the lower-bound corner (so a degenerate objective, e.g.
    lam = 0, resolves to the lower bounds); the rest are Halton points. The
    search runs in the normalized unit box with strict-improvement moves,
    halving the step from 0.25 down to `resolution`. Ties across starts go to
    the lowest start index, so identical inputs give bit-identical parameters.
    """
    lo, hi = _box_of(bounds)
    span = hi - lo
    memo: dict[tuple, float] = {}

    def evaluate(unit: np.ndarray) -> float:
        key = tuple(np.round(unit, 12))
        if key in memo:
            return memo[key]
        vals = lo + span * np.asarray(unit)
        p = PrimaryParams(kbar_d=vals[0], h_c=vals[1], d_c=vals[2],
                          gamma=min(max(vals[3], 0.0), 1.0), t_d=t_d, t_c=t_c)
        cost = primary_cost(closed_loop_region(region_model, p, lam), weights,
                            dp=dp, dt_sim=dt_sim, f0=f0)
        memo[key] = cost
        return cost

    starts = [np.zeros(4)]
    primes = (2, 3, 5, 7)
    for i in range(1, n_starts):
        starts.append(np.array([_halton(i, b) for b in primes]))

    best_unit, best_cost = None, float("inf")
    for s_idx, start in enumerate(starts):
        x = np.clip(start, 0.0, 1.0)
        fx = evaluate(x)
        step = 0.25
        while step >= resolution:
            moved = False
            for coord in range(4):
                for sign in (1.0, -1.0):
                    cand = x.copy()
                    cand[coord] = min(max(cand[coord] + sign * step, 0.0), 1.0)
                    if cand[coord] == x[coord]:
                        continue
                    fc = evaluate(cand)
                    if fc < fx:
                        x, fx = cand, fc
                        moved = True
            if not moved:
                step *= 0.5
        if fx < best_cost:
            best_unit, best_cost = x, fx
    vals = lo + span * best_unit
    return PrimaryParams(kbar_d=float(vals[0]), h_c=float(vals[1]),
                         d_c=float(vals[2]), gamma=float(min(max(vals[3], 0.0), 1.0)),
                         t_d=t_d, t_c=t_c)
