"""Constrained receding-horizon secondary control on the reduced plant.

The controller predicts with the reduced grid closed around the continuous
primary filters, discretized exactly (ZOH) at the control step, so the primary
layer's response nu_k to the *predicted* frequency is linear in the decision
variables and the condensed problem stays a convex QP. The plant and filter
must be discretized jointly: closing a per-block filter discretization around
the one-step plant injects a spurious half-sample feedthrough that goes
unstable at aggressive droop gains, while the sampled closed loop inherits the
continuous loop's stability exactly. Decision variables are the command
increments Delta-u_{1..H-1} plus one soft-constraint slack vector pair
(eps_f, eps_u) for the whole horizon.

Per horizon, with xi = [xhat; z] (z the 2N filter states, driven by -df so
that converter output is injection-positive):
    xi_{k+1} = Aa xi_k + Ba u_k + Ea dPhat,   u_k = u_0 + sum_{m<=k} Du_m,
    mu_k = u_k + nu_k,   nu_k = Cf z_k - Df C1 xhat_k.
Frequency-band and scheduled-power constraints are soft (slack-penalized);
rate-of-change-of-frequency, tie-line, slew and headroom constraints are hard.
An infeasible QP leaves the previous command applied and raises an alarm in
the log.

Between solves the controller tracks the physical filter bank's state with a
Tustin replica advanced by measured frequency; Tustin preserves the continuous
state basis, so the replica state seeds the sampled-closed-loop prediction
directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import QpProblem, solve_qp, zoh_discretize
from .primary import PrimaryParams
from .reduction import ReducedGridModel

__all__ = [
    "MpcConfig",
    "MpcSolution",
    "DiscretePrimaryFilter",
    "continuous_primary_bank",
    "tustin_primary",
    "CondensedTemplate",
    "CondensedQp",
    "build_qp",
    "solve_horizon",
    "SecondaryController",
]

log = logging.getLogger("gridfreq.mpc")

HARD_CLASSES = ("rocof", "tie", "slew", "headroom")


def _vec(v, n: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != n:
        raise ValueError(f"{name} must broadcast to length {n}")
    return arr


@dataclass
class MpcConfig:
    """Secondary-layer tuning; all per-region quantities are N-vectors."""

    n_regions: int
    horizon: int = 25          # H, prediction steps
    apply_steps: int = 10      # h, commands applied before the next solve
    dt: float = 0.2            # control step (s)
    q_diag: np.ndarray = None  # frequency weight Q (p.u. basis)
    r_diag: np.ndarray = None  # increment weight R
    eta_f: np.ndarray = None   # frequency-band slack penalty
    eta_u: np.ndarray = None   # scheduled-power slack penalty
    df_lo: float = -0.015      # Hz
    df_hi: float = 0.015       # Hz
    f0: float = 60.0
    rocof_max: float = 0.6     # Hz/s over the n_rocof-step window
    n_rocof: int = 5
    ptl_lo: float = -0.15      # p.u. on first-endpoint base
    ptl_hi: float = 0.15
    du_max: float = 0.002
    p_ibr_star: np.ndarray = None  # scheduled operating point on converter base
    u_lo: np.ndarray = None
    u_hi: np.ndarray = None
    first_command_delay_s: float = 1.0

    def __post_init__(self):
        n = self.n_regions
        if n <= 0:
            raise ValueError("n_regions must be positive")
        if not 0 < self.apply_steps < self.horizon:
            raise ValueError("need 0 < apply_steps < horizon")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not 0 < self.n_rocof < self.horizon:
            raise ValueError("need 0 < n_rocof < horizon")
        if self.dt <= 0 or self.du_max <= 0 or self.rocof_max <= 0:
            raise ValueError("dt, du_max and rocof_max must be positive")
        if not self.df_lo < 0 < self.df_hi:
            raise ValueError("frequency band must contain zero")
        if self.ptl_lo >= self.ptl_hi:
            raise ValueError("tie-line band must be non-empty")
        if self.first_command_delay_s < 0:
            raise ValueError("first_command_delay_s must be non-negative")
        self.q_diag = _vec(self.q_diag if self.q_diag is not None else 10.0, n, "q_diag")
        self.r_diag = _vec(self.r_diag if self.r_diag is not None else 1.0, n, "r_diag")
        self.eta_f = _vec(self.eta_f if self.eta_f is not None else 1e6, n, "eta_f")
        self.eta_u = _vec(self.eta_u if self.eta_u is not None else 1e3, n, "eta_u")
        self.p_ibr_star = _vec(self.p_ibr_star if self.p_ibr_star is not None else 0.8, n, "p_ibr_star")
        self.u_lo = np.asarray(self.u_lo, dtype=float).reshape(n) if self.u_lo is not None else np.full(n, -np.inf)
        self.u_hi = np.asarray(self.u_hi, dtype=float).reshape(n) if self.u_hi is not None else np.full(n, np.inf)
        if np.any(np.minimum(self.q_diag, self.r_diag) < 0) or np.any(np.minimum(self.eta_f, self.eta_u) < 0):
            raise ValueError("weights must be non-negative")

    @property
    def sample_period_s(self) -> float:
        return self.apply_steps * self.dt

    @staticmethod
    def bounds_from_shares(shares: np.ndarray, budget: float = 0.015) -> tuple[np.ndarray, np.ndarray]:
        """Scheduled command bounds +/- budget/lambda_i; infinite where the
        region has no inverter capacity."""
        shares = np.asarray(shares, dtype=float)
        with np.errstate(divide="ignore"):
            hi = np.where(shares > 0, budget / np.where(shares > 0, shares, 1.0), np.inf)
        return -hi, hi


def continuous_primary_bank(params: list[PrimaryParams] | None, n_regions: int):
    """Continuous block-diagonal state space of the per-region primary filters;
    input df (p.u.), output nu on the converter base. None means all-zero
    filters of the same state dimension."""
    if params is None:
        params = [PrimaryParams(0.0, 0.0, 0.0, 0.0)] * n_regions
    if len(params) != n_regions:
        raise ValueError("need one primary parameter set per region")
    a = np.zeros((2 * n_regions, 2 * n_regions))
    b = np.zeros((2 * n_regions, n_regions))
    c = np.zeros((n_regions, 2 * n_regions))
    d = np.zeros((n_regions, n_regions))
    for i, p in enumerate(params):
        sl = slice(2 * i, 2 * i + 2)
        a[sl, sl] = np.diag([-1.0 / p.t_d, -1.0 / p.t_c])
        b[sl, i] = [1.0 / p.t_d, 1.0 / p.t_c]
        c[i, sl] = [(1.0 - p.gamma) * p.kbar_d, p.gamma * (p.d_c - 2.0 * p.h_c / p.t_c)]
        d[i, i] = p.gamma * 2.0 * p.h_c / p.t_c
    return a, b, c, d


def tustin_primary(p: PrimaryParams, dt: float):
    """Bilinear (Tustin) discretization of one region's primary filter.

    Returns (a, b, c, d) with a 2x2; preserves the DC gain, and for the pure
    droop branch places the pole at (2 T_d - dt) / (2 T_d + dt).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ac = np.diag([-1.0 / p.t_d, -1.0 / p.t_c])
    bc = np.array([[1.0 / p.t_d], [1.0 / p.t_c]])
    cc = np.array([[(1.0 - p.gamma) * p.kbar_d, p.gamma * (p.d_c - 2.0 * p.h_c / p.t_c)]])
    dc = np.array([[p.gamma * 2.0 * p.h_c / p.t_c]])
    ima = np.eye(2) - 0.5 * dt * ac
    ad = np.linalg.solve(ima, np.eye(2) + 0.5 * dt * ac)
    bd = np.linalg.solve(ima, bc) * dt
    cd = np.linalg.solve(ima.T, cc.T).T
    dd = dc + 0.5 * (cc @ bd)
    return ad, bd, cd, dd


@dataclass
class DiscretePrimaryFilter:
    """Block-diagonal bank of the per-region Tustin filters with its state."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    z: np.ndarray

    @classmethod
    def from_params(cls, params: list[PrimaryParams] | None, n_regions: int,
                    dt: float) -> "DiscretePrimaryFilter":
        if params is None:
            params = [PrimaryParams(0.0, 0.0, 0.0, 0.0)] * n_regions
        if len(params) != n_regions:
            raise ValueError("need one primary parameter set per region")
        a = np.zeros((2 * n_regions, 2 * n_regions))
        b = np.zeros((2 * n_regions, n_regions))
        c = np.zeros((n_regions, 2 * n_regions))
        d = np.zeros((n_regions, n_regions))
        for i, p in enumerate(params):
            ad, bd, cd, dd = tustin_primary(p, dt)
            sl = slice(2 * i, 2 * i + 2)
            a[sl, sl] = ad
            b[sl, i] = bd[:, 0]
            c[i, sl] = cd[0]
            d[i, i] = dd[0, 0]
        return cls(a=a, b=b, c=c, d=d, z=np.zeros(2 * n_regions))

    @property
    def n_regions(self) -> int:
        return self.d.shape[0]

    def output(self, df: np.ndarray) -> np.ndarray:
        return self.c @ self.z + self.d @ df

    def step(self, df: np.ndarray) -> np.ndarray:
        """Emit nu_k for the current state, then advance with df_k."""
        df = np.asarray(df, dtype=float).reshape(self.n_regions)
        nu = self.output(df)
        self.z = self.a @ self.z + self.b @ df
        return nu

    def copy(self) -> "DiscretePrimaryFilter":
        return DiscretePrimaryFilter(self.a.copy(), self.b.copy(), self.c.copy(),
                                     self.d.copy(), self.z.copy())


@dataclass
class MpcSolution:
    status: str
    du: np.ndarray            # (H-1, N)
    u: np.ndarray             # (H-1, N), u_k = u_0 + cumulative du
    eps_f: np.ndarray
    eps_u: np.ndarray
    x_pred: np.ndarray        # (H+1, r) predicted reduced states, k = 0..H
    nu: np.ndarray            # (H+1, N) predicted primary response
    mu: np.ndarray            # (H-1, N) total commands at k = 1..H-1
    objective: float
    hard_violation: float
    kkt_max: float
    iterations: int
    infeasible_classes: list[str] = field(default_factory=list)


class CondensedTemplate:
    """Per-(model, config) condensation of the horizon QP.

    Everything that does not depend on the solve instant (prediction power
    series, constraint coefficient matrices, the Hessian) is computed once;
    `instantiate` only forms the linear term and right-hand sides.
    """

    def __init__(self, cfg: MpcConfig, a: np.ndarray, b: np.ndarray,
                 c_freq: np.ndarray, c_tie: np.ndarray, lam: np.ndarray,
                 primary: list[PrimaryParams] | None):
        n = cfg.n_regions
        if c_freq.shape[0] != n:
            raise ValueError("model region count must match the config")
        r = a.shape[0]
        af, bf, cf_bank, df_bank = continuous_primary_bank(primary, n)
        nz = af.shape[0]
        n_xi = r + nz
        hor = cfg.horizon
        nd = n * (hor - 1)
        nvar = nd + 2 * n
        self.cfg = cfg
        self.r = r
        self.n = n
        self.n_xi = n_xi
        self.nd = nd
        self.nvar = nvar

        # continuous plant/filter closed loop, sampled exactly at the control
        # step with u and dPhat held constant over each step
        b_lam = b @ lam
        acl = np.zeros((n_xi, n_xi))
        acl[:r, :r] = a - b_lam @ df_bank @ c_freq
        acl[:r, r:] = b_lam @ cf_bank
        acl[r:, :r] = -bf @ c_freq
        acl[r:, r:] = af
        b_in = np.zeros((n_xi, 2 * n))
        b_in[:r, :n] = b_lam
        b_in[:r, n:] = b
        aa, bd_in = zoh_discretize(acl, b_in, cfg.dt)
        ba, ea = bd_in[:, :n].copy(), bd_in[:, n:].copy()
        self.aa, self.ba, self.ea = aa, ba, ea

        powers = [np.eye(n_xi)]
        sums = [np.zeros((n_xi, n_xi))]
        for k in range(hor):
            sums.append(sums[-1] + powers[-1])
            powers.append(aa @ powers[-1])
        self.powers, self.sums = powers, sums
        s_ba = [s @ ba for s in sums]

        # Gam maps the stacked increments to [xi_0; ...; xi_H]
        gam = np.zeros(((hor + 1) * n_xi, nd))
        for k in range(1, hor + 1):
            rows = slice(k * n_xi, (k + 1) * n_xi)
            for m in range(1, min(k - 1, hor - 1) + 1):
                gam[rows, (m - 1) * n: m * n] = s_ba[k - m]
        self.gam = gam

        cf = np.hstack([c_freq, np.zeros((n, nz))])       # predicted df (p.u.)
        ct = np.hstack([c_tie, np.zeros((c_tie.shape[0], nz))])
        cmu = np.hstack([-df_bank @ c_freq, cf_bank])     # predicted nu
        self.cf, self.ct, self.cmu = cf, ct, cmu
        n_l = ct.shape[0]

        def xi_rows(mat: np.ndarray, k: int) -> np.ndarray:
            out = np.zeros((mat.shape[0], (hor + 1) * n_xi))
            out[:, k * n_xi: (k + 1) * n_xi] = mat
            return out

        u_sel = np.zeros((hor - 1, n, nd))
        for k in range(1, hor):
            u_sel[k - 1, :, : k * n] = np.tile(np.eye(n), k)

        r_xi, g_direct, rhs_fixed, u0_coef, classes = [], [], [], [], []

        def add(rows_xi, rows_direct, rhs, u0c, cls, count):
            r_xi.append(rows_xi)
            g_direct.append(rows_direct)
            rhs_fixed.append(rhs)
            u0_coef.append(u0c)
            classes.extend([cls] * count)

        zero_n = np.zeros((n, n))
        eps_f_cols = slice(nd, nd + n)
        eps_u_cols = slice(nd + n, nd + 2 * n)

        # (soft) frequency band in Hz, k = 1..H, shared slack eps_f
        for k in range(1, hor + 1):
            for sign, bound in ((1.0, np.full(n, cfg.df_hi)), (-1.0, np.full(n, -cfg.df_lo))):
                gd = np.zeros((n, nvar))
                gd[:, eps_f_cols] = -np.eye(n)
                add(sign * cfg.f0 * xi_rows(cf, k), gd, bound, zero_n, "freq", n)
        # (hard) windowed RoCoF, k = 0..H - n_r
        coef = cfg.f0 / (cfg.n_rocof * cfg.dt)
        for k in range(0, hor - cfg.n_rocof + 1):
            diff = xi_rows(cf, k + cfg.n_rocof) - xi_rows(cf, k)
            for sign in (1.0, -1.0):
                add(sign * coef * diff, np.zeros((n, nvar)),
                    np.full(n, cfg.rocof_max), zero_n, "rocof", n)
        # (hard) tie-line band, k = 1..H
        if n_l:
            zero_l = np.zeros((n_l, n))
            for k in range(1, hor + 1):
                for sign, bound in ((1.0, np.full(n_l, cfg.ptl_hi)), (-1.0, np.full(n_l, -cfg.ptl_lo))):
                    add(sign * xi_rows(ct, k), np.zeros((n_l, nvar)), bound, zero_l, "tie", n_l)
        # (hard) slew on each increment
        for k in range(1, hor):
            for sign in (1.0, -1.0):
                gd = np.zeros((n, nvar))
                gd[:, (k - 1) * n: k * n] = sign * np.eye(n)
                add(np.zeros((n, (hor + 1) * n_xi)), gd, np.full(n, cfg.du_max),
                    zero_n, "slew", n)
        # (hard) converter headroom on mu_k, k = 1..H-1
        head_hi = 1.0 - cfg.p_ibr_star
        head_lo = cfg.p_ibr_star  # rhs of -mu <= p_ibr_star
        for k in range(1, hor):
            gd_u = np.zeros((n, nvar))
            gd_u[:, :nd] = u_sel[k - 1]
            add(xi_rows(cmu, k), gd_u, head_hi, -np.eye(n), "headroom", n)
            add(-xi_rows(cmu, k), -gd_u, head_lo, np.eye(n), "headroom", n)
        # (soft) scheduled power band on mu_k with slack eps_u; skip infinite bounds
        fin_hi = np.isfinite(cfg.u_hi)
        fin_lo = np.isfinite(cfg.u_lo)
        for k in range(1, hor):
            if np.any(fin_hi):
                sel = np.flatnonzero(fin_hi)
                gd = np.zeros((len(sel), nvar))
                gd[:, :nd] = u_sel[k - 1][sel]
                gd[:, eps_u_cols] = -np.eye(n)[sel]
                add(xi_rows(cmu, k)[sel], gd, cfg.u_hi[sel], -np.eye(n)[sel], "sched", len(sel))
            if np.any(fin_lo):
                sel = np.flatnonzero(fin_lo)
                gd = np.zeros((len(sel), nvar))
                gd[:, :nd] = -u_sel[k - 1][sel]
                gd[:, eps_u_cols] = -np.eye(n)[sel]
                add(-xi_rows(cmu, k)[sel], gd, -cfg.u_lo[sel], np.eye(n)[sel], "sched", len(sel))
        # slack non-negativity
        gd = np.zeros((2 * n, nvar))
        gd[:, nd:] = -np.eye(2 * n)
        add(np.zeros((2 * n, (hor + 1) * n_xi)), gd, np.zeros(2 * n),
            np.zeros((2 * n, n)), "nonneg", 2 * n)

        self.r_xi = np.vstack(r_xi)
        g_traj = np.zeros((self.r_xi.shape[0], nvar))
        g_traj[:, :nd] = self.r_xi @ gam
        self.g = g_traj + np.vstack(g_direct)
        self.rhs_fixed = np.concatenate(rhs_fixed)
        self.u0_coef = np.vstack(u0_coef)
        self.row_classes = classes
        self.u_sel = u_sel

        # cost: sum_{k=1}^{H-1} |C1 xhat_k|^2_Q + |du_k|^2_R + slack penalties
        f_sel = np.vstack([xi_rows(cf, k) for k in range(1, hor)])
        yg = f_sel @ gam
        q_rep = np.tile(cfg.q_diag, hor - 1)
        p_mat = np.zeros((nvar, nvar))
        p_mat[:nd, :nd] = 2.0 * (yg.T @ (q_rep[:, None] * yg) + np.diag(np.tile(cfg.r_diag, hor - 1)))
        self.p_mat = p_mat
        self.f_sel = f_sel
        self.yg_t_q = 2.0 * (yg.T * q_rep[None, :])

    def xi_const(self, x0: np.ndarray, z0: np.ndarray, u0: np.ndarray,
                 dphat: np.ndarray) -> np.ndarray:
        xi0 = np.concatenate([x0, z0])
        drive = self.ba @ u0 + self.ea @ dphat
        blocks = [xi0]
        for k in range(1, self.cfg.horizon + 1):
            blocks.append(self.powers[k] @ xi0 + self.sums[k] @ drive)
        return np.concatenate(blocks)

    def instantiate(self, x0: np.ndarray, dphat: np.ndarray, u0: np.ndarray,
                    z0: np.ndarray) -> "CondensedQp":
        n, r = self.n, self.r
        x0 = np.asarray(x0, dtype=float).reshape(r)
        dphat = np.asarray(dphat, dtype=float).reshape(n)
        u0 = np.asarray(u0, dtype=float).reshape(n)
        z0 = np.asarray(z0, dtype=float).reshape(self.n_xi - r)
        xic = self.xi_const(x0, z0, u0, dphat)
        y0 = self.f_sel @ xic
        q = np.zeros(self.nvar)
        q[: self.nd] = self.yg_t_q @ y0
        q[self.nd: self.nd + n] = self.cfg.eta_f
        q[self.nd + n:] = self.cfg.eta_u
        h = self.rhs_fixed + self.u0_coef @ u0 - self.r_xi @ xic
        problem = QpProblem(self.p_mat, q, self.g, h)
        offset = float(y0 @ (np.tile(self.cfg.q_diag, self.cfg.horizon - 1) * y0))
        return CondensedQp(template=self, problem=problem, xi_const_flat=xic,
                           x0=x0, z0=z0, u0=u0, dphat=dphat,
                           objective_offset=offset)


@dataclass
class CondensedQp:
    template: CondensedTemplate
    problem: QpProblem
    xi_const_flat: np.ndarray
    x0: np.ndarray
    z0: np.ndarray
    u0: np.ndarray
    dphat: np.ndarray
    objective_offset: float = 0.0

    def decode(self, x: np.ndarray) -> dict:
        t = self.template
        hor = t.cfg.horizon
        du = x[: t.nd].reshape(hor - 1, t.n)
        eps_f = x[t.nd: t.nd + t.n]
        eps_u = x[t.nd + t.n:]
        xi = (self.xi_const_flat + t.gam @ x[: t.nd]).reshape(hor + 1, t.n_xi)
        x_pred = xi[:, : t.r]
        nu = xi @ t.cmu.T
        u = self.u0[None, :] + np.cumsum(du, axis=0)
        mu = u + nu[1:hor]
        return {"du": du, "eps_f": eps_f, "eps_u": eps_u, "x_pred": x_pred,
                "nu": nu, "u": u, "mu": mu}


def build_qp(cfg: MpcConfig, reduced: ReducedGridModel,
             primary: list[PrimaryParams] | None, x0, dphat, u0,
             z0=None) -> CondensedQp:
    """One-shot condensation for a single solve instant (the controller keeps
    a reusable template instead)."""
    template = CondensedTemplate(cfg, reduced.a, reduced.b, reduced.c_freq,
                                 reduced.c_tie, reduced.lam, primary)
    if z0 is None:
        z0 = np.zeros(template.n_xi - template.r)
    return template.instantiate(x0, dphat, u0, z0)


def solve_horizon(cq: CondensedQp, tol: float = 1e-7) -> MpcSolution:
    """Solve the condensed QP and decode the horizon plan."""
    res = solve_qp(cq.problem, tol=tol)
    t = cq.template
    if res.status == "optimal":
        parts = cq.decode(res.x)
        slack = cq.problem.g @ res.x - cq.problem.h
        hard = np.array([cls in HARD_CLASSES for cls in t.row_classes])
        hard_violation = float(np.max(slack[hard], initial=0.0))
        return MpcSolution(status=res.status,
                           objective=res.objective + cq.objective_offset,
                           hard_violation=hard_violation, kkt_max=res.kkt["max"],
                           iterations=res.iterations, **parts)
    classes: list[str] = []
    if res.status == "infeasible" and res.y_ineq.size:
        big = res.y_ineq > 1e-6 * max(res.y_ineq.max(), 1e-300)
        classes = sorted({t.row_classes[i] for i in np.flatnonzero(big)
                          if t.row_classes[i] in HARD_CLASSES})
    hor = t.cfg.horizon
    nan_plan = np.full((hor - 1, t.n), np.nan)
    return MpcSolution(status=res.status, du=nan_plan, u=nan_plan,
                       eps_f=np.full(t.n, np.nan), eps_u=np.full(t.n, np.nan),
                       x_pred=np.full((hor + 1, t.r), np.nan),
                       nu=np.full((hor + 1, t.n), np.nan),
                       mu=nan_plan, objective=float("nan"),
                       hard_violation=float("nan"), kkt_max=res.kkt.get("max", float("nan")),
                       iterations=res.iterations, infeasible_classes=classes)


class SecondaryController:
    """Receding-horizon driver: solves every h control steps (after the
    configured delay), applies the first h commands as a ZOH staircase, and
    keeps a primary-filter replica advanced with measured frequency so each
    solve starts from the right filter state."""

    def __init__(self, cfg: MpcConfig, reduced: ReducedGridModel,
                 primary_params: list[PrimaryParams] | None):
        self.cfg = cfg
        self.filt = DiscretePrimaryFilter.from_params(primary_params,
                                                      cfg.n_regions, cfg.dt)
        self.template = CondensedTemplate(cfg, reduced.a, reduced.b,
                                          reduced.c_freq, reduced.c_tie,
                                          reduced.lam, primary_params)
        delay_ticks = cfg.first_command_delay_s / cfg.dt
        if abs(delay_ticks - round(delay_ticks)) > 1e-9:
            raise ValueError("first_command_delay_s must be a multiple of dt")
        self.delay_ticks = int(round(delay_ticks))
        self.u_prev = np.zeros(cfg.n_regions)
        self.schedule: np.ndarray | None = None
        self.slot = 0
        self.solve_log: list[dict] = []

    def receding_horizon_step(self, xhat: np.ndarray,
                              dphat: np.ndarray) -> np.ndarray:
        """Solve one horizon from the observer sample and the replica filter
        state; returns the (apply_steps, N) command staircase, falling back to
        a hold of the previous command if the QP is not solved."""
        cfg = self.cfg
        cq = self.template.instantiate(xhat, dphat, self.u_prev, self.filt.z)
        sol = solve_horizon(cq)
        if sol.status == "optimal":
            schedule = sol.u[: cfg.apply_steps].copy()
        else:
            log.warning("horizon QP %s (classes: %s); holding previous command",
                        sol.status, ",".join(sol.infeasible_classes) or "-")
            schedule = np.tile(self.u_prev, (cfg.apply_steps, 1))
        self.schedule = schedule
        self.slot = 0
        self.u_prev = schedule[-1].copy()
        self.solve_log.append({
            "status": sol.status,
            "objective": sol.objective,
            "eps_f_max": float(np.max(sol.eps_f)) if sol.status == "optimal" else float("nan"),
            "eps_u_max": float(np.max(sol.eps_u)) if sol.status == "optimal" else float("nan"),
            "hard_violation": sol.hard_violation,
            "kkt_max": sol.kkt_max,
            "iterations": sol.iterations,
            "solution": sol,
        })
        return schedule

    def observe(self, df_meas: np.ndarray) -> None:
        """Feed one measured frequency sample (every dt) to the replica filter.
        The bank is driven by -df so its output is injection-positive."""
        self.filt.step(-np.asarray(df_meas, dtype=float))

    def step(self, tick: int, df_meas: np.ndarray, xhat: np.ndarray,
             dphat: np.ndarray) -> np.ndarray:
        """Per-control-tick driver: solve when due, emit the command holding
        over [tick*dt, (tick+1)*dt), then consume this tick's measurement."""
        cfg = self.cfg
        if tick >= self.delay_ticks and (tick - self.delay_ticks) % cfg.apply_steps == 0:
            self.receding_horizon_step(xhat, dphat)
            self.solve_log[-1]["t_s"] = tick * cfg.dt
        if self.schedule is None:
            cmd = np.zeros(cfg.n_regions)
        else:
            cmd = self.schedule[min(self.slot, cfg.apply_steps - 1)].copy()
            self.slot += 1
        self.observe(df_meas)
        return cmd
