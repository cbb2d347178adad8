"""Case-study acceptance checks shared by the CLI and the test suite.

Each check exercises one verifiable claim about the embedded interconnection
study or about a core numerical routine, with an explicit tolerance. The
expensive artifacts (optimized primary parameters, reduced models, closed-loop
runs) are computed once per KsaStudy instance and reused across checks.

Oracles used here are deliberately independent of the implementation under
test: Taylor-series matrix exponentials, brute-force active-set enumeration
for QPs, and random search for the primary-parameter optimizer.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from .harness import Disturbance, Scenario, compute_metrics, default_mpc_config, run_closed_loop
from .ksa import load_ksa_dataset
from .mpc import CondensedTemplate, MpcConfig, solve_horizon
from .numerics import QpProblem, integrate_lti, solve_qp, spectral_abscissa, zoh_discretize
from .observer import ObserverState, design_filter, step_filter
from .primary import (PrimaryParams, closed_loop_region, optimize_primary,
                      primary_cost)
from .reduction import balance, frequency_response, hsv_ratio, reduce_grid, truncate
from .sfr import assemble_grid, build_region_model

__all__ = ["KsaStudy", "Check", "CHECKS", "run_checks", "get_study",
           "solve_qp_enumeration"]

UFLS_HZ = -0.15
BAND_HZ = 0.015
DIST_PU = -0.02


class KsaStudy:
    """Lazily computed artifacts of the interconnection case study."""

    @cached_property
    def dataset(self):
        return load_ksa_dataset()

    @cached_property
    def grid_2030(self):
        ds = self.dataset
        return assemble_grid(ds.regions_2030, ds.lines, f0=ds.f0, k_sync=ds.k_sync)

    @cached_property
    def grid_pre_res(self):
        ds = self.dataset
        return assemble_grid(ds.regions_pre_res, ds.lines, f0=ds.f0, k_sync=ds.k_sync)

    @cached_property
    def grid_2030_isolated(self):
        ds = self.dataset
        return assemble_grid(ds.regions_2030, (), f0=ds.f0, k_sync=ds.k_sync)

    @cached_property
    def reduced(self):
        return reduce_grid(self.grid_2030, orders=3)

    @cached_property
    def primary_params(self) -> dict[str, PrimaryParams]:
        grid = self.grid_2030
        out = {}
        for i, name in enumerate(grid.region_names):
            out[name] = optimize_primary(
                grid.region_models[i], float(grid.lam[i, i]),
                self.dataset.primary_weights[name],
                bounds=self.dataset.primary_bounds, dp=DIST_PU)
        return out

    @cached_property
    def primary_costs(self) -> dict[str, float]:
        grid = self.grid_2030
        out = {}
        for i, name in enumerate(grid.region_names):
            cl = closed_loop_region(grid.region_models[i],
                                    self.primary_params[name],
                                    float(grid.lam[i, i]))
            out[name] = primary_cost(cl, self.dataset.primary_weights[name], dp=DIST_PU)
        return out

    def primary_list(self, grid) -> list[PrimaryParams]:
        return [self.primary_params[name] for name in grid.region_names]

    @cached_property
    def mpc_config(self) -> MpcConfig:
        return default_mpc_config(self.grid_2030)

    @cached_property
    def dphat0(self) -> np.ndarray:
        seed = self.dataset.dphat0_seed
        return np.array([seed.get(name, 0.0) for name in self.grid_2030.region_names])

    def _central_step(self, grid) -> tuple[Disturbance, ...]:
        return (Disturbance(t_s=0.0, region="central", magnitude_pu=DIST_PU),)

    def _scenario(self, name, grid, primary_on, mpc_on, t_end=20.0) -> Scenario:
        return Scenario(
            name=name,
            grid=grid,
            primary=self.primary_list(grid) if primary_on else None,
            reduced=self.reduced if mpc_on else None,
            mpc=self.mpc_config if mpc_on else None,
            disturbances=self._central_step(grid),
            t_end=t_end,
            primary_on=primary_on,
            mpc_on=mpc_on,
            dphat0=self.dphat0 if mpc_on else None,
            report_order=list(self.dataset.report_order),
        )

    @cached_property
    def run_baseline_2030(self):
        trace = run_closed_loop(self._scenario("baseline-2030", self.grid_2030, False, False))
        return trace, compute_metrics(trace)

    @cached_property
    def run_baseline_pre(self):
        trace = run_closed_loop(self._scenario("baseline-pre", self.grid_pre_res, False, False))
        return trace, compute_metrics(trace)

    @cached_property
    def run_primary_isolated(self):
        scenario = self._scenario("primary-isolated", self.grid_2030_isolated, True, False)
        scenario.disturbances = tuple(
            Disturbance(t_s=0.0, region=name, magnitude_pu=DIST_PU)
            for name in self.grid_2030_isolated.region_names
        )
        trace = run_closed_loop(scenario)
        return trace, compute_metrics(trace)

    @cached_property
    def run_baseline_isolated(self):
        scenario = self._scenario("baseline-isolated", self.grid_2030_isolated, False, False)
        scenario.disturbances = tuple(
            Disturbance(t_s=0.0, region=name, magnitude_pu=DIST_PU)
            for name in self.grid_2030_isolated.region_names
        )
        trace = run_closed_loop(scenario)
        return trace, compute_metrics(trace)

    @cached_property
    def run_full(self):
        trace = run_closed_loop(self._scenario("full-loop", self.grid_2030, True, True))
        return trace, compute_metrics(trace)

    @cached_property
    def run_no_primary(self):
        trace = run_closed_loop(self._scenario("no-primary", self.grid_2030, False, True))
        return trace, compute_metrics(trace)


_STUDY: KsaStudy | None = None


def get_study() -> KsaStudy:
    global _STUDY
    if _STUDY is None:
        _STUDY = KsaStudy()
    return _STUDY


# ---------------------------------------------------------------------------
# independent oracles


def _expm_series(m: np.ndarray) -> np.ndarray:
    """Taylor-series matrix exponential with plain 2^s scaling; independent of
    the Pade implementation under test."""
    n = m.shape[0]
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(m, 1), 1e-300)))) + 1)
    x = m / (2.0 ** s)
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ x / k
        out = out + term
        if np.linalg.norm(term, 1) < 1e-20 * max(np.linalg.norm(out, 1), 1.0):
            break
    for _ in range(s):
        out = out @ out
    return out


def zoh_oracle(a: np.ndarray, b: np.ndarray, dt: float):
    """Augmented-exponential ZOH via the series expm."""
    n, m = a.shape[0], b.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a * dt
    aug[:n, n:] = b * dt
    e = _expm_series(aug)
    return e[:n, :n], e[:n, n:]


def solve_qp_enumeration(prob: QpProblem, tol: float = 1e-9):
    """Brute-force KKT oracle for small strictly convex QPs.

    Enumerates candidate active sets up to size n, solves each equality-
    constrained KKT system, and keeps the best primal-dual feasible point.
    """
    n = prob.n
    m = 0 if prob.g is None else prob.g.shape[0]
    best_x, best_obj = None, np.inf
    for size in range(0, min(n, m) + 1):
        for active in combinations(range(m), size):
            rows = np.array(active, dtype=int)
            k = size
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = prob.p
            rhs = np.concatenate([-prob.q, prob.h[rows]]) if k else -prob.q
            if k:
                kkt[:n, n:] = prob.g[rows].T
                kkt[n:, :n] = prob.g[rows]
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            x, lam = sol[:n], sol[n:]
            if np.linalg.norm(kkt @ sol - rhs) > 1e-7 * (1 + np.linalg.norm(rhs)):
                continue
            if k and np.min(lam) < -1e-7:
                continue
            if m and np.max(prob.g @ x - prob.h) > 1e-7:
                continue
            obj = prob.objective(x)
            if obj < best_obj - 1e-12:
                best_x, best_obj = x, obj
    return best_x, best_obj


def _random_search_cost(study: KsaStudy, name: str, n_points: int = 1000) -> float:
    """Best primary cost over seeded uniform samples of the design box."""
    grid = study.grid_2030
    i = grid.region_index[name]
    model = grid.region_models[i]
    lam = float(grid.lam[i, i])
    weights = study.dataset.primary_weights[name]
    bounds = study.dataset.primary_bounds
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    lo = np.array([bounds.kbar_min, bounds.h_min, bounds.d_min, 0.0])
    hi = np.array([bounds.kbar_max, bounds.h_max, bounds.d_max, 1.0])
    best = np.inf
    for _ in range(n_points):
        v = lo + (hi - lo) * rng.uniform(size=4)
        p = PrimaryParams(kbar_d=v[0], h_c=v[1], d_c=v[2], gamma=v[3])
        best = min(best, primary_cost(closed_loop_region(model, p, lam),
                                      weights, dp=DIST_PU))
    return best


# ---------------------------------------------------------------------------
# the checks


def check_inertia(study: KsaStudy):
    expected = {"eastern": 3.69, "central": 0.82, "western": 1.54, "southern": 1.23}
    grid = study.grid_2030
    parts, ok = [], True
    for name, want in expected.items():
        got = float(grid.h_eq[grid.region_index[name]])
        good = abs(got - want) <= 0.005
        ok &= good
        parts.append(f"{name} {got:.4f} (want {want}{'' if good else ' MISMATCH'})")
    return ok, "; ".join(parts)


def check_dimensions(study: KsaStudy):
    grid = study.grid_2030
    labels = grid.state_labels
    tie_names = [f"tie.{ln.name}" for ln in grid.lines]
    order_ok = (labels[0] == "central.freq" and labels[38:42] == tie_names
                and tie_names == ["tie.central-eastern", "tie.central-southern",
                                  "tie.central-western", "tie.southern-western"])
    minimal = sum(balance(m).order for m in grid.region_models) + grid.n_lines
    reduced = study.reduced.order
    ok = grid.n_states == 42 and order_ok and minimal == 28 and reduced == 16
    return ok, (f"full {grid.n_states} (want 42), ordering "
                f"{'ok' if order_ok else 'BAD'}, minimal {minimal} (want 28), "
                f"truncated {reduced} (want 16)")


def check_hsv_energy(study: KsaStudy):
    parts, ok = [], True
    for name in study.grid_2030.region_names:
        hsv = study.reduced.hsv[name]
        rho = hsv_ratio(hsv, 3)
        good = rho >= 0.999
        ok &= good
        note = ""
        if not good:
            # the sigma^2 (energy) variant, for the diagnostic only
            rho_sq = float(np.sum(hsv[:3] ** 2) / np.sum(hsv**2))
            note = f" LOW (sigma^2 ratio {rho_sq:.6f})"
        parts.append(f"{name} rho(3)={rho:.6f}{note}")
    return ok, "; ".join(parts)


def check_hinf_bound(study: KsaStudy):
    omegas = np.logspace(-3, 3, 200)
    ok, worst = True, -np.inf
    for i, region in enumerate(study.grid_2030.regions):
        model = study.grid_2030.region_models[i]
        bal = balance(model)
        red, bound = truncate(bal, 3)
        h_full = frequency_response(model.a, model.b, model.c, omegas)
        h_red = frequency_response(red.a, red.b, red.c, omegas)
        err = max(np.linalg.norm(h_full[k] - h_red[k], 2) for k in range(len(omegas)))
        ok &= err <= bound + 1e-8
        worst = max(worst, err - bound)
    grid, reduced = study.grid_2030, study.reduced
    h_full = frequency_response(grid.a, grid.b, grid.c, omegas)
    h_red = frequency_response(reduced.a, reduced.b, reduced.c, omegas)
    err = max(np.linalg.norm(h_full[k] - h_red[k], 2) for k in range(len(omegas)))
    asm_ok = err <= reduced.error_bound + 1e-8
    ok &= asm_ok
    asm_note = "within bound" if asm_ok else (
        f"EXCEEDS x{err / reduced.error_bound:.2f}: the truncation guarantee is "
        f"per region; the tie-line integrator loop amplifies the summed regional "
        f"error at low frequency")
    return ok, (f"worst regional (error - bound) {worst:.3e} (per-region bound holds: "
                f"{worst <= 1e-8}); assembled error {err:.3e} vs summed bound "
                f"{reduced.error_bound:.3e} ({asm_note})")


def check_zoh_oracle(study: KsaStudy):
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 4))
        a = rng.normal(size=(n, n))
        if trial % 5 == 4:
            a[:, 0] = 0.0  # exercise singular A
        b = rng.normal(size=(n, m))
        dt = float(rng.uniform(0.05, 0.5))
        ad, bd = zoh_discretize(a, b, dt)
        ad_o, bd_o = zoh_oracle(a, b, dt)
        worst = max(worst, np.abs(ad - ad_o).max(), np.abs(bd - bd_o).max())
        if abs(np.linalg.det(a)) > 1e-6:
            bd_cf = np.linalg.solve(a, (_expm_series(a * dt) - np.eye(n)) @ b)
            worst = max(worst, np.abs(bd - bd_cf).max())
    return worst <= 1e-9, f"max deviation from series/closed-form oracles {worst:.3e}"


def check_baseline_failure(study: KsaStudy):
    _, m2030 = study.run_baseline_2030
    _, mpre = study.run_baseline_pre
    crossed = m2030.regions["central"].ufls_crossed
    pre_ok = not mpre.regions["central"].ufls_crossed
    return crossed and pre_ok, (
        f"2030 central nadir {m2030.regions['central'].nadir_hz:.4f} Hz "
        f"(crossed={crossed}), pre-RES central nadir "
        f"{mpre.regions['central'].nadir_hz:.4f} Hz (crossed={not pre_ok})")


def check_primary_only(study: KsaStudy):
    bounds = study.dataset.primary_bounds
    parts, ok = [], True
    for name, p in study.primary_params.items():
        in_box = (bounds.kbar_min - 1e-12 <= p.kbar_d <= bounds.kbar_max + 1e-12
                  and bounds.h_min - 1e-12 <= p.h_c <= bounds.h_max + 1e-12
                  and bounds.d_min - 1e-12 <= p.d_c <= bounds.d_max + 1e-12
                  and 0.0 <= p.gamma <= 1.0)
        oracle = _random_search_cost(study, name)
        beats = study.primary_costs[name] <= oracle + 1e-12
        ok &= in_box and beats
        parts.append(f"{name} cost {study.primary_costs[name]:.4g} vs random "
                     f"{oracle:.4g}{'' if beats else ' LOST'}{'' if in_box else ' OUT-OF-BOX'}")
    _, mp = study.run_primary_isolated
    _, mb = study.run_baseline_isolated
    for name, rm in mp.regions.items():
        above = rm.nadir_hz > UFLS_HZ
        reduced_ss = abs(rm.steady_state_df_hz) < abs(mb.regions[name].steady_state_df_hz)
        ok &= above and reduced_ss
        parts.append(f"{name} nadir {rm.nadir_hz:.4f}{'' if above else ' UFLS'}"
                     f"{'' if reduced_ss else ' SS-NOT-REDUCED'}")
    return ok, "; ".join(parts)


def _observer_run(study: KsaStudy):
    """Observer against its own reduced plant under the central step.

    The disturbance estimate starts from the study's documented seed; the
    plant starts at rest, so the state estimate starts exact.
    """
    reduced = study.reduced
    grid = study.grid_2030
    filt = design_filter(reduced, qw=10.0, rv=1.0)
    n = grid.n_regions
    dp = np.zeros(n)
    dp[grid.region_index["central"]] = DIST_PU
    dt, t_end = 0.01, 20.0
    t, xs = integrate_lti(reduced.a, reduced.b, dp, np.zeros(reduced.order), dt, t_end)
    c = reduced.c
    state = ObserverState(xhat=np.zeros(reduced.order), dphat=study.dphat0.copy())
    dphat_hist = np.zeros((len(t), n))
    err = np.zeros(len(t))
    u = np.zeros(n)
    for k in range(len(t)):
        dphat_hist[k] = state.dphat
        err[k] = np.linalg.norm(np.concatenate([state.xhat - xs[k], state.dphat - dp]))
        if k < len(t) - 1:
            state = step_filter(filt, state, u, c @ xs[k], dt)
    return filt, t, dphat_hist, err


def check_observer(study: KsaStudy):
    filt, t, dphat_hist, err = _observer_run(study)
    alpha = spectral_abscissa(filt.a_closed)
    hurwitz = alpha < 0
    grid = study.grid_2030
    ci = grid.region_index["central"]
    after5 = t >= 5.0
    conv = bool(np.all(np.abs(dphat_hist[after5, ci] - DIST_PU) <= 0.01 * abs(DIST_PU)))
    after1 = np.flatnonzero(t >= 1.0)
    mono = bool(np.all(np.diff(err[after1]) <= 1e-12))
    ok = hurwitz and conv and mono
    return ok, (f"closed-loop abscissa {alpha:.4f} (Hurwitz={hurwitz}), "
                f"dphat_central at 5 s {dphat_hist[t >= 5.0][0, ci]:.6f} "
                f"(within 1%={conv}), error monotone after 1 s={mono}")


def check_full_loop(study: KsaStudy):
    trace, metrics = study.run_full
    no_ufls = not metrics.any_ufls
    settled = metrics.settled_all_s is not None and metrics.settled_all_s <= 15.0
    solves = trace.solve_log
    all_opt = all(e["status"] == "optimal" for e in solves)
    hard_ok = all(e["hard_violation"] <= 1e-7 for e in solves if e["status"] == "optimal")
    ok = no_ufls and settled and all_opt and hard_ok and len(solves) > 0
    worst_nadir = min(m.nadir_hz for m in metrics.regions.values())
    max_hard = max((e["hard_violation"] for e in solves), default=np.nan)
    return ok, (f"worst nadir {worst_nadir:.4f} Hz (no UFLS={no_ufls}), settled "
                f"{metrics.settled_all_s if metrics.settled_all_s is not None else 'never'} s "
                f"(<=15={settled}), {len(solves)} solves all optimal={all_opt}, "
                f"max hard violation {max_hard:.2e}")


def check_no_primary(study: KsaStudy):
    trace, metrics = study.run_no_primary
    grid = study.grid_2030
    ci = grid.region_index["central"]
    before_cmd = trace.t <= study.mpc_config.first_command_delay_s
    crossed_early = bool(trace.df_hz[before_cmd, ci].min() <= UFLS_HZ)
    settled = metrics.settled_all_s is not None
    return crossed_early and settled, (
        f"central min before first command {trace.df_hz[before_cmd, ci].min():.4f} Hz "
        f"(crossed={crossed_early}), settled "
        f"{metrics.settled_all_s if settled else 'never'} s")


def _random_qp(rng: np.random.Generator) -> QpProblem:
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    mfac = rng.normal(size=(n, n))
    p = mfac.T @ mfac + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    g = rng.normal(size=(m, n))
    x_feas = 0.5 * rng.normal(size=n)
    h = g @ x_feas + rng.uniform(0.1, 1.0, size=m)
    return QpProblem(p, q, g, h)


def _toy_mpc_qp(study: KsaStudy):
    cfg = MpcConfig(n_regions=1, horizon=3, apply_steps=1, dt=0.2, n_rocof=1,
                    df_lo=-0.01, df_hi=0.01, rocof_max=5.0, du_max=0.05,
                    ptl_lo=-0.15, ptl_hi=0.15, p_ibr_star=0.8,
                    u_lo=np.array([-0.5]), u_hi=np.array([0.5]))
    template = CondensedTemplate(cfg, np.array([[-0.5]]), np.array([[0.6]]),
                                 np.array([[1.0]]), np.zeros((0, 1)),
                                 np.array([[0.6]]), [PrimaryParams(5.0, 0.5, 0.3, 0.4)])
    return template.instantiate(x0=[0.002], dphat=[-0.01], u0=[0.001],
                                z0=np.zeros(2))


def check_qp_correctness(study: KsaStudy):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        prob = _random_qp(rng)
        res = solve_qp(prob)
        if res.status != "optimal":
            return False, f"random instance returned status {res.status}"
        x_o, obj_o = solve_qp_enumeration(prob)
        worst = max(worst, float(np.abs(res.x - x_o).max()),
                    abs(res.objective - obj_o))
    cq = _toy_mpc_qp(study)
    sol = solve_horizon(cq)
    x_o, obj_o = solve_qp_enumeration(cq.problem)
    if sol.status != "optimal":
        return False, f"toy horizon returned status {sol.status}"
    du_o = x_o[: cq.template.nd].reshape(-1, 1)
    toy_err = float(np.abs(sol.du - du_o).max())
    worst = max(worst, toy_err)
    return worst <= 1e-6, (f"max deviation from enumeration oracle {worst:.3e} "
                           f"(50 random + toy horizon)")


def check_determinism(study: KsaStudy):
    def one_run() -> str:
        scenario = study._scenario("determinism", study.grid_2030, True, True, t_end=6.0)
        return run_closed_loop(scenario).to_csv()

    a, b = one_run(), one_run()
    return a == b, (f"{len(a)} CSV bytes, re-run identical={a == b}")


@dataclass(frozen=True)
class Check:
    id: str
    suite: str
    title: str
    fn: object


CHECKS = [
    Check("c01", "reduction", "equivalent inertia per region", check_inertia),
    Check("c02", "reduction", "model dimensions 42/28/16 and state ordering", check_dimensions),
    Check("c03", "reduction", "Hankel energy rho(3) >= 0.999 per region", check_hsv_energy),
    Check("c04", "reduction", "frequency-response error within twice neglected HSV sum", check_hinf_bound),
    Check("c05", "numerics", "ZOH discretization matches independent oracles", check_zoh_oracle),
    Check("c06", "e2e", "2030 baseline crosses UFLS, pre-RES does not", check_baseline_failure),
    Check("c07", "e2e", "optimized primary keeps isolated regions above UFLS", check_primary_only),
    Check("c08", "observer", "disturbance estimate converges, estimator stable", check_observer),
    Check("c09", "mpc", "full closed loop regulates within band and constraints", check_full_loop),
    Check("c10", "e2e", "no-primary ablation crosses UFLS then recovers", check_no_primary),
    Check("c11", "numerics", "QP solver matches active-set enumeration", check_qp_correctness),
    Check("c12", "e2e", "byte-identical trace CSV on re-run", check_determinism),
]


def run_checks(suite: str = "all", study: KsaStudy | None = None) -> list[dict]:
    study = study if study is not None else get_study()
    selected = CHECKS if suite == "all" else [c for c in CHECKS if c.suite == suite]
    results = []
    for chk in selected:
        try:
            ok, detail = chk.fn(study)
        except Exception as exc:  # surface as a failed check, not a crash
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append({"id": chk.id, "suite": chk.suite, "title": chk.title,
                        "ok": bool(ok), "detail": detail})
    return results
