"""Dense numerical kernels used by every other module.

Self-contained on purpose: matrix exponential via Pade scaling-and-squaring,
exact zero-order-hold discretization through an augmented exponential,
Lyapunov equations by Kronecker vectorization, the filter Riccati equation by
Hamiltonian-eigenvector seeding plus Newton-Kleinman refinement, and a dense
convex QP solver (operator splitting with an exact active-set polish).

All routines are deterministic: no randomness, fixed iteration orders, and
results depend only on the inputs. Sizes stay in the tens-of-states range, so
dense O(n^3) (and for Lyapunov O(n^6)) algorithms are fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QpProblem",
    "QpResult",
    "expm",
    "zoh_discretize",
    "solve_lyapunov",
    "solve_filter_are",
    "solve_qp",
    "integrate_lti",
    "spectral_abscissa",
    "is_hurwitz",
]


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _as_square(a, name: str) -> np.ndarray:
    a = _as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def _as_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {v.shape[0]}")
    return v


def spectral_abscissa(a) -> float:
    """max Re(eig(A)); the continuous-time stability margin indicator."""
    a = _as_square(a, "a")
    if a.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(a).real))


def is_hurwitz(a, tol: float = 0.0) -> bool:
    return spectral_abscissa(a) < -tol


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------

# Degree-13 Pade coefficients and its 1-norm switch point (Higham 2005).
_PADE13_B = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_PADE13_THETA = 5.371920351148152


def expm(a, t: float = 1.0) -> np.ndarray:
    """exp(t*A) by scaling-and-squaring with a degree-13 Pade approximant."""
    a = _as_square(a, "a")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    m = a * float(t)
    norm = np.linalg.norm(m, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / _PADE13_THETA))) if norm > _PADE13_THETA else 0)
    m = m / (2.0 ** squarings)

    b = _PADE13_B
    ident = np.eye(n)
    m2 = m @ m
    m4 = m2 @ m2
    m6 = m2 @ m4
    u = m @ (m6 @ (b[13] * m6 + b[11] * m4 + b[9] * m2)
             + b[7] * m6 + b[5] * m4 + b[3] * m2 + b[1] * ident)
    v = (m6 @ (b[12] * m6 + b[10] * m4 + b[8] * m2)
         + b[6] * m6 + b[4] * m4 + b[2] * m2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def zoh_discretize(a, b, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of xdot = A x + B u at step dt.

    Uses the augmented-matrix exponential
        exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]],
    which is exact for any A (including singular) and reduces to (I, 0) at
    dt = 0.
    """
    a = _as_square(a, "a")
    b = _as_matrix(b, "b")
    n, m = a.shape[0], b.shape[1]
    if b.shape[0] != n:
        raise ValueError(f"b must have {n} rows, got {b.shape[0]}")
    if not (dt >= 0.0 and np.isfinite(dt)):
        raise ValueError(f"dt must be finite and >= 0, got {dt}")
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    phi = expm(aug, dt)
    return phi[:n, :n], phi[:n, n:]


# ---------------------------------------------------------------------------
# Lyapunov and Riccati equations
# ---------------------------------------------------------------------------

def solve_lyapunov(a, q) -> np.ndarray:
    """Solve A W + W A' + Q = 0 for symmetric W (A Hurwitz, Q symmetric PSD).

    Kronecker vectorization: (I (x) A + A (x) I) vec(W) = -vec(Q) with
    column-major vec. The n^2 x n^2 dense solve is fine at these sizes.
    """
    a = _as_square(a, "a")
    q = _as_square(q, "q")
    n = a.shape[0]
    if q.shape[0] != n:
        raise ValueError(f"q must match a, got {q.shape} vs {a.shape}")
    qscale = max(1.0, float(np.linalg.norm(q, np.inf)))
    if np.linalg.norm(q - q.T, np.inf) > 1e-8 * qscale:
        raise ValueError("q must be symmetric")
    if not is_hurwitz(a):
        raise ValueError("a must be Hurwitz for a unique PSD Lyapunov solution")
    ident = np.eye(n)
    k = np.kron(ident, a) + np.kron(a, ident)
    try:
        w = np.linalg.solve(k, -q.reshape(n * n, order="F"))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - precluded by Hurwitz check
        raise ValueError("singular Kronecker system") from exc
    w = w.reshape((n, n), order="F")
    w = 0.5 * (w + w.T)
    resid = a @ w + w @ a.T + q
    if np.linalg.norm(resid, "fro") > 1e-8 * max(1.0, np.linalg.norm(q, "fro")):
        raise ValueError("Lyapunov residual check failed")
    return w


def solve_filter_are(a, c, qw, rv, tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
    """Stabilizing solution of A S + S A' - S C' Rv^-1 C S + Qw = 0.

    Seeded from the stable invariant subspace of the Hamiltonian
    [[A', -C'Rv^-1 C], [-Qw, -A]] and refined by Newton-Kleinman iterations
    (each step one Lyapunov solve). Raises if no stabilizing solution exists,
    e.g. undetectable marginal modes with Qw = 0.
    """
    a = _as_square(a, "a")
    c = _as_matrix(c, "c")
    qw = _as_square(qw, "qw")
    rv = _as_square(rv, "rv")
    n = a.shape[0]
    p = c.shape[0]
    if c.shape[1] != n:
        raise ValueError(f"c must have {n} columns, got {c.shape[1]}")
    if qw.shape[0] != n or rv.shape[0] != p:
        raise ValueError("qw/rv dimensions inconsistent with a/c")
    if np.linalg.norm(qw - qw.T, np.inf) > 1e-8 * max(1.0, np.linalg.norm(qw, np.inf)):
        raise ValueError("qw must be symmetric")
    if np.min(np.linalg.eigvalsh(rv)) <= 0:
        raise ValueError("rv must be positive definite")

    s_mat = c.T @ np.linalg.solve(rv, c)
    ham = np.block([[a.T, -s_mat], [-qw, -a]])
    eigvals, eigvecs = np.linalg.eig(ham)
    axis_tol = 1e-9 * max(1.0, np.linalg.norm(ham, np.inf))
    stable = eigvals.real < -axis_tol
    if int(np.count_nonzero(stable)) != n:
        raise ValueError("no stabilizing solution: Hamiltonian has eigenvalues on or too near the imaginary axis")
    basis = eigvecs[:, stable]
    v1, v2 = basis[:n, :], basis[n:, :]
    try:
        sigma = np.real(v2 @ np.linalg.inv(v1))
    except np.linalg.LinAlgError as exc:
        raise ValueError("no stabilizing solution: singular invariant-subspace basis") from exc
    sigma = 0.5 * (sigma + sigma.T)

    scale = max(1.0, float(np.linalg.norm(qw, "fro")), float(np.linalg.norm(a, "fro")) ** 2)

    def residual(s):
        return a @ s + s @ a.T - s @ s_mat @ s + qw

    if not is_hurwitz(a - sigma @ s_mat):
        raise ValueError("no stabilizing solution: seed gain does not stabilize")
    for _ in range(max_iter):
        res = residual(sigma)
        if np.linalg.norm(res, "fro") <= tol * scale:
            break
        a_cl = a - sigma @ s_mat
        rhs = qw + sigma @ s_mat @ sigma
        rhs = 0.5 * (rhs + rhs.T)
        sigma = solve_lyapunov(a_cl, rhs)
    res_norm = float(np.linalg.norm(residual(sigma), "fro"))
    if res_norm > 1e-6 * scale:
        raise ValueError(f"Riccati iteration did not converge (residual {res_norm:.3e})")
    if not is_hurwitz(a - sigma @ s_mat):
        raise ValueError("no stabilizing solution: converged point is not stabilizing")
    return sigma


# ---------------------------------------------------------------------------
# Quadratic programming
# ---------------------------------------------------------------------------

@dataclass
class QpProblem:
    """min 0.5 x'Px + q'x  s.t.  G x <= h,  A_eq x = b_eq.

    P must be symmetric PSD (within 1e-9 relative); G/A_eq may be None.
    """

    p: np.ndarray
    q: np.ndarray
    g: np.ndarray | None = None
    h: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.p = _as_square(self.p, "p")
        n = self.p.shape[0]
        self.q = _as_vector(self.q, n, "q")
        pscale = max(1.0, float(np.linalg.norm(self.p, np.inf)))
        if np.linalg.norm(self.p - self.p.T, np.inf) > 1e-9 * pscale:
            raise ValueError("p must be symmetric within 1e-9")
        self.p = 0.5 * (self.p + self.p.T)
        if float(np.min(np.linalg.eigvalsh(self.p))) < -1e-9 * pscale:
            raise ValueError("p must be positive semidefinite within 1e-9")
        if (self.g is None) != (self.h is None):
            raise ValueError("g and h must be supplied together")
        if self.g is not None:
            self.g = _as_matrix(self.g, "g")
            if self.g.shape[1] != n:
                raise ValueError("g column count must match p")
            self.h = _as_vector(self.h, self.g.shape[0], "h")
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must be supplied together")
        if self.a_eq is not None:
            self.a_eq = _as_matrix(self.a_eq, "a_eq")
            if self.a_eq.shape[1] != n:
                raise ValueError("a_eq column count must match p")
            self.b_eq = _as_vector(self.b_eq, self.a_eq.shape[0], "b_eq")

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.p @ x + self.q @ x)


@dataclass
class QpResult:
    x: np.ndarray
    status: str  # optimal | infeasible | unbounded | max_iterations
    objective: float
    y_ineq: np.ndarray
    y_eq: np.ndarray
    iterations: int
    kkt: dict = field(default_factory=dict)


def kkt_residuals(prob: QpProblem, x: np.ndarray, y_ineq: np.ndarray,
                  y_eq: np.ndarray) -> dict:
    """KKT residuals; the acceptance contract for 'optimal'.

    Primal feasibility and the dual sign are absolute. Stationarity and
    complementarity are scaled by the magnitude of their constituent terms:
    with 1e6-scale penalty gradients in the cost, float64 cannot cancel the
    gradient to an absolute 1e-7, so the tolerance is per-digit there.
    """
    px = prob.p @ x
    grad = px + prob.q
    scale = max(1.0, float(np.abs(px).max(initial=0.0)),
                float(np.abs(prob.q).max(initial=0.0)))
    if prob.g is not None and prob.g.size:
        gty = prob.g.T @ y_ineq
        grad = grad + gty
        scale = max(scale, float(np.abs(gty).max(initial=0.0)))
    if prob.a_eq is not None and prob.a_eq.size:
        aty = prob.a_eq.T @ y_eq
        grad = grad + aty
        scale = max(scale, float(np.abs(aty).max(initial=0.0)))
    out = {"stationarity": float(np.linalg.norm(grad, np.inf)) / scale}
    if prob.g is not None and prob.g.size:
        slack = prob.g @ x - prob.h
        out["primal_ineq"] = float(np.max(slack, initial=0.0))
        out["dual_nonneg"] = float(max(0.0, -np.min(y_ineq, initial=0.0)))
        comp = np.abs(y_ineq * slack) / np.maximum(1.0, np.abs(y_ineq))
        out["complementarity"] = float(np.max(comp, initial=0.0))
    else:
        out["primal_ineq"] = out["dual_nonneg"] = out["complementarity"] = 0.0
    if prob.a_eq is not None and prob.a_eq.size:
        out["primal_eq"] = float(np.linalg.norm(prob.a_eq @ x - prob.b_eq, np.inf))
    else:
        out["primal_eq"] = 0.0
    out["max"] = max(out.values())
    return out


def _ruiz_equilibrate(p, q, a, lo, up, iters: int = 10):
    """Modified Ruiz scaling of the (P, q, A, [lo,up]) data plus cost scaling."""
    n = p.shape[0]
    m = a.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    cost = 1.0
    pb, qb, ab = p.copy(), q.copy(), a.copy()
    lb, ub = lo.copy(), up.copy()
    for _ in range(iters):
        col = np.maximum(
            np.max(np.abs(pb), axis=0, initial=0.0),
            np.max(np.abs(ab), axis=0, initial=0.0) if m else 0.0,
        )
        col[col == 0.0] = 1.0
        dx = 1.0 / np.sqrt(col)
        if m:
            row = np.max(np.abs(ab), axis=1, initial=0.0)
            row[row == 0.0] = 1.0
            de = 1.0 / np.sqrt(row)
        else:
            de = e[:0]
        pb = pb * dx[:, None] * dx[None, :]
        qb = qb * dx
        if m:
            ab = ab * de[:, None] * dx[None, :]
            with np.errstate(invalid="ignore"):
                lb = lb * de
                ub = ub * de
            e = e * de
        d = d * dx
        pcol = np.mean(np.max(np.abs(pb), axis=0, initial=0.0)) if n else 0.0
        g = max(pcol, float(np.max(np.abs(qb), initial=0.0)))
        g = 1.0 / g if g > 1e-12 else 1.0
        pb = pb * g
        qb = qb * g
        cost *= g
    return pb, qb, ab, lb, ub, d, e, cost


def _solve_equality_kkt(p, q, a, b):
    """Least-squares solve of the stationarity system for x and multipliers."""
    n = p.shape[0]
    ma = a.shape[0]
    kkt = np.zeros((n + ma, n + ma))
    kkt[:n, :n] = p
    if ma:
        kkt[:n, n:] = a.T
        kkt[n:, :n] = a
    rhs = np.concatenate([-q, b])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:n], sol[n:]


def _try_polish(prob: QpProblem, x, y, tol, max_passes: int = 200, active0=None):
    """Primal active-set refinement from an approximately optimal point.

    Classic working-set iteration on a proximally regularized copy of the
    cost: solve the equality KKT on the working set, step toward that point
    only as far as the first blocking row allows, add the blocker, and drop
    the most negative multiplier once the step is unblocked. Starting from
    the (feasible) iterate of the outer solver, every step preserves
    feasibility, so the walk only has to sort out which rows bind. The
    proximal pull toward the seed keeps each subproblem bounded (the cost is
    flat along pure penalty coordinates) and selects, among minimizers on a
    degenerate optimal face, the one nearest the seed. The caller certifies
    the result, so an unconverged refinement is harmless. `active0` overrides
    the working-set guess; the interior-point caller passes its own, which
    separates binding rows far more sharply than thresholds on the unscaled
    iterate can.
    """
    g, h = prob.g, prob.h
    m = 0 if g is None else g.shape[0]
    n = prob.n
    n_eq = 0 if prob.a_eq is None else prob.a_eq.shape[0]
    a_eq = prob.a_eq if n_eq else np.zeros((0, n))
    b_eq = prob.b_eq if n_eq else np.zeros(0)
    if m == 0:
        x_pol, nu = _solve_equality_kkt(prob.p, prob.q, a_eq, b_eq)
        return x_pol, np.zeros(0), nu[:n_eq]
    ytol = 1e-9 * max(1.0, float(np.max(np.abs(y), initial=0.0)))
    if active0 is not None:
        active = active0.copy()
    else:
        gap = g @ x - h
        active = (y > ytol) | (gap > -max(tol, 1e-9) * np.maximum(1.0, np.abs(h)))
    delta = 1e-6 * max(1.0, float(np.abs(prob.p).max(initial=0.0)))
    p_prox = prob.p + delta * np.eye(n)
    q_prox = prob.q - delta * x
    x_cur = x.copy()
    idx = np.flatnonzero(active)
    mult = np.zeros(idx.size)
    y_eq = np.zeros(n_eq)
    x_scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    for _ in range(max_passes):
        cand = np.flatnonzero(active)
        if cand.size > n:
            break
        idx = cand
        a_act = np.vstack([a_eq, g[idx]])
        b_act = np.concatenate([b_eq, h[idx]])
        x_eqp, nu = _solve_equality_kkt(p_prox, q_prox, a_act, b_act)
        y_eq = nu[:n_eq]
        mult = nu[n_eq:]
        d = x_eqp - x_cur
        if float(np.abs(d).max(initial=0.0)) > 1e-13 * x_scale:
            # longest feasible step toward the subproblem optimum
            gd = g @ d
            slk = np.maximum(h - g @ x_cur, 0.0)
            block = ~active & (gd > 1e-14 * np.abs(gd).max())
            if np.any(block):
                ratios = slk[block] / gd[block]
                j = int(np.argmin(ratios))
                alpha = float(ratios[j])
                if alpha < 1.0:
                    x_cur = x_cur + alpha * d
                    active[np.flatnonzero(block)[j]] = True
                    continue
            x_cur = x_eqp
        if mult.size and mult.min() < -tol * max(1.0, float(mult.max(initial=0.0))):
            active[idx[np.argmin(mult)]] = False
            continue
        break
    y_pol = np.zeros(m)
    if idx.size:
        y_pol[idx] = np.maximum(mult, 0.0)
    return x_cur, y_pol, y_eq


def _ipm_solve(prob: QpProblem, tol: float, max_iter: int = 60):
    """Mehrotra predictor-corrector interior-point attempt.

    Runs on the Ruiz-equilibrated problem and certifies candidates on the
    original one, seeding the active-set polish with the rows whose scaled
    dual dominates the scaled slack. Returns a certified-optimal QpResult or
    None; infeasible and unbounded problems are left to the caller's
    splitting loop, whose ray certificates classify them. A Newton method is
    the only reliable route to the duals here: penalty-formulation QPs need
    multipliers on the scale of the penalty weights, which first-order
    updates approach too slowly.
    """
    n = prob.n
    if prob.g is None or prob.g.shape[0] == 0:
        return None
    me = 0 if prob.a_eq is None else prob.a_eq.shape[0]
    m = prob.g.shape[0]
    if me:
        a_all = np.vstack([prob.a_eq, prob.g])
        lo = np.concatenate([prob.b_eq, np.full(m, -np.inf)])
        up = np.concatenate([prob.b_eq, prob.h])
    else:
        a_all = prob.g
        lo = np.full(m, -np.inf)
        up = prob.h
    pb, qb, ab, _, ub, dsc, esc, csc = _ruiz_equilibrate(prob.p, prob.q, a_all, lo, up)
    a_eq, b_eq = ab[:me], ub[:me]
    g, h = ab[me:], ub[me:]

    def finish_if_certified(x, s, y, nu, iters):
        xu = dsc * x
        yu = esc[me:] * y / csc
        nuu = esc[:me] * nu / csc
        kkt = kkt_residuals(prob, xu, yu, nuu)
        if kkt["max"] <= tol:
            return QpResult(x=xu, status="optimal", objective=prob.objective(xu),
                            y_ineq=yu, y_eq=nuu, iterations=iters, kkt=kkt)
        xp, yp, yeqp = _try_polish(prob, xu, yu, tol, active0=y > s)
        kkt_p = kkt_residuals(prob, xp, yp, yeqp)
        if kkt_p["max"] <= tol:
            return QpResult(x=xp, status="optimal", objective=prob.objective(xp),
                            y_ineq=yp, y_eq=yeqp, iterations=iters, kkt=kkt_p)
        return None

    x = np.zeros(n)
    s = np.maximum(h, 1.0)
    y = np.ones(m)
    nu = np.zeros(me)
    tau = 0.995
    for it in range(1, max_iter + 1):
        r_dual = pb @ x + qb + g.T @ y + a_eq.T @ nu
        r_pri = g @ x + s - h
        r_eq = a_eq @ x - b_eq
        mu = float(y @ s) / m
        if not np.isfinite(mu) or mu > 1e16:
            return None
        if mu < 1e-6:
            res = finish_if_certified(x, s, y, nu, it)
            if res is not None:
                return res
            if mu < 1e-14:  # complementarity exhausted; further steps are noise
                return None
        w = y / s
        hmat = pb + (g.T * w) @ g
        reg = 1e-12 * max(1.0, float(np.trace(hmat)) / n)
        kmat = np.zeros((n + me, n + me))
        kmat[n:, :n] = a_eq
        kmat[:n, n:] = a_eq.T
        for _ in range(6):
            kmat[:n, :n] = hmat + reg * np.eye(n)
            kmat[n:, n:] = -reg * np.eye(me)
            try:
                lu = np.linalg.inv(kmat) if me else np.linalg.cholesky(kmat[:n, :n])
                break
            except np.linalg.LinAlgError:
                reg *= 1e3
        else:
            return None

        def newton(r_comp):
            rhs_x = -r_dual - g.T @ ((r_comp + y * r_pri) / s)
            if me:
                sol = lu @ np.concatenate([rhs_x, -r_eq])
                dx, dnu = sol[:n], sol[n:]
            else:
                dx = np.linalg.solve(lu.T, np.linalg.solve(lu, rhs_x))
                dnu = np.zeros(0)
            ds = -r_pri - g @ dx
            dy = (r_comp - y * ds) / s
            return dx, dnu, ds, dy

        def step_len(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        dx_a, dnu_a, ds_a, dy_a = newton(-y * s)
        a_p = step_len(s, ds_a)
        a_d = step_len(y, dy_a)
        mu_aff = float((y + a_d * dy_a) @ (s + a_p * ds_a)) / m
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0
        dx, dnu, ds, dy = newton(sigma * mu - y * s - dy_a * ds_a)
        a_p = tau * step_len(s, ds)
        a_d = tau * step_len(y, dy)
        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        nu = nu + a_d * dnu
        if np.min(s) <= 0 or np.min(y) <= 0:
            return None
    return finish_if_certified(x, s, y, nu, max_iter)


def solve_qp(prob: QpProblem, tol: float = 1e-7, max_iter: int = 200_000) -> QpResult:
    """Deterministic dense convex QP solve.

    A Mehrotra predictor-corrector interior-point pass handles the well-posed
    case; when it cannot certify an optimum, the solve falls back to ADMM on
    the bounded form l <= Ax <= u with Ruiz equilibration, which additionally
    produces infeasibility/unboundedness certificates from its iterate rays.
    Either way 'optimal' is only returned once the KKT residuals of the
    original problem verify below `tol`.
    """
    n = prob.n
    m_in = 0 if prob.g is None else prob.g.shape[0]
    m_eq = 0 if prob.a_eq is None else prob.a_eq.shape[0]

    def finish(x, y_in, y_eq, status, iters):
        kkt = kkt_residuals(prob, x, y_in, y_eq)
        return QpResult(x=x, status=status, objective=prob.objective(x),
                        y_ineq=y_in, y_eq=y_eq, iterations=iters, kkt=kkt)

    # Unconstrained: direct least-squares stationarity solve.
    if m_in == 0 and m_eq == 0:
        x, *_ = np.linalg.lstsq(prob.p, -prob.q, rcond=None)
        grad = prob.p @ x + prob.q
        if np.linalg.norm(grad, np.inf) > tol * max(1.0, np.linalg.norm(prob.q, np.inf)):
            return finish(x, np.zeros(0), np.zeros(0), "unbounded", 0)
        return finish(x, np.zeros(0), np.zeros(0), "optimal", 0)

    if m_in:
        res = _ipm_solve(prob, tol)
        if res is not None:
            return res
    else:
        x, nu = _solve_equality_kkt(prob.p, prob.q, prob.a_eq, prob.b_eq)
        kkt = kkt_residuals(prob, x, np.zeros(0), nu)
        if kkt["max"] <= tol:
            return QpResult(x=x, status="optimal", objective=prob.objective(x),
                            y_ineq=np.zeros(0), y_eq=nu, iterations=0, kkt=kkt)

    blocks_a, blocks_l, blocks_u = [], [], []
    if m_eq:
        blocks_a.append(prob.a_eq)
        blocks_l.append(prob.b_eq)
        blocks_u.append(prob.b_eq)
    if m_in:
        blocks_a.append(prob.g)
        blocks_l.append(np.full(m_in, -np.inf))
        blocks_u.append(prob.h)
    a_all = np.vstack(blocks_a)
    lo = np.concatenate(blocks_l)
    up = np.concatenate(blocks_u)
    m = a_all.shape[0]

    pb, qb, ab, lb, ub, dsc, esc, csc = _ruiz_equilibrate(prob.p, prob.q, a_all, lo, up)

    sigma = 1e-6
    alpha = 1.6
    rho0 = 0.1
    rho = np.full(m, rho0)
    rho[:m_eq] = rho0 * 1e3

    def factor(rho_vec):
        kmat = pb + sigma * np.eye(n) + ab.T @ (rho_vec[:, None] * ab)
        return np.linalg.cholesky(kmat)

    chol = factor(rho)
    x = np.zeros(n)
    z = np.clip(ab @ x, lb, ub)
    y = np.zeros(m)

    def unscale(xs, ys):
        return dsc * xs, esc * ys / csc

    def split_duals(yu):
        y_eq = yu[:m_eq]
        y_in = np.maximum(yu[m_eq:], 0.0)
        return y_in, y_eq

    def certified(xs, ys, iters, status_if_ok, polish: bool):
        xu, yu = unscale(xs, ys)
        y_in, y_eq = split_duals(yu)
        kkt = kkt_residuals(prob, xu, y_in, y_eq)
        if kkt["max"] <= tol:
            return finish(xu, y_in, y_eq, status_if_ok, iters)
        if not polish:
            return None
        # once the active-set guess is right, the refining equality-KKT solve
        # lands a machine-accurate optimum long before the splitting iterates
        # themselves converge; it is costly, so only attempted periodically
        xp, yp, yeqp = _try_polish(prob, xu, y_in, tol)
        kkt_p = kkt_residuals(prob, xp, yp, yeqp)
        if kkt_p["max"] <= tol:
            return finish(xp, yp, yeqp, status_if_ok, iters)
        return None

    eps_cert = 1e-12
    x_prev = x.copy()
    y_prev = y.copy()
    check_every = 25
    polish_every = 500
    for it in range(1, max_iter + 1):
        rhs = sigma * x - qb + ab.T @ (rho * z - y)
        xt = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        zt = ab @ xt
        x_new = alpha * xt + (1.0 - alpha) * x
        z_arg = alpha * zt + (1.0 - alpha) * z + y / rho
        z_new = np.clip(z_arg, lb, ub)
        y_new = y + rho * (alpha * zt + (1.0 - alpha) * z - z_new)
        x, z, y = x_new, z_new, y_new

        if it % check_every == 0 or it == max_iter:
            do_polish = it % polish_every == 0 or it == max_iter
            res = certified(x, y, it, "optimal", do_polish)
            if res is not None:
                return res
            # certificates in scaled space, validated on unscaled data
            dy = y - y_prev
            dx = x - x_prev
            dyu = esc * dy / csc
            dxu = dsc * dx
            ndy = float(np.linalg.norm(dyu, np.inf))
            if ndy > eps_cert:
                atdy = np.linalg.norm(a_all.T @ dyu, np.inf)
                pos, neg = np.maximum(dyu, 0.0), np.minimum(dyu, 0.0)
                support = up @ pos + lo[:m_eq] @ neg[:m_eq] if m_eq else up @ pos
                if m_eq < m:
                    # rows with lo = -inf must have dy >= 0 for a valid certificate
                    neg_in = neg[m_eq:]
                    valid = np.all(neg_in > -1e-10 * ndy)
                else:
                    valid = True
                if valid and atdy <= 1e-8 * ndy and support <= -1e-8 * ndy:
                    xu, yu = unscale(x, y)
                    y_in, y_eq = split_duals(yu)
                    return finish(xu, y_in, y_eq, "infeasible", it)
            ndx = float(np.linalg.norm(dxu, np.inf))
            if ndx > eps_cert:
                pdx = np.linalg.norm(prob.p @ dxu, np.inf)
                qdx = float(prob.q @ dxu)
                adx = a_all @ dxu
                ok_rows = np.all(adx[:m_eq] <= 1e-8 * ndx) and np.all(adx[:m_eq] >= -1e-8 * ndx)
                ok_rows = ok_rows and np.all(adx[m_eq:] <= 1e-8 * ndx)
                if ok_rows and pdx <= 1e-8 * ndx and qdx <= -1e-8 * ndx:
                    xu, yu = unscale(x, y)
                    y_in, y_eq = split_duals(yu)
                    return finish(xu, y_in, y_eq, "unbounded", it)
            x_prev, y_prev = x.copy(), y.copy()

        if it % 100 == 0:
            # adaptive rho on scaled residuals
            rp = np.linalg.norm(ab @ x - z, np.inf)
            rd = np.linalg.norm(pb @ x + qb + ab.T @ y, np.inf)
            den_p = max(np.linalg.norm(ab @ x, np.inf), np.linalg.norm(z, np.inf), 1e-12)
            den_d = max(np.linalg.norm(pb @ x, np.inf), np.linalg.norm(qb, np.inf),
                        np.linalg.norm(ab.T @ y, np.inf), 1e-12)
            ratio = math.sqrt((rp / den_p) / max(rd / den_d, 1e-14))
            ratio = min(max(ratio, 1e-3), 1e3)
            if ratio > 5.0 or ratio < 0.2:
                rho = np.clip(rho * ratio, 1e-6, 1e6)
                chol = factor(rho)

    xu, yu = unscale(x, y)
    y_in, y_eq = split_duals(yu)
    return finish(xu, y_in, y_eq, "max_iterations", max_iter)


# ---------------------------------------------------------------------------
# LTI propagation
# ---------------------------------------------------------------------------

def integrate_lti(a, b, u, x0, dt: float, t_end: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate xdot = A x + B u(t) exactly for u piecewise constant on the dt grid.

    `u` may be a constant vector, an array of per-step values with shape
    (n_steps, m), or a callable evaluated at the left edge of each step.
    Returns (t, x) with t of length n_steps + 1.
    """
    a = _as_square(a, "a")
    b = _as_matrix(b, "b")
    n, m = a.shape[0], b.shape[1]
    x0 = _as_vector(x0, n, "x0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(round(t_end / dt))
    if steps < 0 or abs(steps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("t_end must be a whole number of dt steps")
    ad, bd = zoh_discretize(a, b, dt)
    if callable(u):
        useq = np.array([_as_vector(u(k * dt), m, "u(t)") for k in range(steps)])
    else:
        uarr = np.asarray(u, dtype=float)
        if uarr.ndim == 1:
            useq = np.broadcast_to(_as_vector(uarr, m, "u"), (steps, m))
        else:
            uarr = _as_matrix(uarr, "u")
            if uarr.shape != (steps, m):
                raise ValueError(f"u array must have shape ({steps}, {m}), got {uarr.shape}")
            useq = uarr
    xs = np.empty((steps + 1, n))
    xs[0] = x0
    x = x0.copy()
    for k in range(steps):
        x = ad @ x + bd @ useq[k]
        xs[k + 1] = x
    t = np.arange(steps + 1) * dt
    return t, xs
