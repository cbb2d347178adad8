"""Augmented Kalman-Bucy filter estimating reduced states and disturbances.

The reduced plant is augmented with constant-disturbance states,
    d/dt [xhat; dPhat] = Abar [xhat; dPhat] - [Bhat; 0] Lambda u - M (Cbar [xhat; dPhat] - y),
with Abar = [[Ahat, Bhat], [0, 0]], Cbar = [Chat, 0]. The gain
M = Sigma Cbar' Rv^-1 comes from the stabilizing filter Riccati solution. The
filter runs continuously (integrated exactly over each simulation step with u
and y held) and is sampled at the slower control period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import is_hurwitz, solve_filter_are, zoh_discretize
from .reduction import ReducedGridModel

__all__ = ["AugmentedFilter", "ObserverState", "design_filter", "step_filter", "sample_for_mpc"]


@dataclass
class AugmentedFilter:
    abar: np.ndarray
    cbar: np.ndarray
    gain: np.ndarray
    sigma: np.ndarray
    qw: np.ndarray
    rv: np.ndarray
    b_u: np.ndarray  # input map of the total IBR command: -[Bhat; 0] Lambda
    n_states: int    # reduced plant order r
    n_regions: int
    _disc_cache: dict = field(default_factory=dict, repr=False)

    @property
    def a_closed(self) -> np.ndarray:
        return self.abar - self.gain @ self.cbar

    def discrete(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        key = round(float(dt), 12)
        if key not in self._disc_cache:
            b_in = np.hstack([self.b_u, self.gain])
            self._disc_cache[key] = zoh_discretize(self.a_closed, b_in, dt)
        return self._disc_cache[key]


@dataclass
class ObserverState:
    xhat: np.ndarray
    dphat: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.xhat, self.dphat])


def _weight_matrix(w, n: int, name: str) -> np.ndarray:
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        if arr <= 0:
            raise ValueError(f"{name} scale must be positive")
        return float(arr) * np.eye(n)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ValueError(f"{name} diagonal must have length {n}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}")
    return arr


def design_filter(reduced: ReducedGridModel, qw=10.0, rv=1.0) -> AugmentedFilter:
    """Solve the filter Riccati equation for the augmented plant and package
    the continuous filter. Raises if the augmented pair admits no stabilizing
    gain (e.g. degenerate Qw on undetectable disturbance modes)."""
    r = reduced.order
    n_reg = reduced.n_regions
    n_aug = r + n_reg
    abar = np.zeros((n_aug, n_aug))
    abar[:r, :r] = reduced.a
    abar[:r, r:] = reduced.b
    cbar = np.hstack([reduced.c, np.zeros((reduced.c.shape[0], n_reg))])
    qw_m = _weight_matrix(qw, n_aug, "qw")
    rv_m = _weight_matrix(rv, cbar.shape[0], "rv")
    sigma = solve_filter_are(abar, cbar, qw_m, rv_m)
    gain = sigma @ cbar.T @ np.linalg.inv(rv_m)
    if not is_hurwitz(abar - gain @ cbar):
        raise ValueError("filter gain does not stabilize the augmented dynamics")
    b_u = np.zeros((n_aug, n_reg))
    b_u[:r] = reduced.b @ reduced.lam
    return AugmentedFilter(abar=abar, cbar=cbar, gain=gain, sigma=sigma,
                           qw=qw_m, rv=rv_m, b_u=b_u, n_states=r,
                           n_regions=n_reg)


def step_filter(filt: AugmentedFilter, state: ObserverState, u: np.ndarray,
                y: np.ndarray, dt: float) -> ObserverState:
    """Advance the filter ODE by dt with the applied total IBR input u and the
    measurement y held constant (exact ZOH integration)."""
    u = np.asarray(u, dtype=float).reshape(filt.n_regions)
    y = np.asarray(y, dtype=float).reshape(filt.cbar.shape[0])
    ad, bd = filt.discrete(dt)
    z = ad @ state.stacked() + bd @ np.concatenate([u, y])
    return ObserverState(xhat=z[: filt.n_states], dphat=z[filt.n_states:])


def sample_for_mpc(state: ObserverState) -> tuple[np.ndarray, np.ndarray]:
    """Snapshot (xhat_0, dPhat_o) handed to the controller at its period."""
    return state.xhat.copy(), state.dphat.copy()
