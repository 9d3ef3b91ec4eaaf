"""Moment propagation for a harmonic medium.

For a quadratic potential every stochastic sample of the density stays
Gaussian. Noise enters only as a force, so it drives the first moments; the
central second moments obey a deterministic linear ODE that is identical in
every trajectory. The fields of :class:`GaussianState` may therefore be
arrays over trajectories (means) broadcast against scalars (covariances).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .protocol import Controls
from .reservoir import ReservoirSpec


@dataclass
class GaussianState:
    mean_q: np.ndarray | float
    mean_p: np.ndarray | float
    var_q: np.ndarray | float
    var_p: np.ndarray | float
    cov_qp: np.ndarray | float
    t: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.var_q) <= 0) or np.any(np.asarray(self.var_p) <= 0):
            raise ValueError("variances must be positive")

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.var_q, self.cov_qp], [self.cov_qp, self.var_p]], dtype=float)


def thermal_state(omega: float, beta: float, n_traj: int | None = None, t: float = 0.0) -> GaussianState:
    """Canonical state of a harmonic oscillator of frequency ``omega``."""
    c = 1.0 / math.tanh(0.5 * beta * omega)
    zero = 0.0 if n_traj is None else np.zeros(n_traj)
    return GaussianState(zero, zero if n_traj is None else np.zeros(n_traj), 0.5 * c / omega, 0.5 * omega * c, 0.0, t)


def ground_state(omega: float, n_traj: int | None = None) -> GaussianState:
    zero = 0.0 if n_traj is None else np.zeros(n_traj)
    return GaussianState(zero, zero if n_traj is None else np.zeros(n_traj), 0.5 / omega, 0.5 * omega, 0.0)


def _coefficients(c: Controls, cold: ReservoirSpec, hot: ReservoirSpec):
    w2 = c.omega**2 + cold.gamma * c.lam_c * c.dlam_c + hot.gamma * c.lam_h * c.dlam_h
    fric = cold.gamma * c.lam_c**2 + hot.gamma * c.lam_h**2
    diff = 2.0 * (cold.gamma * c.lam_c**2 / cold.beta + hot.gamma * c.lam_h**2 / hot.beta)
    return w2, fric, diff


def _rhs(y, c: Controls, force, cold, hot):
    mq, mp, sqq, sqp, spp = y
    w2, fric, diff = _coefficients(c, cold, hot)
    return (
        mp,
        -w2 * mq - fric * mp + force(c),
        2.0 * sqp,
        spp - w2 * sqq - fric * sqp,
        -2.0 * w2 * sqp - 2.0 * fric * spp + diff,
    )


def step_gaussian(state: GaussianState, controls: tuple[Controls, Controls, Controls],
                  xi_c, xi_h, dt: float, reservoirs: tuple[ReservoirSpec, ReservoirSpec],
                  kappa: float = 0.0) -> GaussianState:
    """One classical RK4 step of the moment equations.

    ``controls`` holds the controls at the start, midpoint and end of the step;
    the noise values are held constant over the step.
    """
    if kappa != 0:
        raise ValueError("moment propagation requires a harmonic medium (kappa = 0)")
    cold, hot = reservoirs
    force = lambda c: c.lam_c * xi_c + c.lam_h * xi_h
    c0, cm, c1 = controls
    y = (state.mean_q, state.mean_p, state.var_q, state.cov_qp, state.var_p)
    k1 = _rhs(y, c0, force, cold, hot)
    k2 = _rhs(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)), cm, force, cold, hot)
    k3 = _rhs(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)), cm, force, cold, hot)
    k4 = _rhs(tuple(a + dt * b for a, b in zip(y, k3)), c1, force, cold, hot)
    mq, mp, sqq, sqp, spp = (
        a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )
    ok = np.all(np.isfinite(mq)) and np.all(np.isfinite(mp)) and np.all(np.isfinite((sqq, spp, sqp)))
    if not (ok and np.all(np.asarray(sqq) > 0) and np.all(np.asarray(spp) > 0)):
        raise FloatingPointError("moment propagation diverged; reduce dt")
    return GaussianState(mq, mp, sqq, spp, sqp, state.t + dt)


def moments(state: GaussianState):
    """Raw moments (<q>, <p>, <q^2>, <p^2>, <qp+pq>/2) of each trajectory."""
    mq, mp = state.mean_q, state.mean_p
    return (mq, mp, state.var_q + mq * mq, state.var_p + mp * mp, state.cov_qp + mq * mp)


def propagate(state: GaussianState, schedule, xi_c, xi_h, dt: float, reservoirs, n_steps: int,
              record=None) -> GaussianState:
    """Advance ``n_steps`` steps; ``xi_c``/``xi_h`` index as ``[..., k]``.

    ``record(k, state)`` is called after every step when given.
    """
    xi_c = np.asarray(xi_c)
    xi_h = np.asarray(xi_h)
    t0 = state.t
    for k in range(n_steps):
        ctrl = schedule.step_controls(t0 + k * dt, dt)
        state = step_gaussian(state, ctrl, xi_c[..., k], xi_h[..., k], dt, reservoirs, schedule.kappa)
        state = replace(state, t=t0 + (k + 1) * dt)
        if record is not None:
            record(k, state)
    return state
