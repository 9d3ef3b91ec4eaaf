"""Post-processing: corner-variance estimates, coupling-work phase integrals,
entropy, squeezing parameters and phase-diagram assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .protocol import CycleSchedule


@dataclass(frozen=True)
class VarianceQuadruple:
    """Ensemble <q^2> at the stroke corners A, B, C, D of a steady-state cycle."""

    q2_A: float
    q2_B: float
    q2_C: float
    q2_D: float

    def __post_init__(self):
        if min(self.q2_A, self.q2_B, self.q2_C, self.q2_D) <= 0:
            raise ValueError("corner variances must be positive")

    @property
    def engine_ordered(self) -> bool:
        """Heating along A->B and cooling along C->D."""
        return self.q2_B > self.q2_A and self.q2_C > self.q2_D


def ratio_R(v: VarianceQuadruple) -> float:
    num = v.q2_A + v.q2_D
    den = v.q2_C + v.q2_B
    if den <= 0 or num <= 0:
        raise ValueError("variance sums must be positive")
    return num / den


def minimal_tau_I(gamma: float, delta_omega: float, R: float) -> float:
    """Smallest ramp time compatible with net work extraction, (2 gamma/dw)(1+R)/(1-R)."""
    if delta_omega <= 0:
        raise ValueError("delta_omega must be > 0")
    if R < 0:
        raise ValueError("R must be >= 0")
    if gamma == 0:
        return 0.0
    if R >= 1:
        return math.inf
    return (2.0 * gamma / delta_omega) * (1.0 + R) / (1.0 - R)


def estimate_works(v: VarianceQuadruple, schedule: CycleSchedule, gamma: float) -> tuple[float, float]:
    """Small-compression estimates of (W_d, W_I) for linear ramps."""
    dw = schedule.delta_omega
    w_d = 0.5 * schedule.omega0 * dw * (v.q2_A + v.q2_D - v.q2_C - v.q2_B)
    total = v.q2_A + v.q2_B + v.q2_C + v.q2_D
    w_i = gamma * total / schedule.tau_I if schedule.tau_I > 0 else math.inf
    return w_d, w_i


def _omega_integrand(x, omega_a: float, gamma: float, tau_I: float, tau_R: float):
    on = (x / tau_I) * np.cos(2.0 * omega_a * x) * np.exp(-gamma * x)
    shift = tau_I + tau_R + x
    off = (1.0 - x / tau_I) * np.cos(2.0 * omega_a * shift) * np.exp(-gamma * shift)
    return on - off


def omega_integral(alpha: str, schedule: CycleSchedule, gamma: float, points_per_period: int = 400) -> float:
    """Phase integral of the qp-correlation part of the coupling work for one isochore.

    Composite Simpson on a fixed grid resolving the fastest oscillation with
    ``points_per_period`` nodes.
    """
    if alpha not in ("hot", "cold"):
        raise ValueError("alpha must be 'hot' or 'cold'")
    tau_I, tau_R = schedule.tau_I, schedule.tau_R
    if tau_I <= 0:
        return 0.0
    w = schedule.omega_hot if alpha == "hot" else schedule.omega_cold
    period = math.pi / max(w, 1e-12)
    n = max(2, int(math.ceil(tau_I / period * points_per_period)))
    n += n % 2
    x = np.linspace(0.0, tau_I, n + 1)
    f = _omega_integrand(x, w, gamma, tau_I, tau_R)
    h = tau_I / n
    return float(h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum()))


def estimate_WI_qp(qp_A: float, qp_C: float, schedule: CycleSchedule, gamma: float) -> float:
    """(gamma / 2 tau_I)(<qp+pq>_A Omega_h + <qp+pq>_C Omega_c)."""
    if qp_A == 0 and qp_C == 0:
        return 0.0
    om_h = omega_integral("hot", schedule, gamma)
    om_c = omega_integral("cold", schedule, gamma)
    return gamma / (2.0 * schedule.tau_I) * (qp_A * om_h + qp_C * om_c)


class Entropy(NamedTuple):
    value: float
    physical: bool


def entropy_gaussian(var_q: float, var_p: float, cov_qp: float, tol: float = 1e-6) -> Entropy:
    """Von Neumann entropy from the symplectic eigenvalue of the covariance matrix."""
    det = var_q * var_p - cov_qp**2
    nu = math.sqrt(max(det, 0.0))
    if nu < 0.5 - tol:
        return Entropy(0.0, False)
    nu = max(nu, 0.5)
    a, b = nu + 0.5, nu - 0.5
    s = a * math.log(a) - (b * math.log(b) if b > 0 else 0.0)
    return Entropy(s, True)


def thermal_entropy(omega: float, beta: float) -> float:
    nu = 0.5 / math.tanh(0.5 * beta * omega)
    return entropy_gaussian(nu / omega, nu * omega, 0.0).value


def ensemble_covariance(mean_q, mean_p, q2, p2, qp) -> tuple[float, float, float]:
    """Covariance (var_q, var_p, cov_qp) of the averaged state from per-trajectory raw moments."""
    mq, mp = float(np.mean(mean_q)), float(np.mean(mean_p))
    return float(np.mean(q2)) - mq * mq, float(np.mean(p2)) - mp * mp, float(np.mean(qp)) - mq * mp


def von_neumann_entropy(state) -> Entropy:
    """Entropy of a Gaussian covariance (2x2 array) or a grid density (``DensityGrid``)."""
    from .grid import DensityGrid, entropy_grid

    if isinstance(state, DensityGrid):
        avg = state.mean()
        return Entropy(entropy_grid(avg.grid, avg.values), True)
    v = np.asarray(state, dtype=float)
    if v.shape != (2, 2):
        raise ValueError("expected a 2x2 covariance matrix or a DensityGrid")
    return entropy_gaussian(v[0, 0], v[1, 1], v[0, 1])


class Squeezing(NamedTuple):
    r: float
    phi: float
    degenerate: bool


def squeezing_parameters(var_q: float, var_p: float, cov_qp: float, rtol: float = 1e-9) -> Squeezing:
    """Squeezing amplitude and major-axis angle (mod pi) of a covariance ellipse."""
    v = np.array([[var_q, cov_qp], [cov_qp, var_p]], dtype=float)
    lam = np.linalg.eigvalsh(v)
    if lam[0] <= 0:
        raise ValueError("covariance is not positive definite")
    r = 0.25 * math.log(lam[1] / lam[0])
    if lam[1] - lam[0] <= rtol * lam[1]:
        return Squeezing(0.0, 0.0, True)
    phi = 0.5 * math.atan2(2.0 * cov_qp, var_q - var_p)
    return Squeezing(r, phi % math.pi, False)


def squeezing_series(var_q, var_p, cov_qp) -> tuple[np.ndarray, np.ndarray]:
    """Squeezing amplitude and continuously unwrapped angle along a time series."""
    out = [squeezing_parameters(a, b, c) for a, b, c in zip(var_q, var_p, cov_qp)]
    r = np.array([s.r for s in out])
    two_phi = np.unwrap(np.array([2.0 * s.phi for s in out]))
    return r, 0.5 * two_phi


def eta_carnot(beta_h: float, beta_c: float) -> float:
    return 1.0 - beta_h / beta_c


def eta_curzon_ahlborn(beta_h: float, beta_c: float) -> float:
    return 1.0 - math.sqrt(beta_h / beta_c)


def ideal_otto_efficiency(delta_omega: float, omega0: float = 1.0) -> float:
    return 1.0 - (omega0 - 0.5 * delta_omega) / (omega0 + 0.5 * delta_omega)


@dataclass
class PhaseDiagram:
    gammas: np.ndarray
    tau_Is: np.ndarray
    labels: np.ndarray
    eta: np.ndarray
    work: np.ndarray
    R: np.ndarray
    boundary: np.ndarray
    boundary_status: list
    threshold: np.ndarray


def _zero_crossing(x0, x1, y0, y1) -> float:
    return x0 + (x1 - x0) * y0 / (y0 - y1)


def assemble_phase_diagram(gammas: Sequence[float], tau_Is: Sequence[float], reports, delta_omega: float,
                           corners=None) -> PhaseDiagram:
    """Label a (gamma, tau_I) grid of engine reports and extract the engine boundary.

    ``reports[i][j]`` belongs to ``gammas[i]`` and ``tau_Is[j]`` and may be
    ``None`` for failed points; ``corners[i][j]`` are the matching
    :class:`VarianceQuadruple` values used for the threshold estimate. The
    boundary is the interpolated sign change of the net work in tau_I at the
    lowest ramp time that turns the cycle into an engine.
    """
    g = np.asarray(gammas, dtype=float)
    t = np.asarray(tau_Is, dtype=float)
    shape = (g.size, t.size)
    labels = np.full(shape, "not-converged", dtype=object)
    eta = np.zeros(shape)
    work = np.full(shape, np.nan)
    R = np.full(shape, np.nan)
    for i in range(g.size):
        for j in range(t.size):
            rep = reports[i][j]
            if rep is None:
                labels[i, j] = "error"
                continue
            labels[i, j] = rep.phase.value
            if not rep.converged:
                continue
            work[i, j] = rep.W.mean
            eta[i, j] = rep.eta
            if corners is not None and corners[i][j] is not None:
                R[i, j] = ratio_R(corners[i][j])
    boundary = np.full(g.size, np.nan)
    threshold = np.full(g.size, np.nan)
    status = []
    for i in range(g.size):
        w = work[i]
        if np.all(np.isnan(w)):
            status.append("no-data")
            continue
        engine = w < 0
        if not engine.any():
            status.append("above-range")
            continue
        j = int(np.argmax(engine))
        if j == 0:
            status.append("below-range")
            continue
        if np.isnan(w[j - 1]):
            status.append("gap")
            continue
        boundary[i] = _zero_crossing(t[j - 1], t[j], w[j - 1], w[j])
        status.append("ok")
        if not (np.isnan(R[i, j - 1]) or np.isnan(R[i, j])):
            u = (boundary[i] - t[j - 1]) / (t[j] - t[j - 1])
            r_b = (1 - u) * R[i, j - 1] + u * R[i, j]
            threshold[i] = minimal_tau_I(g[i], delta_omega, r_b)
    return PhaseDiagram(g, t, labels, eta, work, R, boundary, status, threshold)
