"""Per-cycle work and heat ledgers, first law, efficiency and steady-state detection.

Heats are counted as energy released by the reservoir, so that
W_d + W_I + Q_c + Q_h = 0 over every periodic steady-state cycle.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .protocol import Controls
from .reservoir import ReservoirSpec

COMPONENTS = ("W_d", "W_I_cl", "W_I_qm", "Q_c", "Q_h")
# diagnostic split of W_I_qm: its qp-coherence part (the rest is the noise-position part)
DIAGNOSTICS = ("W_I_qp",)
N_COLUMNS = len(COMPONENTS) + len(DIAGNOSTICS)


class Estimate(NamedTuple):
    mean: float
    se: float


def _estimate(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(samples.mean()), se)


def ledger_integrands(c: Controls, mom, xi_c, xi_h, reservoirs: tuple[ReservoirSpec, ReservoirSpec]) -> np.ndarray:
    """Instantaneous rates of (W_d, W_I_cl, W_I_qm, Q_c, Q_h, W_I_qp) per trajectory.

    ``mom`` is (<q>, <p>, <q^2>, <p^2>, <qp+pq>/2) of each trajectory.
    """
    q, p, q2, p2, qp = (np.asarray(m, dtype=float) for m in mom)
    out = np.zeros(np.broadcast(q, p, q2, p2, qp, xi_c, xi_h).shape + (N_COLUMNS,))
    out[..., 0] = c.omega * c.domega * q2
    for lam, dlam, xi, res, slot in ((c.lam_c, c.dlam_c, xi_c, reservoirs[0], 3), (c.lam_h, c.dlam_h, xi_h, reservoirs[1], 4)):
        if lam == 0 and dlam == 0:
            continue
        g = res.gamma
        out[..., 1] += g * dlam * dlam * q2
        out[..., 2] += -dlam * xi * q + g * lam * dlam * qp
        out[..., 5] += g * lam * dlam * qp
        out[..., slot] += (
            lam * xi * p - g * lam * lam * p2 + g * lam * lam / res.beta
            - 2.0 * g * lam * dlam * qp + dlam * xi * q - g * dlam * dlam * q2
        )
    return out


class LedgerAccumulator:
    """Trapezoidal per-trajectory integration of the ledger rates over one cycle."""

    def __init__(self, reservoirs: tuple[ReservoirSpec, ReservoirSpec], n_traj: int | None = None):
        self.reservoirs = reservoirs
        self.totals = np.zeros((N_COLUMNS,) if n_traj is None else (n_traj, N_COLUMNS))

    def add(self, dt: float, c_start: Controls, c_end: Controls, mom_start, mom_end, xi_c, xi_h) -> None:
        # the noise is piecewise constant, so both trapezoid nodes use the step's value
        f0 = ledger_integrands(c_start, mom_start, xi_c, xi_h, self.reservoirs)
        f1 = ledger_integrands(c_end, mom_end, xi_c, xi_h, self.reservoirs)
        self.totals = self.totals + 0.5 * dt * (f0 + f1)


def accumulate(acc: LedgerAccumulator, dt: float, controls: tuple[Controls, Controls, Controls],
               moments: tuple, xi_c, xi_h) -> LedgerAccumulator:
    """Add one step; ``moments`` holds the moment tuples at the start and end of the step."""
    acc.add(dt, controls[0], controls[-1], moments[0], moments[1], xi_c, xi_h)
    return acc


@dataclass
class CycleLedger:
    """Per-trajectory cycle integrals with ensemble statistics.

    ``samples`` has shape (n_traj, 5) or (n_traj, 6); columns follow
    ``COMPONENTS`` and then ``DIAGNOSTICS``.
    """

    cycle_index: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[-1] not in (len(COMPONENTS), N_COLUMNS):
            raise ValueError("ledger samples need one column per component")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def component(self, name: str) -> Estimate:
        return _estimate(self.samples[:, (COMPONENTS + DIAGNOSTICS).index(name)])

    W_d = property(lambda self: self.component("W_d"))
    W_I_cl = property(lambda self: self.component("W_I_cl"))
    W_I_qm = property(lambda self: self.component("W_I_qm"))
    Q_c = property(lambda self: self.component("Q_c"))
    Q_h = property(lambda self: self.component("Q_h"))
    W_I_qp = property(lambda self: self.component("W_I_qp"))

    @property
    def W_I(self) -> Estimate:
        return _estimate(self.samples[:, 1] + self.samples[:, 2])

    @property
    def W(self) -> Estimate:
        return _estimate(self.samples[:, :3].sum(axis=1))


def first_law_residual(ledger: CycleLedger) -> Estimate:
    """W_d + W_I + Q_c + Q_h with its standard error (paired per trajectory)."""
    return _estimate(ledger.samples[:, :5].sum(axis=1))


class Phase(enum.Enum):
    HEAT_ENGINE = "heat-engine"
    REFRIGERATOR = "refrigerator"
    DISSIPATOR = "dissipator"
    NOT_CONVERGED = "not-converged"


def classify(W: float, Q_h: float, Q_c: float) -> Phase:
    if W < 0 and Q_h > 0:
        return Phase.HEAT_ENGINE
    if W > 0 and Q_c > 0:
        return Phase.REFRIGERATOR
    return Phase.DISSIPATOR


@dataclass
class EngineReport:
    phase: Phase
    eta: float
    eta_se: float
    power: float
    power_se: float
    eta_ref: float
    W: Estimate
    W_d: Estimate
    W_I_cl: Estimate
    W_I_qm: Estimate
    Q_c: Estimate
    Q_h: Estimate
    W_I_qp: Estimate
    period: float
    converged: bool = True
    ledgers: list = field(default_factory=list, repr=False)

    @property
    def W_I(self) -> Estimate:
        s = np.mean([lg.samples[:, 1] + lg.samples[:, 2] for lg in self.ledgers], axis=0)
        return _estimate(s)


def _ratio(num: np.ndarray, den: np.ndarray) -> Estimate:
    # delta-method standard error of mean(num) / mean(den)
    a, b = num.mean(), den.mean()
    n = num.shape[0]
    if b == 0:
        return Estimate(float("nan"), float("nan"))
    r = a / b
    if n < 2:
        return Estimate(float(r), float("nan"))
    resid = (num - r * den) / b
    return Estimate(float(r), float(resid.std(ddof=1) / math.sqrt(n)))


def paired_ratio_difference(num_a: np.ndarray, den_a: np.ndarray, num_b: np.ndarray, den_b: np.ndarray) -> Estimate:
    """mean(num_a)/mean(den_a) - mean(num_b)/mean(den_b) for paired samples.

    Samples with equal index share their noise, so the difference is much
    sharper than the two ratios separately.
    """
    num_a, den_a, num_b, den_b = (np.asarray(x, dtype=float) for x in (num_a, den_a, num_b, den_b))
    n = num_a.shape[0]
    if not (den_a.shape[0] == num_b.shape[0] == den_b.shape[0] == n):
        raise ValueError("paired samples must have equal length")
    ra, rb = num_a.mean() / den_a.mean(), num_b.mean() / den_b.mean()
    resid = (num_a - ra * den_a) / den_a.mean() - (num_b - rb * den_b) / den_b.mean()
    se = float(resid.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(ra - rb), se)


def engine_figures(ledgers: Sequence[CycleLedger], period: float, converged: bool = True) -> EngineReport:
    """Efficiency, power and phase from the PSS cycles (per-trajectory cycle averages)."""
    if not ledgers:
        raise ValueError("no cycles to evaluate")
    s = np.mean([lg.samples for lg in ledgers], axis=0)
    work = s[:, :3].sum(axis=1)
    est = [_estimate(s[:, i]) for i in range(s.shape[1])]
    qp_part = est[5] if len(est) > 5 else Estimate(float("nan"), float("nan"))
    W = _estimate(work)
    phase = classify(W.mean, est[4].mean, est[3].mean)
    eta = eta_se = 0.0
    eta_ref = 0.0
    if phase is Phase.HEAT_ENGINE:
        eta, eta_se = _ratio(-work, s[:, 4])
    elif phase is Phase.REFRIGERATOR:
        eta_ref = _ratio(s[:, 3], work).mean
    if not converged:
        phase = Phase.NOT_CONVERGED
    return EngineReport(
        phase=phase, eta=eta, eta_se=eta_se, power=-W.mean / period, power_se=W.se / period,
        eta_ref=eta_ref, W=W, W_d=est[0], W_I_cl=est[1], W_I_qm=est[2], Q_c=est[3], Q_h=est[4],
        W_I_qp=qp_part, period=period, converged=converged, ledgers=list(ledgers),
    )


def detect_pss(history: np.ndarray, tol: float = 1e-2, min_cycles: int = 2, allowance: np.ndarray | None = None):
    """First cycle k (1-based) whose moment trace matches cycle k+1 to relative ``tol``.

    ``history`` has shape (n_cycles, n_samples, n_moments): ensemble moments at the
    same cycle phases. The change is measured against the largest magnitude of
    each moment over the cycle. ``allowance`` (same shape) is a per-cycle error
    scale, e.g. a multiple of the ensemble standard error; the two cycles' values
    are combined in quadrature and subtracted from the change. Returns ``None``
    when no such cycle exists within the history.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim != 3:
        raise ValueError("history must be (cycles, samples, moments)")
    if h.shape[0] < max(2, min_cycles):
        return None
    for k in range(max(1, min_cycles - 1), h.shape[0]):
        diff = np.abs(h[k] - h[k - 1])
        if allowance is not None:
            a = np.asarray(allowance, dtype=float)
            diff = np.maximum(diff - np.hypot(a[k], a[k - 1]), 0.0)
        scale = np.maximum(np.abs(h[k - 1]).max(axis=0), 1e-300)
        if np.max(diff / scale) < tol:
            return k
    return None
