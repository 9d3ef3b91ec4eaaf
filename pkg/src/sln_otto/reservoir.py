"""Thermal reservoirs and synthesis of the colored quantum noise that drives them.

All quantities are in natural units (hbar = m = omega0 = 1).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

LABELS = ("cold", "hot")
_LABEL_CODE = {"cold": 0, "hot": 1}


@dataclass(frozen=True)
class ReservoirSpec:
    """One ohmic bath with a Drude-squared cutoff.

    Parameters
    ----------
    beta : float
        Dimensionless inverse temperature.
    gamma : float
        Coupling (damping) rate.
    omega_cut : float
        High-frequency cutoff of the spectral density.
    label : {"cold", "hot"}
    """

    beta: float
    gamma: float
    omega_cut: float = 30.0
    label: str = "cold"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.omega_cut > 0:
            raise ValueError(f"omega_cut must be > 0, got {self.omega_cut}")
        if self.label not in _LABEL_CODE:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def counterterm(self) -> float:
        """Potential renormalization (2/pi) * int J(w)/w dw = gamma * omega_cut / 2."""
        return 0.5 * self.gamma * self.omega_cut

    def validate_scales(self, max_frequency: float, dt: float | None = None) -> None:
        """Check that the cutoff dominates the other frequency scales of a run."""
        scale = max(max_frequency, 1.0 / self.beta)
        if self.omega_cut <= scale:
            raise ValueError(
                f"{self.label} reservoir: omega_cut={self.omega_cut} must exceed "
                f"the largest system/thermal frequency {scale:.4g}"
            )
        if dt is not None and dt > math.pi / self.omega_cut:
            raise ValueError(
                f"time step {dt} does not resolve omega_cut={self.omega_cut} "
                f"(need dt <= pi/omega_cut = {math.pi / self.omega_cut:.4g})"
            )


def _check_omega(omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("frequency must be non-negative")
    return omega


def spectral_density(spec: ReservoirSpec, omega):
    """J(w) = gamma w / (1 + w^2/w_cut^2)^2."""
    omega = _check_omega(omega)
    return spec.gamma * omega / (1.0 + (omega / spec.omega_cut) ** 2) ** 2


def _coth_minus_inverse(x):
    # coth(x) - 1/x, series below 1e-3 to avoid cancellation
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-3
    xs = x[small]
    out[small] = xs / 3.0 - xs**3 / 45.0
    xl = x[~small]
    out[~small] = 1.0 / np.tanh(xl) - 1.0 / xl
    return out


def noise_psd(spec: ReservoirSpec, omega):
    """Power spectrum of the stochastic force: J(w) [coth(w beta/2) - 2/(w beta)].

    The classical (white) part of the reservoir correlation is subtracted with
    the same cutoff filter, which keeps the spectrum non-negative everywhere.
    Its normalization is C(tau) = (1/pi) int_0^inf S(w) cos(w tau) dw.
    """
    omega = _check_omega(omega)
    scalar = omega.ndim == 0
    omega = np.atleast_1d(omega)
    out = spectral_density(spec, omega) * _coth_minus_inverse(0.5 * spec.beta * omega)
    return float(out[0]) if scalar else out


def noise_correlation(spec: ReservoirSpec, lag: float) -> float:
    """Autocorrelation C(lag) by adaptive quadrature of the spectrum."""
    if spec.gamma == 0:
        return 0.0
    f = lambda w: noise_psd(spec, w)
    wmax = 200.0 * spec.omega_cut
    if lag == 0:
        val = integrate.quad(f, 0.0, wmax, limit=400, points=[spec.omega_cut])[0]
        tail = spec.gamma * spec.omega_cut**4 / (2.0 * wmax**2)
        return (val + tail) / math.pi
    val = integrate.quad(f, 0.0, wmax, weight="cos", wvar=abs(lag), limit=2000)[0]
    return val / math.pi


def noise_seed(run_seed: int, trajectory: int, label: str) -> np.random.SeedSequence:
    """Independent, reproducible stream per (run, trajectory, reservoir)."""
    return np.random.SeedSequence(entropy=int(run_seed), spawn_key=(int(trajectory), _LABEL_CODE[label]))


class NoiseSynthesizer:
    """Circulant (FFT) sampler of stationary Gaussian noise with spectrum ``noise_psd``.

    The spectrum is folded about the Nyquist frequency. With ``average=False``
    the series holds point values xi(k dt) and has the continuous-time
    autocorrelation exactly at grid lags, up to periodization over the
    circulant period. With ``average=True`` it holds the means of xi over
    ``[k dt, (k+1) dt)``: the spectrum is weighted by sinc^2(w dt/2), which
    removes aliased high-frequency power near zero frequency. Propagators that
    hold the noise constant over a step need the averaged form.
    """

    def __init__(self, spec: ReservoirSpec, n_steps: int, dt: float, pad: int = 2, folds: int = 40,
                 average: bool = False):
        if n_steps < 1 or dt <= 0:
            raise ValueError("need n_steps >= 1 and dt > 0")
        if dt > math.pi / spec.omega_cut:
            raise ValueError(
                f"dt={dt} does not resolve omega_cut={spec.omega_cut}; need dt <= {math.pi / spec.omega_cut:.4g}"
            )
        self.spec = spec
        self.n_steps = int(n_steps)
        self.dt = float(dt)
        self.period = 1 << max(1, int(math.ceil(math.log2(pad * self.n_steps))))
        self.average = bool(average)
        self.amplitude = _folded_amplitude(spec, self.period, self.dt, folds, self.average)

    def sample(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        nb = self.amplitude.size
        a = rng.standard_normal(nb)
        b = rng.standard_normal(nb)
        c = self.amplitude * (a - 1j * b)
        c[0] *= 2.0
        c[-1] *= 2.0
        x = np.fft.irfft(c, n=self.period) * (self.period / 2)
        return x[: self.n_steps]


@lru_cache(maxsize=16)
def _folded_amplitude(spec: ReservoirSpec, period: int, dt: float, folds: int, average: bool = False) -> np.ndarray:
    nb = period // 2 + 1
    dw = 2.0 * math.pi / (period * dt)
    w = dw * np.arange(nb)
    wrap = 2.0 * math.pi / dt
    s = np.zeros(nb)
    for j in range(-folds, folds + 1):
        wj = np.abs(w + j * wrap)
        term = noise_psd(spec, wj)
        if average:
            term = term * np.sinc(wj * dt / (2.0 * math.pi)) ** 2
        s += term
    weight = np.full(nb, dw / math.pi)
    weight[0] *= 0.5
    weight[-1] *= 0.5
    power = s * weight
    assert np.all(power >= 0), "negative spectral weight"
    return np.sqrt(power)


def sample_noise(spec: ReservoirSpec, horizon: float, dt: float, seed, average: bool = False) -> np.ndarray:
    """One realization of the reservoir noise on ``t_k = k dt`` covering ``[0, horizon]``."""
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    n = int(math.ceil(horizon / dt - 1e-9)) + 1
    return NoiseSynthesizer(spec, n, dt, average=average).sample(seed)


@dataclass(frozen=True)
class NoisePath:
    """Realization of both reservoir noises, piecewise constant on ``[k dt, (k+1) dt)``."""

    dt: float
    values_c: np.ndarray = field(repr=False)
    values_h: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        if self.values_c.shape != self.values_h.shape:
            raise ValueError("cold and hot series must have equal length")
        for v in (self.values_c, self.values_h):
            v.setflags(write=False)

    @property
    def horizon(self) -> float:
        return self.dt * len(self.values_c)

    def at(self, t: float) -> tuple[float, float]:
        k = int(math.floor(t / self.dt + 1e-9))
        return float(self.values_c[k]), float(self.values_h[k])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# noise path seed={self.seed} dt={self.dt!r}\n")
            w = csv.writer(fh)
            w.writerow(["t", "xi_c", "xi_h"])
            for k, (c, h) in enumerate(zip(self.values_c, self.values_h)):
                w.writerow([f"{k * self.dt:.10g}", f"{c:.12e}", f"{h:.12e}"])


def make_noise_path(cold: ReservoirSpec, hot: ReservoirSpec, horizon: float, dt: float,
                    run_seed: int, trajectory: int = 0, average: bool = False) -> NoisePath:
    n = int(math.ceil(horizon / dt - 1e-9)) + 1
    xc = NoiseSynthesizer(cold, n, dt, average=average).sample(noise_seed(run_seed, trajectory, "cold"))
    xh = NoiseSynthesizer(hot, n, dt, average=average).sample(noise_seed(run_seed, trajectory, "hot"))
    return NoisePath(dt=dt, values_c=xc, values_h=xh, seed=int(run_seed))


def autocorrelation_estimate(paths: Sequence[np.ndarray] | np.ndarray, lag: int) -> tuple[float, float]:
    """Mean and standard error of C(lag) across independent paths.

    ``lag`` is in samples; each path contributes its time average of
    x[t] x[t+|lag|], so the estimate is symmetric in the sign of the lag.
    """
    x = np.asarray(paths, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two paths")
    lag = abs(int(lag))
    if lag >= x.shape[1]:
        raise ValueError(f"lag {lag} beyond horizon of {x.shape[1]} samples")
    per_path = np.mean(x[:, : x.shape[1] - lag] * x[:, lag:], axis=1)
    return float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(len(per_path)))


def sample_paths(spec: ReservoirSpec, n_paths: int, n_steps: int, dt: float, run_seed: int,
                 first_trajectory: int = 0, average: bool = False) -> np.ndarray:
    """Stack of independent paths for trajectories ``first_trajectory ...``."""
    synth = NoiseSynthesizer(spec, n_steps, dt, average=average)
    out = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        out[i] = synth.sample(noise_seed(run_seed, first_trajectory + i, spec.label))
    return out


def periodogram(paths: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Averaged one-sided periodogram in the ``noise_psd`` normalization.

    Returns angular frequencies, mean estimate, and standard error per bin.
    """
    x = np.asarray(paths, dtype=float)
    n = x.shape[1]
    f = np.fft.rfft(x, axis=1)
    est = np.abs(f) ** 2 * dt / n
    w = 2.0 * math.pi * np.fft.rfftfreq(n, dt)
    return w, est.mean(axis=0), est.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
