"""Otto-cycle control protocol: frequency modulation and time-dependent bath couplings."""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class Stroke(enum.Enum):
    HOT_RAMP_UP = "HotRampUp"
    HOT_HOLD = "HotHold"
    HOT_RAMP_DOWN = "HotRampDown"
    EXPANSION = "Expansion"
    HOLD_AFTER_EXPANSION = "HoldAfterExpansion"
    COLD_RAMP_UP = "ColdRampUp"
    COLD_HOLD = "ColdHold"
    COLD_RAMP_DOWN = "ColdRampDown"
    COMPRESSION = "Compression"
    STATIC = "Static"


class Controls(NamedTuple):
    omega: float
    domega: float
    lam_c: float
    dlam_c: float
    lam_h: float
    dlam_h: float


class StrokeBoundaries(NamedTuple):
    t_A: float
    t_B: float
    t_C: float
    t_D: float
    T: float


class Segment(NamedTuple):
    stroke: Stroke
    start: float
    duration: float


def _ramp(x: float, shape: str) -> tuple[float, float]:
    """Ramp value and derivative w.r.t. x on [0, 1]."""
    x = min(max(x, 0.0), 1.0)
    if shape == "linear":
        return x, 1.0
    return x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x)


@dataclass(frozen=True)
class CycleSchedule:
    """Four-stroke Otto protocol with its origin at point A (start of hot coupling).

    ``hold_after_expansion`` inserts a unitary segment at the cold frequency
    between the expansion stroke and the cold isochore.
    """

    tau_I: float
    tau_d: float
    tau_R: float
    delta_omega: float = 1.0
    kappa: float = 0.0
    hold_after_expansion: float = 0.0
    ramp_shape: str = "linear"
    omega0: float = 1.0
    segments: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if min(self.tau_I, self.tau_d, self.tau_R, self.hold_after_expansion) < 0:
            raise ValueError("stroke durations must be non-negative")
        if self.tau_d <= 0:
            raise ValueError("tau_d must be > 0")
        if not self.delta_omega > 0:
            raise ValueError("delta_omega must be > 0")
        if self.delta_omega >= 2 * self.omega0:
            raise ValueError("delta_omega must be below 2*omega0 (positive cold frequency)")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.ramp_shape not in ("linear", "smoothstep"):
            raise ValueError(f"unknown ramp_shape {self.ramp_shape!r}")
        plan = [
            (Stroke.HOT_RAMP_UP, self.tau_I),
            (Stroke.HOT_HOLD, self.tau_R),
            (Stroke.HOT_RAMP_DOWN, self.tau_I),
            (Stroke.EXPANSION, self.tau_d),
            (Stroke.HOLD_AFTER_EXPANSION, self.hold_after_expansion),
            (Stroke.COLD_RAMP_UP, self.tau_I),
            (Stroke.COLD_HOLD, self.tau_R),
            (Stroke.COLD_RAMP_DOWN, self.tau_I),
            (Stroke.COMPRESSION, self.tau_d),
        ]
        segs, t = [], 0.0
        for stroke, dur in plan:
            if dur > 0:
                segs.append(Segment(stroke, t, dur))
                t += dur
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def from_period(cls, tau_I: float, tau_d: float, period: float, **kw) -> "CycleSchedule":
        """Derive the relaxation time from T = 4 tau_I + 2 tau_d + 2 tau_R (+ hold)."""
        hold = kw.get("hold_after_expansion", 0.0)
        tau_R = 0.5 * (period - 4 * tau_I - 2 * tau_d - hold)
        if tau_R < -1e-12:
            raise ValueError("period too short for the given tau_I and tau_d")
        return cls(tau_I, tau_d, max(tau_R, 0.0), **kw)

    @property
    def omega_hot(self) -> float:
        return self.omega0 + 0.5 * self.delta_omega

    @property
    def omega_cold(self) -> float:
        return self.omega0 - 0.5 * self.delta_omega

    @property
    def max_frequency(self) -> float:
        return self.omega_hot

    @property
    def period(self) -> float:
        last = self.segments[-1]
        return last.start + last.duration

    def boundaries(self) -> StrokeBoundaries:
        t_B = 2 * self.tau_I + self.tau_R
        t_C = t_B + self.tau_d + self.hold_after_expansion
        t_D = t_C + 2 * self.tau_I + self.tau_R
        return StrokeBoundaries(0.0, t_B, t_C, t_D, t_D + self.tau_d)

    def segment_index(self, t: float) -> int:
        tl = t % self.period
        starts = [s.start for s in self.segments]
        return max(bisect.bisect_right(starts, tl) - 1, 0)

    def _evaluate(self, seg: Segment, u: float) -> Controls:
        wh, wc = self.omega_hot, self.omega_cold
        x = u / seg.duration
        st = seg.stroke
        if st is Stroke.EXPANSION:
            return Controls(wh - (wh - wc) * min(max(x, 0.0), 1.0), -(wh - wc) / seg.duration, 0.0, 0.0, 0.0, 0.0)
        if st is Stroke.COMPRESSION:
            return Controls(wc + (wh - wc) * min(max(x, 0.0), 1.0), (wh - wc) / seg.duration, 0.0, 0.0, 0.0, 0.0)
        if st is Stroke.HOLD_AFTER_EXPANSION:
            return Controls(wc, 0.0, 0.0, 0.0, 0.0, 0.0)
        hot = st in (Stroke.HOT_RAMP_UP, Stroke.HOT_HOLD, Stroke.HOT_RAMP_DOWN)
        w = wh if hot else wc
        if st in (Stroke.HOT_HOLD, Stroke.COLD_HOLD):
            lam, dlam = 1.0, 0.0
        else:
            s, ds = _ramp(x, self.ramp_shape)
            if st in (Stroke.HOT_RAMP_UP, Stroke.COLD_RAMP_UP):
                lam, dlam = s, ds / seg.duration
            else:
                lam, dlam = 1.0 - s, -ds / seg.duration
        if hot:
            return Controls(w, 0.0, 0.0, 0.0, lam, dlam)
        return Controls(w, 0.0, lam, dlam, 0.0, 0.0)

    def controls_at(self, t: float) -> Controls:
        tl = t % self.period
        seg = self.segments[self.segment_index(tl)]
        return self._evaluate(seg, tl - seg.start)

    def step_controls(self, t: float, dt: float) -> tuple[Controls, Controls, Controls]:
        """Controls at the start, middle and end of [t, t+dt], all evaluated inside
        the segment containing the midpoint (one-sided limits at stroke corners)."""
        T = self.period
        base = math.floor((t + 0.5 * dt) / T) * T
        seg = self.segments[self.segment_index(t + 0.5 * dt - base)]
        u0 = t - base - seg.start
        return (self._evaluate(seg, u0), self._evaluate(seg, u0 + 0.5 * dt), self._evaluate(seg, u0 + dt))

    def potential_at(self, q, t: float):
        w = self.controls_at(t).omega
        q = np.asarray(q, dtype=float)
        return 0.5 * w * w * q * q + 0.25 * self.kappa * q**4

    def steps_per_cycle(self, dt: float) -> int:
        """Number of steps per cycle; every stroke corner must sit on the grid."""
        for seg in self.segments:
            n = seg.duration / dt
            if abs(n - round(n)) > 1e-6:
                raise ValueError(
                    f"stroke {seg.stroke.value} of duration {seg.duration} is not a multiple of dt={dt}"
                )
        return int(round(self.period / dt))

    def corner_steps(self, dt: float) -> dict[str, int]:
        b = self.boundaries()
        return {k: int(round(getattr(b, "t_" + k) / dt)) for k in "ABCD"}


@dataclass(frozen=True)
class StaticSchedule:
    """Fixed frequency and fixed couplings, used for relaxation runs.

    ``window`` plays the role of the cycle period for ledger bookkeeping.
    """

    omega: float = 1.0
    lam_c: float = 1.0
    lam_h: float = 0.0
    kappa: float = 0.0
    window: float = 10.0

    def __post_init__(self):
        if self.lam_c * self.lam_h != 0:
            raise ValueError("a static schedule couples to at most one reservoir")
        if self.window <= 0 or self.omega <= 0:
            raise ValueError("window and omega must be > 0")

    @property
    def period(self) -> float:
        return self.window

    @property
    def max_frequency(self) -> float:
        return self.omega

    @property
    def omega_hot(self) -> float:
        return self.omega

    def controls_at(self, t: float) -> Controls:
        return Controls(self.omega, 0.0, self.lam_c, 0.0, self.lam_h, 0.0)

    def step_controls(self, t: float, dt: float):
        c = self.controls_at(t)
        return (c, c, c)

    def potential_at(self, q, t: float):
        q = np.asarray(q, dtype=float)
        return 0.5 * self.omega**2 * q * q + 0.25 * self.kappa * q**4

    def steps_per_cycle(self, dt: float) -> int:
        n = self.window / dt
        if abs(n - round(n)) > 1e-6:
            raise ValueError(f"window {self.window} is not a multiple of dt={dt}")
        return int(round(n))

    def corner_steps(self, dt: float) -> dict[str, int]:
        return {}


def controls_at(schedule, t: float) -> Controls:
    return schedule.controls_at(t)


def stroke_boundaries(schedule: CycleSchedule) -> StrokeBoundaries:
    return schedule.boundaries()


def potential_at(schedule, q, t: float):
    return schedule.potential_at(q, t)


def snap_to_grid(duration: float, dt: float) -> float:
    """Nearest non-zero multiple of dt."""
    return max(1, round(duration / dt)) * dt


def control_table(schedule, dt: float) -> np.ndarray:
    """Per-step controls for one cycle, shape (n_steps, 3, 6) with the start,
    midpoint and end of every step evaluated inside the step's segment."""
    n = schedule.steps_per_cycle(dt)
    out = np.empty((n, 3, 6))
    for k in range(n):
        out[k] = schedule.step_controls(k * dt, dt)
    return out
