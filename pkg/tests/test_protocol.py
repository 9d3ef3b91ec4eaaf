import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sln_otto.protocol import (
    CycleSchedule,
    StaticSchedule,
    Stroke,
    control_table,
    controls_at,
    potential_at,
    snap_to_grid,
    stroke_boundaries,
)

FIG3 = CycleSchedule.from_period(5.0, 5.0, 40.0)


class TestControls:
    def test_mid_expansion(self):
        b = FIG3.boundaries()
        c = controls_at(FIG3, b.t_B + 2.5)
        assert c.omega == pytest.approx(1.0)
        assert c.domega == pytest.approx(-0.2)
        assert c.lam_c == c.lam_h == 0.0

    def test_mid_hot_hold(self):
        c = controls_at(FIG3, 5.0 + 2.5)
        assert (c.lam_h, c.dlam_h, c.omega) == (1.0, 0.0, 1.5)
        assert c.lam_c == 0.0

    def test_origin_is_uncoupled_at_hot_frequency(self):
        c = controls_at(FIG3, 0.0)
        assert c.lam_h == 0.0 and c.lam_c == 0.0
        assert c.omega == pytest.approx(1.5)

    def test_ramp_rates(self):
        assert controls_at(FIG3, 1.0).dlam_h == pytest.approx(0.2)
        assert controls_at(FIG3, 12.0).dlam_h == pytest.approx(-0.2)
        assert controls_at(FIG3, 22.0).dlam_c == pytest.approx(0.2)

    def test_periodic(self):
        for t in (0.3, 7.7, 19.1, 33.3):
            assert tuple(controls_at(FIG3, t)) == pytest.approx(tuple(controls_at(FIG3, t + 3 * FIG3.period)), abs=1e-12)

    def test_smoothstep_has_zero_rate_at_ends(self):
        s = CycleSchedule.from_period(5.0, 5.0, 40.0, ramp_shape="smoothstep")
        assert s.controls_at(1e-9).dlam_h == pytest.approx(0.0, abs=1e-8)
        assert s.controls_at(2.5).lam_h == pytest.approx(0.5)
        assert s.controls_at(2.5).dlam_h == pytest.approx(1.5 / 5.0)

    @settings(max_examples=200, deadline=None)
    @given(t=st.floats(0.0, 200.0))
    def test_controls_within_bounds(self, t):
        c = controls_at(FIG3, t)
        assert 0.5 - 1e-12 <= c.omega <= 1.5 + 1e-12
        assert 0.0 <= c.lam_c <= 1.0 and 0.0 <= c.lam_h <= 1.0
        assert c.lam_c * c.lam_h == 0.0
        # frequency only moves while uncoupled
        if c.domega != 0.0:
            assert c.lam_c == c.lam_h == 0.0

    @settings(max_examples=100, deadline=None)
    @given(t=st.floats(0.0, 39.9))
    def test_rate_is_derivative(self, t):
        h = 1e-6
        seg = FIG3.segments[FIG3.segment_index(t)]
        if not (seg.start + 2 * h < t < seg.start + seg.duration - 2 * h):
            return
        a, b = controls_at(FIG3, t - h), controls_at(FIG3, t + h)
        c = controls_at(FIG3, t)
        assert (b.omega - a.omega) / (2 * h) == pytest.approx(c.domega, abs=1e-6)
        assert (b.lam_h - a.lam_h) / (2 * h) == pytest.approx(c.dlam_h, abs=1e-6)
        assert (b.lam_c - a.lam_c) / (2 * h) == pytest.approx(c.dlam_c, abs=1e-6)


class TestBoundaries:
    def test_slow_ramp_cycle(self):
        s = CycleSchedule.from_period(10.0, 5.0, 60.0)
        assert s.tau_R == pytest.approx(5.0)
        assert tuple(stroke_boundaries(s)) == pytest.approx((0.0, 25.0, 30.0, 55.0, 60.0))

    def test_reference_cycle(self):
        assert tuple(stroke_boundaries(FIG3)) == pytest.approx((0.0, 15.0, 20.0, 35.0, 40.0))

    def test_hold_shifts_C(self):
        hold = math.pi / 0.5
        s = CycleSchedule(5.0, 5.0, 5.0, hold_after_expansion=hold)
        b = s.boundaries()
        assert b.t_C == pytest.approx(20.0 + hold)
        assert b.T == pytest.approx(40.0 + hold)
        assert s.period == pytest.approx(b.T)
        c = s.controls_at(21.0)
        assert c.omega == 0.5 and c.domega == 0.0 and c.lam_c == 0.0

    @settings(max_examples=100, deadline=None)
    @given(tau_I=st.floats(0.0, 10.0), tau_d=st.floats(0.1, 10.0), tau_R=st.floats(0.0, 10.0), hold=st.floats(0.0, 5.0))
    def test_segments_tile_the_period(self, tau_I, tau_d, tau_R, hold):
        s = CycleSchedule(tau_I, tau_d, tau_R, hold_after_expansion=hold)
        assert s.period == pytest.approx(4 * tau_I + 2 * tau_d + 2 * tau_R + hold)
        for a, b in zip(s.segments, s.segments[1:]):
            assert b.start == pytest.approx(a.start + a.duration)

    @pytest.mark.parametrize("kw", [dict(tau_I=-1.0, tau_d=1.0, tau_R=1.0), dict(tau_I=1.0, tau_d=0.0, tau_R=1.0),
                                    dict(tau_I=1.0, tau_d=1.0, tau_R=1.0, delta_omega=0.0),
                                    dict(tau_I=1.0, tau_d=1.0, tau_R=1.0, delta_omega=2.0),
                                    dict(tau_I=1.0, tau_d=1.0, tau_R=1.0, kappa=-0.1),
                                    dict(tau_I=1.0, tau_d=1.0, tau_R=1.0, ramp_shape="cubic")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CycleSchedule(**kw)

    def test_period_too_short(self):
        with pytest.raises(ValueError):
            CycleSchedule.from_period(5.0, 5.0, 20.0)


class TestPotential:
    def test_values(self):
        assert potential_at(StaticSchedule(omega=1.0), 1.0, 0.0) == pytest.approx(0.5)
        assert potential_at(StaticSchedule(omega=1.0, kappa=0.15), 1.0, 0.0) == pytest.approx(0.5375)
        assert potential_at(CycleSchedule(1, 1, 1, kappa=0.3), 0.0, 0.7) == 0.0

    def test_follows_frequency(self):
        s = CycleSchedule(1.0, 1.0, 1.0)
        assert potential_at(s, 2.0, 0.0) == pytest.approx(0.5 * 1.5**2 * 4)


class TestGridding:
    def test_steps_per_cycle(self):
        assert FIG3.steps_per_cycle(0.025) == 1600
        assert FIG3.corner_steps(0.025) == {"A": 0, "B": 600, "C": 800, "D": 1400}

    def test_incommensurate_step(self):
        with pytest.raises(ValueError):
            FIG3.steps_per_cycle(0.03)

    def test_snap(self):
        assert snap_to_grid(math.pi, 0.025) == pytest.approx(126 * 0.025)
        assert snap_to_grid(1e-5, 0.025) == 0.025

    def test_step_controls_use_one_segment(self):
        # a step ending exactly at a corner reports the ramp's end value, not the next segment's
        start, mid, end = FIG3.step_controls(5.0 - 0.025, 0.025)
        assert end.lam_h == pytest.approx(1.0) and end.dlam_h == pytest.approx(0.2)
        start, _, _ = FIG3.step_controls(10.0, 0.025)
        assert start.dlam_h == pytest.approx(-0.2)

    def test_control_table(self):
        tab = control_table(FIG3, 0.025)
        assert tab.shape == (1600, 3, 6)
        np.testing.assert_allclose(tab[0, 0], tuple(controls_at(FIG3, 0.0)))


class TestStatic:
    def test_constant(self):
        s = StaticSchedule(omega=1.2, lam_c=1.0, window=4.0)
        assert s.controls_at(0.0) == s.controls_at(3.7)
        assert s.period == 4.0
        assert s.steps_per_cycle(0.5) == 8

    def test_single_bath(self):
        with pytest.raises(ValueError):
            StaticSchedule(lam_c=1.0, lam_h=1.0)

    def test_stroke_names(self):
        assert {seg.stroke for seg in FIG3.segments} == set(Stroke) - {Stroke.HOLD_AFTER_EXPANSION, Stroke.STATIC}
