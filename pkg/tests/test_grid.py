import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sln_otto.analysis import thermal_entropy
from sln_otto.gaussian import GaussianState, propagate
from sln_otto.grid import (
    DensityGrid,
    GridOverflowError,
    GridPropagator,
    GridSpec,
    dump_snapshot,
    entropy_grid,
    fock_matrix,
    gaussian_density,
    hermiticity_defect,
    observables_grid,
    position_matrix,
    step_grid,
    trace,
)
from sln_otto.protocol import Controls, StaticSchedule
from sln_otto.reservoir import ReservoirSpec

G = GridSpec(n_r=64, n_y=64, L_r=8.0, L_y=8.0)
OFF = (ReservoirSpec(beta=3.0, gamma=0.0, label="cold"), ReservoirSpec(beta=0.25, gamma=0.0, label="hot"))


def const(omega, lam_c=0.0, lam_h=0.0):
    c = Controls(omega, 0.0, lam_c, 0.0, lam_h, 0.0)
    return (c, c, c)


def thermal_vars(omega, beta):
    c = 1.0 / math.tanh(0.5 * beta * omega)
    return 0.5 * c / omega, 0.5 * omega * c


class TestGridSpec:
    @pytest.mark.parametrize("kw", [dict(n_r=100), dict(n_y=4), dict(L_r=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridSpec(**kw)

    def test_axes(self):
        assert G.r[0] == -8.0 and G.r[-1] == pytest.approx(8.0 - G.dr)
        assert G.y[0] == 0.0
        inner = np.arange(64) != 32  # the Nyquist sample mirrors onto itself
        assert np.allclose(G.y[G.mirror][inner], -G.y[inner])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            DensityGrid(G, np.zeros((3, 3)))


class TestGaussianDensity:
    def test_moments_recovered(self):
        v = gaussian_density(G, 0.3, -0.4, 0.6, 0.7, 0.1)
        q, p, q2, p2, qp = observables_grid(G, v)
        assert trace(G, v) == pytest.approx(1.0, abs=1e-10)
        assert (q, p) == pytest.approx((0.3, -0.4), abs=1e-10)
        assert q2 == pytest.approx(0.6 + 0.09, abs=1e-9)
        assert p2 == pytest.approx(0.7 + 0.16, abs=1e-9)
        assert qp == pytest.approx(0.1 - 0.12, abs=1e-9)

    def test_momentum_sign(self):
        # a plane-wave factor exp(+i k x) carries momentum +k
        q, p, *_ = observables_grid(G, gaussian_density(G, 0.0, 0.7, 0.5, 0.5, 0.0))
        assert p == pytest.approx(0.7, abs=1e-8)

    def test_hermitian(self):
        v = gaussian_density(G, 0.2, 0.1, 0.8, 0.5, 0.2)
        v[:, 32] = v[:, 32].real  # the Nyquist column is its own mirror
        assert hermiticity_defect(G, v) < 1e-12

    def test_batched(self):
        v = gaussian_density(G, np.array([0.0, 1.0]), np.zeros(2), 0.5, 0.5, 0.0)
        assert v.shape == (2, 64, 64)
        assert observables_grid(G, v)[0] == pytest.approx([0.0, 1.0], abs=1e-10)

    def test_uncertainty_enforced(self):
        with pytest.raises(ValueError):
            gaussian_density(G, 0.0, 0.0, 0.4, 0.4, 0.0)


class TestFock:
    def test_ground_state(self):
        rho = fock_matrix(G, gaussian_density(G, 0.0, 0.0, 0.5, 0.5, 0.0), n_max=4)
        assert rho[0, 0].real == pytest.approx(1.0, abs=1e-8)
        assert np.abs(rho[1:, 1:]).max() < 1e-8

    def test_thermal_populations(self):
        beta, w = 1.2, 1.0
        vq, vp = thermal_vars(w, beta)
        rho = fock_matrix(G, gaussian_density(G, 0.0, 0.0, vq, vp, 0.0), n_max=6)
        x = math.exp(-beta * w)
        expected = [(1 - x) * x**n for n in range(5)]
        assert np.diag(rho).real[:5] == pytest.approx(expected, abs=1e-7)

    def test_basis_wider_than_grid(self):
        with pytest.raises(ValueError):
            fock_matrix(G, gaussian_density(G, 0.0, 0.0, 0.5, 0.5, 0.0), n_max=40)


class TestEntropy:
    @pytest.mark.parametrize("beta", [0.8, 2.0])
    def test_thermal_entropy(self, beta):
        vq, vp = thermal_vars(1.0, beta)
        s = entropy_grid(G, gaussian_density(G, 0.0, 0.0, vq, vp, 0.0))
        assert s == pytest.approx(thermal_entropy(1.0, beta), abs=1e-6)

    def test_position_matrix_diagonal(self):
        v = gaussian_density(G, 0.5, 0.0, 0.7, 0.5, 0.0)
        x, mat = position_matrix(G, v)
        dens = np.exp(-0.5 * (x - 0.5) ** 2 / 0.7) / math.sqrt(2 * math.pi * 0.7)
        assert np.diag(mat).real == pytest.approx(dens, abs=1e-9)


class TestPropagation:
    def test_coherent_orbit(self):
        w, dt, n = 1.2, 0.01, 300
        prop = GridPropagator(G, dt, OFF)
        v = gaussian_density(G, 1.0, 0.0, 0.5 / w, 0.5 * w, 0.0)
        for _ in range(n):
            v = prop.step(v, const(w), 0.0, 0.0)
        q, p, q2, p2, qp = observables_grid(G, v)
        t = n * dt
        assert q == pytest.approx(math.cos(w * t), abs=1e-4)
        assert p == pytest.approx(-w * math.sin(w * t), abs=1e-4)
        assert q2 - q * q == pytest.approx(0.5 / w, abs=1e-5)

    def test_matches_moment_equations_with_baths(self):
        # Strang splitting is second order; compare with RK4 moments at dt^2 accuracy
        res = (ReservoirSpec(beta=2.0, gamma=0.2, label="cold"), OFF[1])
        dt, n = 0.01, 200
        sched = StaticSchedule(omega=1.0, lam_c=1.0)
        xi = 0.3 * np.sin(0.7 * dt * np.arange(n))
        prop = GridPropagator(G, dt, res)
        v = gaussian_density(G, 0.5, 0.0, 0.6, 0.5, 0.0)
        for k in range(n):
            v = prop.step(v, sched.step_controls(k * dt, dt), xi[k], 0.0)
        s = propagate(GaussianState(0.5, 0.0, 0.6, 0.5, 0.0), sched, xi, np.zeros(n), dt, res, n)
        q, p, q2, p2, qp = observables_grid(G, v)
        assert (q, p) == pytest.approx((s.mean_q, s.mean_p), abs=1e-4)
        assert q2 - q * q == pytest.approx(s.var_q, abs=1e-4)
        assert p2 - p * p == pytest.approx(s.var_p, abs=1e-4)
        assert qp - q * p == pytest.approx(s.cov_qp, abs=1e-4)

    def test_fused_equals_unfused(self):
        res = (ReservoirSpec(beta=2.0, gamma=0.2, label="cold"), OFF[1])
        prop = GridPropagator(G, 0.02, res, kappa=0.05)
        v0 = gaussian_density(G, 0.4, 0.2, 0.5, 0.6, 0.05)
        a, b = v0, prop.lead(v0)
        for k in range(20):
            a = prop.step(a, const(1.1, lam_c=1.0), 0.1 * k, 0.0)
            b = prop.step_lead(b, const(1.1, lam_c=1.0), 0.1 * k, 0.0)
        assert np.abs(prop.lag(b) - a).max() < 1e-11
        assert prop.moments_lead(b) == pytest.approx(observables_grid(G, a), abs=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(omega=st.floats(0.5, 1.5), lam=st.floats(0.0, 1.0), xi=st.floats(-2.0, 2.0),
           kappa=st.sampled_from([0.0, 0.1]))
    def test_trace_and_hermiticity_preserved(self, omega, lam, xi, kappa):
        res = (ReservoirSpec(beta=1.0, gamma=0.3, label="cold"), OFF[1])
        prop = GridPropagator(G, 0.05, res, kappa=kappa)
        v = gaussian_density(G, 0.2, -0.1, 0.5, 0.5, 0.0)
        for _ in range(5):
            v = prop.step(v, const(omega, lam_c=lam), xi, 0.0)
        assert trace(G, v).real == pytest.approx(1.0, abs=1e-10)
        assert hermiticity_defect(G, v) < 1e-12

    def test_overflow_detected(self):
        state = DensityGrid(G, gaussian_density(G, 6.5, 0.0, 0.5, 0.5, 0.0))
        with pytest.raises(GridOverflowError):
            step_grid(state, const(1.0), 0.0, 0.0, 0.01, OFF)

    def test_step_grid_advances_time(self):
        state = DensityGrid(G, gaussian_density(G, 0.0, 0.0, 0.5, 0.5, 0.0), t=1.0)
        out = step_grid(state, const(1.0), 0.0, 0.0, 0.01, OFF)
        assert out.t == pytest.approx(1.01)
        assert out.trace().real == pytest.approx(1.0, abs=1e-12)

    def test_bad_trajectories(self):
        prop = GridPropagator(G, 0.01, OFF)
        v = gaussian_density(G, np.array([0.0, 7.0]), np.zeros(2), 0.5, 0.5, 0.0)
        v[0, 0, 0] = np.nan
        assert prop.bad_trajectories(v).tolist() == [True, True]


class TestSnapshot:
    def test_dump(self, tmp_path):
        v = gaussian_density(G, np.array([0.0, 1.0]), np.zeros(2), 0.5, 0.5, 0.0)
        dump_snapshot(G, v, tmp_path / "s.csv", 2.5, header="demo")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "# demo"
        assert lines[1].startswith("# t=2.5 q=5.0")
        assert lines[2] == "r,density"
        data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=3)
        assert data.shape == (64, 2)
        assert data[:, 1].sum() * G.dr == pytest.approx(1.0, abs=1e-10)
