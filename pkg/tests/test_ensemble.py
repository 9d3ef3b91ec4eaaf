import math

import numpy as np
import pytest

from sln_otto.analysis import estimate_works
from sln_otto.ensemble import (
    ConfigError,
    config_from_dict,
    crosscheck,
    efficiency_difference,
    noise_selftest,
    run,
    sweep,
    sweep_points,
    write_run,
)
from sln_otto.io import read_csv
from sln_otto.thermo import Phase, first_law_residual

SMALL = dict(seed=3, n_samples=24, dt=0.05, gamma=0.05, pss_tol=1e-3,
             schedule=dict(tau_I=5.0, tau_d=5.0, period=40.0, delta_omega=0.1))


@pytest.fixture(scope="module")
def small_run():
    return run(config_from_dict(SMALL))


class TestConfig:
    @pytest.mark.parametrize("patch", [
        dict(propagator="spectral"),
        dict(n_samples=1),
        dict(dt=-0.1),
        dict(colour="blue"),
        dict(schedule=dict(tau_I=5.0, tau_d=5.0, period=40.0, kappa=0.1)),
        dict(schedule=dict(tau_I=5.0, tau_d=5.0, period=40.0, wobble=1.0)),
        dict(schedule=dict(tau_I=5.0, tau_d=5.0, period=40.0, hold_after_expansion="forever")),
        dict(schedule=dict(tau_d=5.0, period=40.0)),
        dict(dt=0.03),
        dict(dt=0.5),
    ])
    def test_rejected(self, patch):
        d = {**SMALL, **patch}
        with pytest.raises((ConfigError, ValueError)):
            config_from_dict(d)

    def test_gamma_applies_to_both_baths(self):
        cfg = config_from_dict(SMALL)
        assert cfg.cold.gamma == cfg.hot.gamma == 0.05
        assert cfg.replace(gamma_h=0.2).hot.gamma == 0.2

    def test_hash_ignores_seed_and_output(self):
        cfg = config_from_dict(SMALL)
        assert cfg.replace(seed=99).config_hash() == cfg.config_hash()
        other = config_from_dict({**SMALL, "output": {"dir": "elsewhere"}})
        assert other.config_hash() == cfg.config_hash()
        assert cfg.replace(gamma=0.06).config_hash() != cfg.config_hash()

    def test_period_override_replaces_tau_R(self):
        cfg = config_from_dict({**SMALL, "schedule": dict(tau_I=5.0, tau_d=5.0, tau_R=5.0)})
        assert cfg.replace(period=60.0).schedule.tau_R == pytest.approx(15.0)

    def test_named_holds(self):
        sch = dict(tau_I=5.0, tau_d=5.0, tau_R=5.0, hold_after_expansion="quarter-period")
        cfg = config_from_dict({**SMALL, "schedule": sch})
        assert cfg.schedule.hold_after_expansion == pytest.approx(math.pi, abs=0.03)

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            config_from_dict(SMALL).replace(colour=1)


class TestRun:
    def test_pss_and_first_law(self, small_run):
        assert small_run.converged
        assert small_run.aborted == 0
        for lg in small_run.pss_ledgers:
            res = first_law_residual(lg)
            assert abs(res.mean) < 3 * res.se

    def test_estimates_agree_with_ledger(self, small_run):
        # small compression, weak coupling: same sign and within a factor of two
        rep = small_run.report
        w_d, w_i = estimate_works(small_run.variance_quadruple(), small_run.config.schedule, 0.05)
        for est, sim in ((w_d, rep.W_d.mean), (w_i, rep.W_I.mean)):
            assert est * sim > 0
            assert 0.5 < est / sim < 2.0

    def test_deterministic_and_thread_independent(self, small_run):
        again = run(small_run.config.replace(batch_size=7), threads=3)
        for a, b in zip(small_run.ledgers, again.ledgers):
            assert np.array_equal(a.samples, b.samples)

    def test_seed_changes_samples(self, small_run):
        other = run(small_run.config.replace(seed=4))
        assert not np.allclose(other.ledgers[-1].samples, small_run.ledgers[-1].samples)

    def test_paired_difference_of_identical_runs(self, small_run):
        assert efficiency_difference(small_run, small_run) == (0.0, 0.0)

    def test_refrigerator_signs(self):
        cfg = config_from_dict(dict(seed=19, n_samples=40, gamma=0.25,
                                    schedule=dict(tau_I=10.0, tau_d=5.0, period=60.0),
                                    cold=dict(beta=1.5), hot=dict(beta=10.0)))
        rep = run(cfg).report
        assert rep.phase is Phase.REFRIGERATOR
        assert rep.W.mean > 0 and rep.Q_c.mean > 0 and rep.Q_h.mean < 0
        assert rep.eta_ref > 0

    def test_outputs(self, small_run, tmp_path):
        files = write_run(small_run, tmp_path, plots=True)
        header, cols, rows = read_csv(files["ledger"])
        assert header.startswith("# sln-otto ledger config_hash=")
        assert cols[:4] == ["cycle", "pss", "W_d", "W_d_se"]
        assert len(rows) == len(small_run.ledgers)
        _, cols, rows = read_csv(files["summary"])
        keys = {r[0] for r in rows}
        assert {"eta", "power", "W_I_qm", "q2_A", "qp_C"} <= keys
        _, cols, rows = read_csv(files["moments"])
        assert cols[:6] == ["t", "q", "p", "q2", "p2", "qp"]
        assert files["plot"].read_text().startswith("<svg")


class TestGridRun:
    def test_small_grid_run_matches_gaussian(self):
        base = dict(seed=5, n_samples=4, dt=0.05, gamma=0.1, max_cycles=1, min_cycles=1, ledger_cycles=1,
                    schedule=dict(tau_I=2.0, tau_d=2.0, period=14.0, delta_omega=0.5),
                    grid=dict(n_r=64, n_y=64, L_r=10.0, L_y=10.0))
        g = run(config_from_dict(base))
        r = run(config_from_dict({**base, "propagator": "grid"}))
        assert r.aborted == 0
        np.testing.assert_allclose(r.ledgers[0].samples, g.ledgers[0].samples, atol=2e-3)

    def test_crosscheck(self):
        cfg = config_from_dict(dict(seed=2, dt=0.05, gamma=0.1, crosscheck=dict(cycles=1, samples=2),
                                    schedule=dict(tau_I=2.0, tau_d=2.0, period=14.0, delta_omega=0.5),
                                    grid=dict(n_r=64, n_y=64, L_r=10.0, L_y=10.0)))
        cc = crosscheck(cfg)
        assert cc.gaussian.shape == cc.grid.shape == (280, 5, 2)
        assert cc.max_rel < 1e-2

    def test_crosscheck_rejects_kappa(self):
        cfg = config_from_dict(dict(propagator="grid", schedule=dict(tau_I=2.0, tau_d=2.0, period=14.0, kappa=0.1)))
        with pytest.raises(ConfigError):
            crosscheck(cfg)


class TestSweep:
    def test_points_and_seeds(self):
        cfg = config_from_dict({**SMALL, "sweep": {"gamma": [0.05, 0.1], "tau_I": [4.0, 5.0]}})
        names, pts = sweep_points(cfg)
        assert names == ["gamma", "tau_I"]
        assert len(pts) == 4 and len({p["seed"] for p in pts}) == 4
        common = config_from_dict({**SMALL, "sweep": {"gamma": [0.05, 0.1], "common_noise": True}})
        assert {p["seed"] for p in sweep_points(common)[1]} == {3}

    def test_empty_sweep(self):
        with pytest.raises(ConfigError):
            sweep_points(config_from_dict({**SMALL, "sweep": {"common_noise": True}}))

    def test_phase_diagram_tables(self, tmp_path):
        d = {**SMALL, "n_samples": 8, "schedule": dict(tau_I=5.0, tau_d=5.0, tau_R=5.0, delta_omega=0.5),
             "sweep": {"gamma": [0.05, 0.3], "tau_I": [0.5, 6.0]}}
        sw = sweep(config_from_dict(d), out_dir=tmp_path)
        assert set(sw.tables) >= {"sweep", "phase_diagram", "threshold"}
        _, cols, rows = read_csv(tmp_path / "phase_diagram.csv")
        assert cols[:6] == ["gamma", "tau_I", "phase", "eta", "W", "R"]
        assert len(rows) == 4
        _, cols, rows = read_csv(tmp_path / "threshold.csv")
        assert cols == ["gamma", "tau_I_boundary", "tau_I_estimate", "status"]

    def test_failed_point_recorded(self, tmp_path):
        d = {**SMALL, "n_samples": 4, "sweep": {"dt": [0.05, 0.03]}}
        sw = sweep(config_from_dict(d), out_dir=tmp_path)
        assert isinstance(sw.results[1], Exception)
        _, cols, rows = read_csv(tmp_path / "sweep.csv")
        assert rows[0][cols.index("status")] == "ok"
        assert rows[1][cols.index("phase")] == "error"


class TestNoiseSelftest:
    def test_small_sample(self):
        cfg = config_from_dict(dict(seed=1, n_samples=400, dt=math.pi / 32,
                                    schedule=dict(kind="static", window=math.pi),
                                    cold=dict(gamma=0.05), hot=dict(gamma=0.0),
                                    noise_selftest=dict(horizon=10.0)))
        checks = noise_selftest(cfg)
        assert [c.label for c in checks] == ["cold"] * 3
        assert all(abs(c.z) < 4 for c in checks)
        assert checks[1].lag == pytest.approx(math.pi)
