"""Run configuration, trajectory ensembles, sweeps and diagnostic drivers.

Trajectories are processed in fixed-size batches. Batch composition depends
only on the configuration, and all reductions run in batch order, so results
do not depend on how many worker threads execute the batches.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, io
from .gaussian import GaussianState, moments as gaussian_moments, step_gaussian, thermal_state
from .grid import GridPropagator, GridSpec, gaussian_density
from .protocol import CycleSchedule, StaticSchedule, snap_to_grid
from .reservoir import (
    ReservoirSpec,
    autocorrelation_estimate,
    make_noise_path,
    noise_correlation,
    sample_paths,
)
from .thermo import (COMPONENTS, DIAGNOSTICS, CycleLedger, Estimate, LedgerAccumulator, classify, detect_pss,
                     engine_figures, first_law_residual, paired_ratio_difference)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

MOMENT_NAMES = ("q", "p", "q2", "p2", "qp")


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    pass


DEFAULTS = {
    "seed": 0,
    "propagator": "gaussian",
    "n_samples": 500,
    "dt": 0.025,
    "max_cycles": 30,
    "min_cycles": 2,
    "ledger_cycles": 2,
    "pss_tol": 1e-2,
    "batch_size": 250,
    "record_stride": 4,
    "check_stride": 25,
    "schedule": {"kind": "otto", "delta_omega": 1.0, "kappa": 0.0, "hold_after_expansion": 0.0,
                 "ramp_shape": "linear", "omega0": 1.0},
    "cold": {"beta": 3.0, "gamma": 0.05, "omega_cut": 30.0},
    "hot": {"beta": 0.25, "gamma": 0.05, "omega_cut": 30.0},
    "grid": {"n_r": 128, "n_y": 128, "L_r": 12.0, "L_y": 12.0},
    "initial": {},
    "output": {"dir": "out", "plots": False, "dump_noise": False, "snapshot_stride": 0},
    "crosscheck": {"cycles": 1, "samples": 1},
    "noise_selftest": {"horizon": 40.0, "lags": [0.0, math.pi, 2 * math.pi]},
}

_SCHEDULE_KEYS = {"tau_I", "tau_d", "tau_R", "period", "delta_omega", "kappa", "hold_after_expansion",
                  "ramp_shape", "omega0", "tau_I_fraction", "tau_d_fraction", "omega", "lam_c", "lam_h", "window"}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Validated run configuration; ``data`` is the resolved nested table."""

    data: dict
    schedule: CycleSchedule | StaticSchedule = field(init=False)
    cold: ReservoirSpec = field(init=False)
    hot: ReservoirSpec = field(init=False)
    grid: GridSpec = field(init=False)

    def __post_init__(self):
        d = self.data
        if "gamma" in d:
            g = d.pop("gamma")
            d["cold"]["gamma"] = g
            d["hot"]["gamma"] = g
        if d["propagator"] not in ("gaussian", "grid"):
            raise ConfigError(f"unknown propagator {d['propagator']!r}")
        if int(d["n_samples"]) < 2:
            raise ConfigError("n_samples must be >= 2")
        if d["dt"] <= 0:
            raise ConfigError("dt must be > 0")
        self.cold = ReservoirSpec(label="cold", **d["cold"])
        self.hot = ReservoirSpec(label="hot", **d["hot"])
        self.schedule = _build_schedule(d["schedule"], float(d["dt"]))
        if d["propagator"] == "gaussian" and self.schedule.kappa != 0:
            raise ConfigError("the gaussian propagator requires kappa = 0")
        self.grid = GridSpec(**d["grid"])
        try:
            self.schedule.steps_per_cycle(self.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for res in (self.cold, self.hot):
            if res.gamma > 0:
                try:
                    res.validate_scales(self.schedule.max_frequency, self.dt)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc

    def __getattr__(self, name):
        data = self.__dict__.get("data")
        if data is not None and name in data:
            return data[name]
        raise AttributeError(name)

    @property
    def reservoirs(self) -> tuple[ReservoirSpec, ReservoirSpec]:
        return self.cold, self.hot

    @property
    def out_dir(self) -> Path:
        return Path(self.data["output"]["dir"])

    def replace(self, **overrides) -> "RunConfig":
        data = copy.deepcopy(self.data)
        for name, value in overrides.items():
            _apply_override(data, name, value)
        return RunConfig(data)

    def config_hash(self) -> str:
        """Hash of every setting that affects results (seed, output and threads excluded)."""
        d = {k: v for k, v in self.data.items() if k not in ("seed", "output", "sweep")}
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build_schedule(s: dict, dt: float):
    s = dict(s)
    kind = s.pop("kind", "otto")
    unknown = set(s) - _SCHEDULE_KEYS
    if unknown:
        raise ConfigError(f"unknown schedule keys {sorted(unknown)}")
    if kind == "static":
        return StaticSchedule(omega=s.get("omega", 1.0), lam_c=s.get("lam_c", 1.0), lam_h=s.get("lam_h", 0.0),
                              kappa=s.get("kappa", 0.0), window=s.get("window", 10.0))
    if kind != "otto":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    dw = s.get("delta_omega", 1.0)
    w0 = s.get("omega0", 1.0)
    hold = s.get("hold_after_expansion", 0.0)
    if isinstance(hold, str):
        wc = w0 - 0.5 * dw
        if hold == "half-period":
            hold = snap_to_grid(math.pi / wc, dt)
        elif hold == "quarter-period":
            hold = snap_to_grid(0.5 * math.pi / wc, dt)
        else:
            raise ConfigError(f"unknown hold {hold!r}")
    kw = dict(delta_omega=dw, kappa=s.get("kappa", 0.0), hold_after_expansion=hold,
              ramp_shape=s.get("ramp_shape", "linear"), omega0=w0)
    period = s.get("period")
    tau_I = s.get("tau_I")
    tau_d = s.get("tau_d")
    if period is not None:
        if "tau_I_fraction" in s:
            tau_I = s["tau_I_fraction"] * period
        if "tau_d_fraction" in s:
            tau_d = s["tau_d_fraction"] * period
    if tau_I is None or tau_d is None:
        raise ConfigError("schedule needs tau_I and tau_d (or fractions of the period)")
    if "tau_R" in s and period is None:
        return CycleSchedule(tau_I, tau_d, s["tau_R"], **kw)
    if period is None:
        raise ConfigError("schedule needs tau_R or period")
    return CycleSchedule.from_period(tau_I, tau_d, period, **kw)


_TOP_KEYS = {"seed", "n_samples", "dt", "propagator", "max_cycles", "min_cycles", "ledger_cycles", "pss_tol",
             "batch_size", "record_stride", "check_stride"}


def _apply_override(data: dict, name: str, value) -> None:
    if name == "gamma":
        data["cold"]["gamma"] = value
        data["hot"]["gamma"] = value
    elif name in ("gamma_c", "beta_c"):
        data["cold"][name[:-2]] = value
    elif name in ("gamma_h", "beta_h"):
        data["hot"][name[:-2]] = value
    elif name == "omega_cut":
        data["cold"]["omega_cut"] = value
        data["hot"]["omega_cut"] = value
    elif name in _SCHEDULE_KEYS:
        data["schedule"][name] = value
        if name == "tau_R":
            data["schedule"].pop("period", None)
        if name == "period" and "tau_R" in data["schedule"]:
            data["schedule"].pop("tau_R")
    elif name in _TOP_KEYS:
        data[name] = value
    elif name in ("n_r", "n_y", "L_r", "L_y"):
        data["grid"][name] = value
    else:
        raise ConfigError(f"cannot override {name!r}")


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(DEFAULTS) - {"gamma", "sweep"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(_merge(DEFAULTS, d))


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# trajectory backends


class _GaussianBackend:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.res = cfg.reservoirs
        self.dt = cfg.dt

    def init(self, n: int):
        return _initial_gaussian(self.cfg, n)

    def step(self, st, ctrl, xc, xh):
        return step_gaussian(st, ctrl, xc, xh, self.dt, self.res)

    def moments(self, st, n):
        return tuple(np.broadcast_to(m, (n,)) for m in gaussian_moments(st))

    def bad(self, st):
        return ~np.isfinite(st.mean_q) | ~np.isfinite(st.mean_p)


class _GridBackend:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid = cfg.grid
        self.prop = GridPropagator(cfg.grid, cfg.dt, cfg.reservoirs, cfg.schedule.kappa)

    # states are carried half a kinetic step ahead (see GridPropagator.step_lead)

    def init(self, n: int):
        g = _initial_gaussian(self.cfg, None)
        return self.prop.lead(gaussian_density(self.grid, np.zeros(n), np.zeros(n), g.var_q, g.var_p, g.cov_qp))

    def step(self, v, ctrl, xc, xh):
        return self.prop.step_lead(v, ctrl, xc, xh)

    def moments(self, v, n):
        with np.errstate(invalid="ignore", over="ignore"):
            return self.prop.moments_lead(v)

    def physical(self, v):
        return self.prop.lag(v)

    def bad(self, v):
        return self.prop.bad_trajectories(v)


def _initial_gaussian(cfg: RunConfig, n) -> GaussianState:
    ini = cfg.data["initial"]
    omega = ini.get("omega", cfg.schedule.controls_at(0.0).omega)
    beta = ini.get("beta", cfg.cold.beta)
    return thermal_state(omega, beta, n)


# ---------------------------------------------------------------------------
# results


@dataclass
class RunResult:
    config: RunConfig
    config_hash: str
    seed: int
    report: object
    ledgers: list
    pss_cycle: int | None
    converged: bool
    aborted: int
    trajectory_ids: np.ndarray
    times: np.ndarray
    history: np.ndarray
    history_se: np.ndarray
    corners: np.ndarray
    wall_time: float = 0.0
    snapshots: dict = field(default_factory=dict, repr=False)

    @property
    def pss_ledgers(self) -> list:
        if self.pss_cycle is None:
            return self.ledgers[-self.config.ledger_cycles:]
        return [lg for lg in self.ledgers if lg.cycle_index >= self.pss_cycle]

    def _pss_cycles(self) -> list[int]:
        return [lg.cycle_index - 1 for lg in self.pss_ledgers]

    def variance_quadruple(self) -> analysis.VarianceQuadruple:
        c = self.corners[self._pss_cycles()].mean(axis=0)
        return analysis.VarianceQuadruple(*(float(c[i, 2]) for i in range(4)))

    def qp_corners(self) -> tuple[float, float]:
        """Ensemble <qp+pq> at corners A and C."""
        c = self.corners[self._pss_cycles()].mean(axis=0)
        return 2.0 * float(c[0, 4]), 2.0 * float(c[2, 4])

    @property
    def time_per_trajectory(self) -> float:
        return self.wall_time / max(1, self.config.n_samples)

    def pss_samples(self) -> np.ndarray:
        """Per-trajectory ledger columns averaged over the steady-state cycles."""
        return np.mean([lg.samples for lg in self.pss_ledgers], axis=0)

    def time_average(self, moment: str, cycles=None) -> tuple[float, float]:
        """Average of an ensemble moment over the recorded samples of the given cycles (0-based).

        The error is the mean pointwise standard error, which bounds the error
        of the average when the samples are positively correlated.
        """
        idx = MOMENT_NAMES.index(moment)
        cyc = self._pss_cycles() if cycles is None else list(cycles)
        h = self.history[cyc, :, idx]
        se = self.history_se[cyc, :, idx]
        return float(h.mean()), float(se.mean())


# ---------------------------------------------------------------------------
# ensemble execution


def _batches(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(size, n - s)) for s in range(0, n, size)]


class _Batch:
    """Trajectory batch state carried across cycles."""

    def __init__(self, backend, cfg: RunConfig, start: int, size: int, n_steps_total: int):
        self.backend = backend
        self.start, self.size = start, size
        self.state = backend.init(size)
        self.alive = np.ones(size, dtype=bool)
        seed = cfg.seed
        if cfg.cold.gamma > 0:
            self.xi_c = sample_paths(cfg.cold, size, n_steps_total, cfg.dt, seed, start, average=True)
        else:
            self.xi_c = np.zeros((size, n_steps_total))
        if cfg.hot.gamma > 0:
            self.xi_h = sample_paths(cfg.hot, size, n_steps_total, cfg.dt, seed, start, average=True)
        else:
            self.xi_h = np.zeros((size, n_steps_total))


def _run_cycle(batch: _Batch, cyc: int, ctrl: list, cfg: RunConfig, rec_steps: np.ndarray,
               corner_steps: list[int], snapshot_steps: set):
    be = batch.backend
    n = batch.size
    N = len(ctrl)
    dt = cfg.dt
    acc = LedgerAccumulator(cfg.reservoirs, n)
    rec = np.zeros((len(rec_steps), 5, n))
    corners = np.full((4, 5, n), np.nan)
    rec_pos = {int(k): i for i, k in enumerate(rec_steps)}
    corner_pos = {k: i for i, k in enumerate(corner_steps)}
    snaps = {}
    check = max(1, int(cfg.check_stride))
    st = batch.state
    mom = np.array(be.moments(st, n))
    offset = cyc * N
    for k in range(N):
        if k in rec_pos:
            rec[rec_pos[k]] = mom
        if k in corner_pos:
            corners[corner_pos[k]] = mom
        g = offset + k
        if g in snapshot_steps:
            snaps[g] = be.physical(st[batch.alive])[:, :, 0].sum(axis=0)
        c = ctrl[k]
        xc = batch.xi_c[:, g]
        xh = batch.xi_h[:, g]
        st = be.step(st, c, xc, xh)
        new = np.array(be.moments(st, n))
        acc.add(dt, c[0], c[2], mom, new, xc, xh)
        mom = new
        if (k + 1) % check == 0 or k == N - 1:
            bad = be.bad(st) & batch.alive
            if bad.any():
                batch.alive &= ~bad
                log.warning("trajectories %s aborted at t=%.4g", (batch.start + np.flatnonzero(bad)).tolist(), (g + 1) * dt)
                if isinstance(st, np.ndarray):
                    st = st.copy()
                    st[bad] = 0.0
    batch.state = st
    return acc.totals, rec, corners, batch.alive.copy(), snaps


def _stats(x: np.ndarray, alive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = x[..., alive]
    m = v.mean(axis=-1)
    se = v.std(axis=-1, ddof=1) / math.sqrt(v.shape[-1]) if v.shape[-1] > 1 else np.zeros_like(m)
    return m, se


def _deterministic_pss(cfg: RunConfig, ctrl: list, rec_steps: np.ndarray) -> tuple[int | None, int]:
    """PSS cycle of the noise-free covariance dynamics (identical in every trajectory)."""
    st = _initial_gaussian(cfg, None)
    hist = []
    rec_set = set(int(k) for k in rec_steps)
    for cyc in range(cfg.max_cycles):
        row = []
        for k, c in enumerate(ctrl):
            if k in rec_set:
                row.append(gaussian_moments(st))
            st = step_gaussian(st, c, 0.0, 0.0, cfg.dt, cfg.reservoirs)
        hist.append(row)
        k_pss = detect_pss(np.array(hist, dtype=float), cfg.pss_tol, cfg.min_cycles)
        if k_pss is not None:
            return k_pss, cyc + 1
    return None, cfg.max_cycles


def run(cfg: RunConfig, threads: int = 1) -> RunResult:
    """Propagate the ensemble to a periodic steady state and evaluate the ledgers."""
    t_wall = time.perf_counter()
    sched = cfg.schedule
    dt = cfg.dt
    N = sched.steps_per_cycle(dt)
    ctrl = [sched.step_controls(k * dt, dt) for k in range(N)]
    stride = max(1, int(cfg.record_stride))
    rec_steps = np.arange(0, N, stride)
    corners = sched.corner_steps(dt)
    corner_steps = [corners[x] for x in "ABCD"] if corners else []
    gaussian = cfg.propagator == "gaussian"
    if gaussian:
        k_det, _ = _deterministic_pss(cfg, ctrl, rec_steps)
        n_cycles = cfg.max_cycles if k_det is None else max(k_det + cfg.ledger_cycles - 1, cfg.min_cycles)
        backend = _GaussianBackend(cfg)
    else:
        k_det = None
        n_cycles = cfg.max_cycles
        backend = _GridBackend(cfg)
    n_total = n_cycles * N + 1
    snap_stride = int(cfg.data["output"].get("snapshot_stride", 0))
    snapshot_steps = set(range(0, n_total, snap_stride)) if (snap_stride > 0 and not gaussian) else set()

    specs = _batches(cfg.n_samples, int(cfg.batch_size))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    mapper = pool.map if pool else map
    batches = list(mapper(lambda s: _Batch(backend if gaussian else _GridBackend(cfg), cfg, s[0], s[1], n_total), specs))

    cycle_totals, hist, hist_se, corner_means, snapshots = [], [], [], [], {}
    pss = k_det
    alive = np.ones(cfg.n_samples, dtype=bool)
    cycles_done = 0
    try:
        for cyc in range(n_cycles):
            outs = list(mapper(lambda b: _run_cycle(b, cyc, ctrl, cfg, rec_steps, corner_steps, snapshot_steps), batches))
            totals = np.concatenate([o[0] for o in outs], axis=0)
            rec = np.concatenate([o[1] for o in outs], axis=-1)
            cor = np.concatenate([o[2] for o in outs], axis=-1)
            alive = np.concatenate([o[3] for o in outs])
            for o in outs:
                for g, s in o[4].items():
                    snapshots[g] = snapshots.get(g, 0) + s
            cycle_totals.append(totals)
            m, se = _stats(rec, alive)
            hist.append(m)
            hist_se.append(se)
            corner_means.append(_stats(cor, alive)[0] if corner_steps else np.zeros((0, 5)))
            cycles_done = cyc + 1
            n_dead = int((~alive).sum())
            if n_dead > 0.01 * cfg.n_samples:
                raise RunError(f"{n_dead} of {cfg.n_samples} trajectories aborted")
            if not gaussian:
                if pss is None:
                    # the maximum runs over every recorded time and moment, so allow 5 SE
                    pss = detect_pss(np.array(hist), cfg.pss_tol, cfg.min_cycles, allowance=5.0 * np.array(hist_se))
                if pss is not None and cycles_done >= max(pss + cfg.ledger_cycles - 1, cfg.min_cycles):
                    break
    finally:
        if pool:
            pool.shutdown()

    ids = np.flatnonzero(alive)
    ledgers = [CycleLedger(i + 1, t[alive]) for i, t in enumerate(cycle_totals)]
    converged = pss is not None
    result = RunResult(
        config=cfg, config_hash=cfg.config_hash(), seed=int(cfg.seed), report=None, ledgers=ledgers,
        pss_cycle=pss, converged=converged, aborted=int((~alive).sum()), trajectory_ids=ids,
        times=rec_steps * dt, history=np.array(hist), history_se=np.array(hist_se),
        corners=np.array(corner_means),
        snapshots={g: s / max(1, len(ids)) for g, s in sorted(snapshots.items())},
    )
    result.report = engine_figures(result.pss_ledgers, sched.period, converged)
    result.wall_time = time.perf_counter() - t_wall
    return result


def efficiency_difference(a: RunResult, b: RunResult) -> Estimate:
    """eta(a) - eta(b) over the trajectories alive in both runs, paired by trajectory id.

    Runs that share seed and sample count share their noise paths, so the
    pairing removes most of the sampling noise from the difference.
    """
    common, ia, ib = np.intersect1d(a.trajectory_ids, b.trajectory_ids, return_indices=True)
    if common.size < 2:
        raise ValueError("runs share fewer than two trajectories")
    sa, sb = a.pss_samples()[ia], b.pss_samples()[ib]
    return paired_ratio_difference(-sa[:, :3].sum(axis=1), sa[:, 4], -sb[:, :3].sum(axis=1), sb[:, 4])


# ---------------------------------------------------------------------------
# outputs


def write_run(result: RunResult, out_dir=None, plots: bool | None = None) -> dict:
    cfg = result.config
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    hdr = lambda kind: io.provenance_line(kind, result.config_hash, result.seed)
    files = {}
    pss_set = {lg.cycle_index for lg in result.pss_ledgers}
    rows = []
    for lg in result.ledgers:
        comps = [lg.component(c) for c in COMPONENTS + DIAGNOSTICS]
        res = first_law_residual(lg)
        W = lg.W
        phase = classify(W.mean, comps[4].mean, comps[3].mean).value
        row = [lg.cycle_index, lg.cycle_index in pss_set]
        for e in comps:
            row += [e.mean, e.se]
        row += [res.mean, res.se, phase]
        rows.append(row)
    cols = ["cycle", "pss"] + [f"{c}{s}" for c in COMPONENTS + DIAGNOSTICS for s in ("", "_se")] + ["residual", "residual_se", "phase"]
    files["ledger"] = io.write_csv(out / "ledger.csv", hdr("ledger"), cols, rows)

    T = cfg.schedule.period
    mrows = []
    for c in range(result.history.shape[0]):
        for i, t in enumerate(result.times):
            mrows.append([c * T + float(t)] + list(result.history[c, i]) + list(result.history_se[c, i]))
    mcols = ["t"] + list(MOMENT_NAMES) + [f"{m}_se" for m in MOMENT_NAMES]
    files["moments"] = io.write_csv(out / "moments.csv", hdr("moments"), mcols, mrows)

    rep = result.report
    summary = [
        ("phase", rep.phase.value), ("converged", result.converged),
        ("pss_cycle", result.pss_cycle if result.pss_cycle is not None else -1),
        ("cycles", len(result.ledgers)), ("aborted", result.aborted), ("n_samples", cfg.n_samples),
        ("period", T), ("eta", rep.eta), ("eta_se", rep.eta_se), ("power", rep.power), ("power_se", rep.power_se),
        ("eta_ref", rep.eta_ref), ("W", rep.W.mean), ("W_se", rep.W.se),
    ]
    for c in COMPONENTS + DIAGNOSTICS:
        e = getattr(rep, c)
        summary += [(c, e.mean), (c + "_se", e.se)]
    if result.corners.size:
        v = result.corners[result._pss_cycles()].mean(axis=0)
        for i, x in enumerate("ABCD"):
            summary += [(f"q2_{x}", float(v[i, 2])), (f"qp_{x}", float(v[i, 4]))]
    files["summary"] = io.write_csv(out / "summary.csv", hdr("summary"), ["key", "value"], summary)

    if cfg.data["output"].get("dump_noise"):
        path = make_noise_path(cfg.cold, cfg.hot, len(result.ledgers) * T, cfg.dt, cfg.seed, 0, average=True)
        rows = [[k * cfg.dt, a, b] for k, (a, b) in enumerate(zip(path.values_c, path.values_h))]
        files["noise"] = io.write_csv(out / "noise.csv", hdr("noise"), ["t", "xi_c", "xi_h"], rows)
    for g, dens in result.snapshots.items():
        rows = [[float(r), float(d.real)] for r, d in zip(cfg.grid.r, dens)]
        files[f"snapshot_{g}"] = io.write_csv(out / f"snapshot_{g:08d}.csv", hdr(f"snapshot t={g * cfg.dt!r}"),
                                              ["r", "density"], rows)
    if plots if plots is not None else cfg.data["output"].get("plots"):
        t = np.array([r[0] for r in mrows])
        series = {m: (t, np.array([r[1 + i] for r in mrows])) for i, m in enumerate(MOMENT_NAMES) if i >= 2}
        files["plot"] = io.svg_lines(out / "moments.svg", series, "ensemble second moments", "t", "moment")
    return files


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    names: list
    points: list
    results: list
    tables: dict


def _point_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=int(base), spawn_key=(0x5EED, index)).generate_state(1, np.uint64)[0] >> 1)


def sweep_points(cfg: RunConfig) -> tuple[list[str], list[dict]]:
    block = dict(cfg.data.get("sweep") or {})
    common = bool(block.pop("common_noise", False))
    names = [k for k, v in block.items() if isinstance(v, list)]
    if not names:
        raise ConfigError("sweep block lists no parameters")
    pts = []
    for i, combo in enumerate(itertools.product(*(block[n] for n in names))):
        p = dict(zip(names, combo))
        p["seed"] = int(cfg.seed) if common else _point_seed(cfg.seed, i)
        pts.append(p)
    return names, pts


def sweep(cfg: RunConfig, threads: int = 1, out_dir=None, write: bool = True) -> SweepResult:
    """One run per grid point of the sweep block; failures are recorded and skipped."""
    names, pts = sweep_points(cfg)
    results = []
    for p in pts:
        try:
            res = run(cfg.replace(**p), threads=threads)
        except (RunError, ConfigError, FloatingPointError, ValueError) as exc:
            log.error("sweep point %s failed: %s", p, exc)
            res = exc
        results.append(res)
    tables = _sweep_tables(cfg, names, pts, results)
    out = SweepResult(names, pts, results, tables)
    if write:
        write_sweep(cfg, out, out_dir)
    return out


def _sweep_tables(cfg, names, pts, results) -> dict:
    rows = []
    for p, r in zip(pts, results):
        base = [p[n] for n in names] + [p["seed"]]
        if isinstance(r, Exception):
            rows.append(base + ["error"] + [math.nan] * 20 + [-1, str(r).replace(",", ";")])
            continue
        rep = r.report
        T = r.config.schedule.period
        vals = [rep.phase.value, rep.eta, rep.eta_se, rep.power, rep.power_se, -rep.W_d.mean / T, rep.W.mean, rep.W.se]
        for c in COMPONENTS + DIAGNOSTICS:
            e = getattr(rep, c)
            vals += [e.mean, e.se]
        rows.append(base + vals + [T, r.pss_cycle if r.pss_cycle is not None else -1, "ok"])
    cols = (list(names) + ["seed", "phase", "eta", "eta_se", "power", "power_se", "power_no_WI", "W", "W_se"]
            + [f"{c}{s}" for c in COMPONENTS + DIAGNOSTICS for s in ("", "_se")] + ["period", "pss_cycle", "status"])
    tables = {"sweep": (cols, rows)}
    if set(names) == {"gamma", "tau_I"}:
        gammas = sorted({p["gamma"] for p in pts})
        taus = sorted({p["tau_I"] for p in pts})
        lookup = {(p["gamma"], p["tau_I"]): r for p, r in zip(pts, results)}
        reps = [[None if isinstance(lookup[(g, t)], Exception) else lookup[(g, t)].report for t in taus] for g in gammas]
        corners = [[None if isinstance(lookup[(g, t)], Exception) else _safe_quadruple(lookup[(g, t)]) for t in taus]
                   for g in gammas]
        pd = analysis.assemble_phase_diagram(gammas, taus, reps, cfg.schedule.delta_omega, corners)
        prow = []
        for i, g in enumerate(gammas):
            for j, t in enumerate(taus):
                r = lookup[(g, t)]
                comp = [math.nan] * 5 if isinstance(r, Exception) else [getattr(r.report, c).mean for c in COMPONENTS]
                prow.append([g, t, pd.labels[i, j], pd.eta[i, j], pd.work[i, j], pd.R[i, j]] + comp)
        tables["phase_diagram"] = (["gamma", "tau_I", "phase", "eta", "W", "R"] + list(COMPONENTS), prow)
        trow = [[g, pd.boundary[i], pd.threshold[i], pd.boundary_status[i]] for i, g in enumerate(gammas)]
        tables["threshold"] = (["gamma", "tau_I_boundary", "tau_I_estimate", "status"], trow)
        tables["_diagram"] = pd
    return tables


def _safe_quadruple(r: RunResult):
    try:
        return r.variance_quadruple()
    except (ValueError, IndexError):
        return None


def write_sweep(cfg: RunConfig, sw: SweepResult, out_dir=None) -> dict:
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    h = io.provenance_line("sweep", cfg.config_hash(), int(cfg.seed))
    files = {}
    for name, tab in sw.tables.items():
        if name.startswith("_"):
            continue
        cols, rows = tab
        files[name] = io.write_csv(out / f"{name}.csv", h, cols, rows)
    if cfg.data["output"].get("plots"):
        pd = sw.tables.get("_diagram")
        if pd is not None:
            files["plot"] = io.svg_heatmap(out / "phase_diagram.svg", pd.gammas, pd.tau_Is, pd.eta.tolist(),
                                           "engine efficiency", "gamma", "tau_I")
        elif len(sw.names) == 1:
            n = sw.names[0]
            ok = [(p[n], r.report) for p, r in zip(sw.points, sw.results) if not isinstance(r, Exception)]
            x = [a for a, _ in ok]
            files["plot"] = io.svg_lines(out / "sweep.svg", {
                "eta": (x, [rep.eta for _, rep in ok]),
                "power": (x, [rep.power for _, rep in ok]),
                "Q_h": (x, [rep.Q_h.mean for _, rep in ok]),
            }, f"sweep over {n}", n, "value")
    return files


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class CrosscheckResult:
    rel_dev: np.ndarray
    abs_dev: np.ndarray
    scale: np.ndarray
    gaussian: np.ndarray
    grid: np.ndarray

    @property
    def max_rel(self) -> float:
        return float(self.rel_dev.max())


def crosscheck(cfg: RunConfig, cycles: int | None = None, samples: int | None = None) -> CrosscheckResult:
    """Propagate identical noise paths with both propagators and compare the moment traces.

    Deviation per moment is max|grid - gaussian| over time and trajectories,
    relative to the largest |gaussian| value of that moment.
    """
    if cfg.schedule.kappa != 0:
        raise ConfigError("crosscheck requires kappa = 0")
    cycles = int(cycles or cfg.data["crosscheck"]["cycles"])
    n = int(samples or cfg.data["crosscheck"]["samples"])
    sched, dt = cfg.schedule, cfg.dt
    N = sched.steps_per_cycle(dt)
    n_steps = cycles * N
    xc = sample_paths(cfg.cold, n, n_steps + 1, dt, cfg.seed, average=True) if cfg.cold.gamma > 0 else np.zeros((n, n_steps + 1))
    xh = sample_paths(cfg.hot, n, n_steps + 1, dt, cfg.seed, average=True) if cfg.hot.gamma > 0 else np.zeros((n, n_steps + 1))
    gb, rb = _GaussianBackend(cfg), _GridBackend(cfg)
    gs, rs = gb.init(n), rb.init(n)
    a, b = [], []
    for k in range(n_steps):
        c = sched.step_controls(k * dt, dt)
        gs = gb.step(gs, c, xc[:, k], xh[:, k])
        rs = rb.step(rs, c, xc[:, k], xh[:, k])
        a.append(np.array(gb.moments(gs, n)))
        b.append(np.array(rb.prop.moments_lead(rs, check=True)))
    a = np.array(a)
    b = np.array(b)
    absdev = np.abs(a - b).max(axis=(0, 2))
    scale = np.abs(a).max(axis=(0, 2))
    return CrosscheckResult(absdev / scale, absdev, scale, a, b)


def write_crosscheck(cfg: RunConfig, cc: CrosscheckResult, out_dir=None) -> Path:
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    rows = [[m, cc.abs_dev[i], cc.scale[i], cc.rel_dev[i]] for i, m in enumerate(MOMENT_NAMES)]
    return io.write_csv(out / "crosscheck.csv", io.provenance_line("crosscheck", cfg.config_hash(), int(cfg.seed)),
                        ["moment", "max_abs_dev", "scale", "rel_dev"], rows)


@dataclass
class NoiseCheck:
    label: str
    lag: float
    estimate: float
    se: float
    oracle: float

    @property
    def z(self) -> float:
        return (self.estimate - self.oracle) / self.se if self.se > 0 else (0.0 if self.estimate == self.oracle else math.inf)


def noise_selftest(cfg: RunConfig, samples: int | None = None) -> list[NoiseCheck]:
    """Sample autocorrelation of each coupled reservoir against the quadrature value."""
    block = cfg.data["noise_selftest"]
    n = int(samples or cfg.n_samples)
    dt = cfg.dt
    n_steps = int(math.ceil(block["horizon"] / dt)) + 1
    out = []
    for res in cfg.reservoirs:
        if res.gamma == 0:
            continue
        paths = sample_paths(res, n, n_steps, dt, cfg.seed)
        for lag in block["lags"]:
            k = int(round(lag / dt))
            m, se = autocorrelation_estimate(paths, k)
            out.append(NoiseCheck(res.label, k * dt, m, se, noise_correlation(res, k * dt)))
    return out


def write_noise_selftest(cfg: RunConfig, checks: list[NoiseCheck], out_dir=None) -> Path:
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    rows = [[c.label, c.lag, c.estimate, c.se, c.oracle, c.z] for c in checks]
    return io.write_csv(out / "noise_selftest.csv",
                        io.provenance_line("noise-selftest", cfg.config_hash(), int(cfg.seed)),
                        ["reservoir", "lag", "estimate", "se", "oracle", "z"], rows)
