"""Command-line entry point: ``sln-otto {run,sweep,crosscheck,noise-selftest} <config>``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import ensemble
from .ensemble import ConfigError, RunError

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_RUN_ERROR = 3

CROSSCHECK_TOL = 1e-3
SELFTEST_Z = 3.0

log = logging.getLogger("sln_otto")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sln-otto", description="Finite-time quantum Otto engine with stochastic reservoir noise.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "propagate one configuration to a periodic steady state"),
        ("sweep", "one run per point of the [sweep] block"),
        ("crosscheck", "grid against gaussian moments on shared noise (kappa = 0)"),
        ("noise-selftest", "sampled noise autocorrelation against quadrature"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="TOML configuration file")
        s.add_argument("--seed", type=int, help="override the base seed")
        s.add_argument("--samples", type=int, help="override n_samples")
        s.add_argument("--out-dir", help="output directory (default from [output] dir)")
        s.add_argument("--propagator", choices=("gaussian", "grid"), help="override the propagator")
        s.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> ensemble.RunConfig:
    cfg = ensemble.load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["n_samples"] = args.samples
    if args.propagator is not None:
        overrides["propagator"] = args.propagator
    return cfg.replace(**overrides) if overrides else cfg


def _cmd_run(cfg, args) -> int:
    res = ensemble.run(cfg, threads=args.threads)
    files = ensemble.write_run(res, args.out_dir)
    rep = res.report
    print(f"phase={rep.phase.value} eta={rep.eta:.6g}+-{rep.eta_se:.2g} W={rep.W.mean:.6g}+-{rep.W.se:.2g} "
          f"Q_h={rep.Q_h.mean:.6g} pss_cycle={res.pss_cycle} aborted={res.aborted}")
    for path in files.values():
        print(path)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _cmd_sweep(cfg, args) -> int:
    sw = ensemble.sweep(cfg, threads=args.threads, out_dir=args.out_dir)
    failed = [r for r in sw.results if isinstance(r, Exception)]
    unconverged = [r for r in sw.results if not isinstance(r, Exception) and not r.converged]
    print(f"points={len(sw.points)} failed={len(failed)} not_converged={len(unconverged)}")
    if len(failed) == len(sw.results):
        return EXIT_RUN_ERROR
    return EXIT_NOT_CONVERGED if (failed or unconverged) else EXIT_OK


def _cmd_crosscheck(cfg, args) -> int:
    cc = ensemble.crosscheck(cfg, samples=args.samples)
    path = ensemble.write_crosscheck(cfg, cc, args.out_dir)
    print(f"max_rel_dev={cc.max_rel:.3e} tol={CROSSCHECK_TOL:g}")
    print(path)
    return EXIT_OK if cc.max_rel <= CROSSCHECK_TOL else EXIT_NOT_CONVERGED


def _cmd_selftest(cfg, args) -> int:
    checks = ensemble.noise_selftest(cfg)
    path = ensemble.write_noise_selftest(cfg, checks, args.out_dir)
    for c in checks:
        print(f"{c.label} lag={c.lag:.6g} estimate={c.estimate:.6g} se={c.se:.2g} oracle={c.oracle:.6g} z={c.z:+.2f}")
    print(path)
    return EXIT_OK if all(abs(c.z) <= SELFTEST_Z for c in checks) else EXIT_NOT_CONVERGED


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "crosscheck": _cmd_crosscheck, "noise-selftest": _cmd_selftest}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_RUN_ERROR
    try:
        cfg = _load(args)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    except (RunError, FloatingPointError, ValueError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
