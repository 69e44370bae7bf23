"""Command-line runner.

    mfgprice fig1 [--seed N] [--out DIR] [--strict]
    mfgprice run CONFIG [--strict]
    mfgprice verify CONFIG [--strict]

Exit codes: 0 ok, 1 validation error, 2 numerical failure, 3 failed check
under ``--strict``.  ``MFGPRICE_OUTPUT_DIR`` overrides the config's output
directory; ``--out`` overrides both.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace

from .config import apply_env, fig1_config, load_config
from .errors import ModelValidationError, NumericalError
from .experiment import format_summary, run_experiment, write_artifacts

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _common(p):
    p.add_argument("--seed", type=int, help="experiment seed (noise and agent sample)")
    p.add_argument("--dt-sde", type=float, help="SDE time step")
    p.add_argument("--particles", type=int, help="number of agent particles")
    p.add_argument("--strict", action="store_true", help="exit 3 unless every verification check passes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads over alpha values")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="mfgprice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fig1", help="reproduce the four-alpha supply/price experiment")
    _common(p)
    p = sub.add_parser("run", help="run the pipeline for a config file")
    p.add_argument("config")
    _common(p)
    p = sub.add_parser("verify", help="run the verification suite only")
    p.add_argument("config")
    _common(p)
    return parser


def _resolve(args):
    if args.command == "fig1":
        cfg = apply_env(fig1_config(seed=42 if args.seed is None else args.seed))
    else:
        cfg = load_config(args.config)
        if args.seed is not None:
            model = cfg.model
            cfg = replace(cfg, seed=args.seed, model=replace(model, agents=replace(model.agents, seed=args.seed)))
    if args.dt_sde is not None:
        cfg = replace(cfg, dt_sde=args.dt_sde)
    if args.particles is not None:
        cfg = replace(cfg, particles=args.particles)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    from .config import config_violations

    problems = config_violations(cfg)
    if problems:
        raise ModelValidationError(problems)
    return cfg


def _report_checks(checks):
    for chk in checks:
        print(chk.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return not failed


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        from .verify import run_checks

        if args.command == "verify":
            ok = _report_checks(run_checks(cfg))
            return EXIT_OK if ok or not args.strict else EXIT_ACCEPTANCE

        t0 = time.perf_counter()
        result = run_experiment(cfg, threads=args.threads)
        elapsed = time.perf_counter() - t0
        files = write_artifacts(result, cfg.output_dir)
        print(format_summary(result))
        print(f"wrote {len(files)} files to {cfg.output_dir} ({elapsed:.1f}s)")
        if args.strict:
            ok = _report_checks(run_checks(cfg, result=result, elapsed=elapsed))
            if not ok:
                return EXIT_ACCEPTANCE
        return EXIT_OK
    except ModelValidationError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
