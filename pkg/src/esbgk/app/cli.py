"""Command line entry point: ``esbgk {run,check-hypotheses,verify,derive-constants,moments}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigurationError, ESBGKError
from ..integrator import default_dt, run
from ..scenarios import build_initial
from .config import RunConfig, dump_config, load_config
from .series import SeriesSink

log = logging.getLogger("esbgk")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "output", None):
        changes["output"] = args.output
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    grid = cfg.grid()
    F0 = build_initial(cfg.scenario, grid)
    dt = cfg.dt if cfg.dt is not None else default_dt(F0, cfg.nu)
    step_cfg = cfg.step_config(dt)
    out = Path(cfg.output)
    with SeriesSink(out) as sink:
        (out / "config.used").write_text(dump_config(cfg), encoding="utf-8")
        res = run(F0, step_cfg, cfg.nu, cfg.n_steps, sinks=(sink,), record_every=cfg.record_every,
                  snapshot_every=cfg.snapshot_every, beta=cfg.beta, workers=args.workers)
    last = res.records[-1]
    print(f"t = {last.t:.6g}  macro_dev = {last.macro_dev:.6g}  dM = {last.dM:.3g}  dE = {last.dE:.3g}")
    print(f"wrote {sink.path}")
    return EXIT_OK


def format_report(report) -> str:
    lines = []
    for key, value in report.items():
        if isinstance(value, bool):
            value = "pass" if value else "fail"
        elif isinstance(value, float):
            value = "%.17g" % value
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def cmd_check_hypotheses(args) -> int:
    from ..diagnostics import hypothesis_check

    cfg = _config(args)
    grid = cfg.grid()
    F0 = build_initial(cfg.scenario, grid)
    report = hypothesis_check(F0, cfg.nu, cfg.beta, c0_threshold=cfg.c0, eps0_threshold=cfg.eps0,
                              scenario=cfg.scenario if args.analytic else None)
    text = format_report(report)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "hypotheses.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    cfg = _config(args)
    failure = run_checks(cfg, seed=cfg.seed, samples=args.samples, workers=args.workers, echo=print)
    if failure is not None:
        print(f"FAIL {failure}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_derive_constants(args) -> int:
    from ..diagnostics import c_beta, calibrate, load_baseline

    try:
        C = c_beta(args.nu, args.beta)
    except ValueError as exc:
        raise ConfigurationError("--nu/--beta", str(exc)) from None
    print(f"C_beta = {C:.12g}")
    if args.calibrate:
        table = calibrate(seed=args.seed if args.seed is not None else 20240501, beta=args.beta)
    else:
        table = load_baseline()
        if table is None or float(table["beta"]) != args.beta:
            table = calibrate(beta=args.beta)
    print(f"wM_const = {table['wM_const']:.12g}")
    for k, v in sorted(table["corpus_max"].items()):
        print(f"corpus_max.{k} = {v:.12g}")
    for i, v in enumerate(table["lemma21_const"], 1):
        print(f"lemma21_const.{i} = {v:.12g}")
    print(f"eps0_default = {table['eps0_default']:.12g}")
    print(f"calibration.seed = {table['seed']}")
    print(f"calibration.samples = {table['n_samples']}")
    return EXIT_OK


def cmd_moments(args) -> int:
    from ..moments import compute_moments
    from .snapshot import read_snapshot

    F = read_snapshot(args.snapshot)
    m = compute_moments(F, args.nu)
    cols = ["cell", "rho", "ux", "uy", "uz", "T", "Txx", "Tyy", "Tzz", "Txy", "Txz", "Tyz", "Anu", "masked"]
    rows = [",".join(cols)]
    for i in range(m.n_cells):
        nums = [m.rho[i], *m.u[i], m.T[i], *m.theta6[i], m.Anu[i]]
        rows.append(",".join([str(i)] + ["%.17g" % x for x in nums] + [str(int(m.mask[i]))]))
    text = "\n".join(rows) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _workers(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("worker count must be positive")
    return n


def _seed(text):
    n = int(text)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esbgk", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--output", help="output directory (overrides run.output)")
        p.add_argument("--workers", type=_workers, default=None,
                       help="worker threads (default: $ESBGK_WORKERS or 1)")
        p.add_argument("--seed", type=_seed, default=None)

    p = sub.add_parser("run", help="integrate a scenario and write series.csv")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-hypotheses", help="evaluate the smallness and lower-density quantities")
    common(p)
    p.add_argument("--analytic", action="store_true",
                   help="use the analytic free-streaming oracle for separable scenarios")
    p.set_defaults(func=cmd_check_hypotheses)

    p = sub.add_parser("verify", help="run the property suite; exit 1 on the first violation")
    common(p)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("derive-constants", help="print C_beta and the calibration table")
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=8.0)
    p.add_argument("--calibrate", action="store_true", help="recompute the corpus instead of reading the baseline")
    p.add_argument("--seed", type=_seed, default=None)
    p.set_defaults(func=cmd_derive_constants)

    p = sub.add_parser("moments", help="per-cell moment table of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--output", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_moments)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ESBGKError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
