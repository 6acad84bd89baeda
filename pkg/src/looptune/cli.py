"""Command line interface: run experiments, render reports, probe the loop."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .control import ControllerTheta
from .runner import (RunnerError, SUMMARY_SCHEMA, run_experiment, run_step_test,
                     write_artifacts, write_historian_archive)


def _cmd_run(args) -> int:
    exp = load_config(args.config)
    records = run_experiment(exp)
    summary = write_artifacts(exp, records)
    print(f"{exp.instance}: {exp.n_runs} runs -> validity {summary.validity:.2f}, "
          f"mean tests {summary.iters:.1f}, mean LOF {summary.lof:.3f}")
    print(f"artifacts written to {exp.output_dir}")
    return 0


def _read_summary(path: Path):
    if not path.is_file():
        raise RunnerError(f"summary file not found: {path}")
    lines = path.read_text().splitlines()
    if len(lines) < 3:
        raise RunnerError(f"summary file {path} is empty or truncated")
    schema = lines[0].lstrip("# ").strip()
    if schema != SUMMARY_SCHEMA:
        raise RunnerError(f"unknown summary schema {schema!r} in {path}")
    header = lines[0 + 1].split(",")
    rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
    if not rows:
        raise RunnerError(f"summary file {path} has no data rows")
    return header, rows


def _cmd_report(args) -> int:
    outdir = Path(args.dir)
    header, rows = _read_summary(outdir / "summary.csv")
    ncomp = len(header) - 4
    comp_hdr = "  ".join(f"{h:>8s}" for h in header[4:])
    print(f"{'instance':<10s} {'Val.':>6s} {'LOF':>6s} {'iters':>6s}  {comp_hdr}")
    for row in rows:
        name, validity, lof, iters = row[:4]
        deltas = "  ".join(f"{float(v):+8.4f}" for v in row[4:4 + ncomp])
        print(f"{name:<10s} {float(validity):6.2f} {float(lof):6.2f} "
              f"{float(iters):6.1f}  {deltas}")
    if not args.no_figures:
        from .figures import render_all
        for p in render_all(outdir):
            print(f"figure written: {p}")
    return 0


def _cmd_historian(args) -> int:
    exp = load_config(args.config)
    out = write_historian_archive(exp)
    print(f"historian archive written to {out}")
    return 0


def _cmd_step_test(args) -> int:
    exp = load_config(args.config)
    values = [float(tok) for tok in args.theta.replace(",", " ").split()]
    theta = ControllerTheta.from_vector(np.array(values))
    noise_free = True if args.noise_free else None
    label, m, _ = run_step_test(exp, theta, noise_free=noise_free, seed=args.seed)

    def show(v, unit=""):
        return "undefined" if v is None else f"{v:.4f}{unit}"

    print(f"theta      : {values}")
    print(f"e_ss       : {show(m.e_ss)}")
    print(f"t_rise     : {show(m.t_rise, ' s')}")
    print(f"t_settle   : {show(m.t_settle, ' s')}")
    print(f"overshoot  : {show(m.overshoot, ' %')}")
    print(f"label      : {'pass' if label == 1 else 'fail'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="looptune",
        description="Minimal-change PID retuning for a simulated compressor "
                    "pressure loop, driven by historian data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte-Carlo retuning experiment")
    p_run.add_argument("config", help="INI experiment file")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="print the summary table and render figures")
    p_rep.add_argument("dir", help="experiment output directory")
    p_rep.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    p_rep.set_defaults(func=_cmd_report)

    p_hist = sub.add_parser("historian", help="generate only the historian archive")
    p_hist.add_argument("config", help="INI experiment file")
    p_hist.set_defaults(func=_cmd_historian)

    p_step = sub.add_parser("step-test", help="run one labeled closed-loop step test")
    p_step.add_argument("config", help="INI experiment file")
    p_step.add_argument("--theta", required=True,
                        help="comma-separated controller parameters (4 or 8)")
    p_step.add_argument("--noise-free", action="store_true",
                        help="disable measurement noise")
    p_step.add_argument("--seed", type=int, default=0, help="noise seed")
    p_step.set_defaults(func=_cmd_step_test)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RunnerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
