"""Command-line entry points.

Subcommands mirror the experiment modes (linear, dispersive, dns, threshold),
each driven by a JSON config file, plus verify-multipliers, which runs the
randomized weight scan and reports pass/fail against the analytic bounds.
Invalid configs exit with status 2 and a message naming the offending field.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from . import harness

_MODE_HELP = {
    "linear": "propagate the per-mode linear system and fit decay rates",
    "dispersive": "free zero-mode evolution: sup-norm decay scan",
    "dns": "nonlinear initial-value run with the standard diagnostics",
    "threshold": "bisect the stability threshold in the data size",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stratshear",
        description="Spectral laboratory for stratified shear-flow stability runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _MODE_HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--output", default=None, help="override the config's output_dir")
    v = sub.add_parser("verify-multipliers",
                       help="randomized scan of the weight bounds and Orr inequality")
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--beta", type=float, default=1.0)
    v.add_argument("--out", default=None, help="CSV path for the per-sample columns")
    return parser


def _run_mode(command: str, config_path: str, output: Optional[str]) -> int:
    try:
        config = harness.ExperimentConfig.from_file(config_path)
    except FileNotFoundError:
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return 2
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if config.mode != command:
        print(f"error: invalid config field 'mode': config says {config.mode!r} "
              f"but the {command!r} subcommand was invoked", file=sys.stderr)
        return 2
    if output is not None:
        config.output_dir = output
    try:
        summary = harness.run(config)
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    outdir = summary["output_dir"]
    print(f"wrote {os.path.join(outdir, 'series.csv')}")
    print(f"wrote {os.path.join(outdir, 'summary.json')}")
    if "verdict" in summary:
        print(f"verdict: {summary['verdict']}")
    if "eps_star" in summary:
        print(f"threshold: eps_star = {summary['eps_star']:.6g} ({summary['status']})")
    if "fit_report" in summary:
        print(harness.render_fit_report(summary["fit_report"]))
    return 0


def _run_verify(samples: int, seed: int, beta: float, out: Optional[str]) -> int:
    if out is None:
        root = harness.output_root()
        os.makedirs(root, exist_ok=True)
        out = os.path.join(root, "multiplier_scan.csv")
    else:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
    summary = harness.verify_multipliers_csv(out, n_samples=samples, seed=seed, beta=beta)
    checks = [
        ("0 < M_j <= 1", min(summary["min_M1"], summary["min_M2"], summary["min_M3"]) > 0.0
         and max(summary["max_M1"], summary["max_M2"], summary["max_M3"]) <= 1.0 + 1e-12),
        ("M3 >= floor", summary["min_M3"] >= summary["m3_floor"] - 1e-9),
        ("Orr margin >= 0", summary["min_orr_margin"] >= 0.0),
    ]
    print(f"wrote {out} ({summary['n_samples']} samples)")
    for label, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    print(f"min M3 = {summary['min_M3']:.12f} (floor {summary['m3_floor']:.12f})")
    print(f"min Orr margin = {summary['min_orr_margin']:.6e}")
    return 0 if all(ok for _, ok in checks) else 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "verify-multipliers":
        return _run_verify(args.samples, args.seed, args.beta, args.out)
    return _run_mode(args.command, args.config, args.output)


if __name__ == "__main__":
    sys.exit(main())
