"""Command-line entry point: ``entropy-gain <experiment> [--config FILE] [--out DIR]``.

Exit status is 0 when every fitted limit is within tolerance, 1 when one is
not, and 2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import DEFAULTS, RUNNERS, ConfigError, parse_filter, run
from .lti import jensen_log_integral, make_tf
from .toeplitz import OverflowBudgetError, conv_matrix, spectra_to_csv, svd_spectrum

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = tuple(RUNNERS) + ("jensen",)

log = logging.getLogger("entropy_gain")


def _setup_logging() -> None:
    level = os.environ.get("ENTROPY_GAIN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _complex_list(values) -> list[complex]:
    return [complex(v.replace(" ", "")) for v in values]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropy-gain", description="Entropy-gain experiments for LTI filters.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=(RUNNERS[name].__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", type=Path, help="JSON config (defaults are used when omitted)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory for report.json and records.csv")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--unit", choices=("nats", "bits"), default="nats")
    j = sub.add_parser("jensen", help="average of log|G| over the unit circle")
    j.add_argument("--zeros", nargs="*", default=[], help="zeros, e.g. -2 or 0.5+0.3j")
    j.add_argument("--poles", nargs="*", default=[])
    j.add_argument("--gain", type=float, default=1.0)
    j.add_argument("--points", type=int, default=1 << 16)
    j.add_argument("--unit", choices=("nats", "bits"), default="nats")
    return parser


def _load_config(path: Path | None, experiment: str) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULTS[experiment]))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if cfg.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {cfg['experiment']!r}, not {experiment!r}")
    return cfg


def _jensen(args) -> int:
    zeros, poles = _complex_list(args.zeros), _complex_list(args.poles)
    # origin poles make the filter causal and leave log|G| on the circle unchanged
    poles += [0j] * max(0, len(zeros) - len(poles))
    tf = make_tf(zeros, poles, args.gain)
    value = jensen_log_integral(tf, args.points).value
    if args.unit == "bits":
        value /= np.log(2.0)
    print(f"{value:.6f}")
    return EXIT_PASS


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "jensen":
            return _jensen(args)
        cfg = _load_config(args.config, args.command)
        if args.seed is not None:
            cfg["seed"] = args.seed
        report = run(args.command, cfg, max(1, args.workers))
    except (ConfigError, OverflowBudgetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json(args.unit), encoding="utf-8")
    with open(args.out / "records.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv(args.unit))
    if report.experiment == "spectrum":
        tf = parse_filter(report.config["filter"])
        spectra = [svd_spectrum(conv_matrix(tf, int(n))) for n in report.grid()]
        with open(args.out / "spectra.csv", "w", encoding="utf-8", newline="") as fh:
            spectra_to_csv(spectra, fh)
    log.info("wall time %.3f s", report.wall_time)
    status = "PASS" if report.passed else "FAIL"
    scale = 1.0 if args.unit == "nats" else 1.0 / np.log(2.0)
    print(
        f"{report.experiment}: fitted {report.fitted_limit * scale:.6f} target {report.target * scale:.6f} "
        f"tol {report.tolerance * scale:.3g} {args.unit} -> {status}"
    )
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
