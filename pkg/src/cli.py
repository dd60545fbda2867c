"""Command-line entry point: ``gfx-lab <sub-command> [options]``.

Every sub-command validates its configuration, runs its checks and writes a
JSON report (and, with ``--format csv``, CSV tables) to the output
directory. Exit codes: 0 all checks passed, 1 a check failed, 2 the
configuration was rejected, 3 a sampler or numerical routine failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from .acceptance import DEFAULT_LEVELS, CheckOutcome, run_command, verdict
from .bridges import HorizonError
from .config import ConfigError, LabConfig, RunConfig, validate_seed
from .cumulant import DivergenceError, KappaResult, NotARootError, export_kappa_csv
from .excursion import export_slices_csv
from .gfengine import InsufficientDepthError, NodeBudgetError, TruncationError, export_tree_ndjson
from .halfspace import export_spine_csv
from .logger_config import get_logger, log_structured, setup_logging
from .reports import build_report, write_csv, write_json

logger = get_logger(__name__)

EXIT_PASSED = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_RUNTIME_ERRORS = (
    HorizonError,
    NodeBudgetError,
    InsufficientDepthError,
    TruncationError,
    NotARootError,
    DivergenceError,
)

SUBCOMMAND_HELP = {
    "verify-martingale": "Sliced excursion mass has mean |x|^d at every level.",
    "verify-spine": "Exact spine marginal is isotropic Cauchy.",
    "verify-spine-stable": "Stable spine marginal matches its characteristic function.",
    "verify-bismut": "Bismut heights are uniform and the two legs independent.",
    "verify-many-to-one": "Excursion and half-space sides of the many-to-one formula agree.",
    "verify-hitting": "Weighted hitting-time moments match the Bessel(3) moments.",
    "verify-gf": "Genealogical martingale and the fixed-time many-to-one identity.",
    "verify-spine-gf": "Spine log-size is Levy with exponent kappa(omega + q).",
    "verify-sum-kappa": "Summed jump powers over a cell's life match 1 - kappa/psi.",
    "kappa": "Tabulate kappa, find its roots and check the stable jump integral.",
    "verify-all": "Run every check at its default size.",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Lab configuration file (JSON).")
    parser.add_argument("--seed", help="Base seed (decimal or 0x-prefixed hex).")
    parser.add_argument("--threads", type=int, help="Worker threads for replicate ensembles.")
    parser.add_argument("--output", help="Directory for reports and exports.")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--n", dest="N", type=int, help="Ensemble size.")
    parser.add_argument("--d", type=int, default=3, help="Half-space dimension.")
    parser.add_argument("--alpha", type=float, default=1.2)
    parser.add_argument("--x", type=float, nargs="+", help="Endpoint in R^(d-1).")
    parser.add_argument("--a", dest="levels", type=float, nargs="+", help="Level(s).")
    parser.add_argument("--omega", type=float)
    parser.add_argument("--steps", type=int, default=16_384)
    parser.add_argument("--size-floor", type=float, default=1e-3)
    parser.add_argument("--eps-floor", type=float, default=1e-4)
    parser.add_argument("--max-gen", type=int, default=4)
    parser.add_argument("--amax", dest="a_max", type=float, default=1.0)
    parser.add_argument("--variant", choices=("toy", "stable"), default="toy")
    parser.add_argument("--lambda", dest="lam", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=0.5)
    parser.add_argument("--drift", type=float, default=0.25)
    parser.add_argument("--bracket", type=float, nargs=2, default=(0.5, 10.0))
    parser.add_argument("--window", type=float, nargs=2)
    parser.add_argument("--spec", dest="spec_file", help="Flat key = value Levy-system file.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfx-lab",
        description="Simulation and verification lab for spatial growth-fragmentations.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name, text in SUBCOMMAND_HELP.items():
        _add_common(subparsers.add_parser(name, help=text, description=text))
    return parser


def run_config_from_args(args: argparse.Namespace, lab: LabConfig) -> RunConfig:
    """Merges command-line options over the lab configuration."""
    d = args.d
    x = tuple(args.x) if args.x else (1.0,) + (0.0,) * (d - 2)
    levels = tuple(args.levels) if args.levels else DEFAULT_LEVELS.get(args.subcommand, (0.3, 0.6))
    try:
        seed = validate_seed(args.seed) if args.seed is not None else lab.seed
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        subcommand=args.subcommand,
        d=d,
        alpha=args.alpha,
        x=x,
        levels=levels,
        omega=args.omega,
        N=args.N,
        steps=args.steps,
        seed=seed,
        size_floor=args.size_floor,
        eps_floor=args.eps_floor,
        max_gen=args.max_gen,
        a_max=args.a_max,
        variant=args.variant,
        lam=args.lam,
        beta=args.beta,
        drift=args.drift,
        bracket=tuple(args.bracket),
        window=tuple(args.window) if args.window else None,
        spec_file=args.spec_file,
        output=args.output or lab.output_dir,
        format=args.format,
        threads=args.threads if args.threads is not None else lab.threads,
    )


def _summary_rows(outcomes: Sequence[CheckOutcome]) -> list[list[Any]]:
    rows: list[list[Any]] = []
    for outcome in outcomes:
        for result in outcome.results:
            payload = result.to_dict()
            if "statistic" in payload:
                rows.append([outcome.name, payload["name"], "test", payload["statistic"], payload["threshold"], payload["passed"], outcome.superseded])
            else:
                rows.append([outcome.name, "", "estimate", payload["estimate"], payload["std_error"], "", outcome.superseded])
    return rows


def _export_artifacts(directory: Path, outcomes: Sequence[CheckOutcome]) -> list[Path]:
    """Slices, spine samples and cell trees carried by the final attempt of each check."""
    written: list[Path] = []
    for outcome in outcomes:
        if outcome.superseded:
            continue
        artifacts = outcome.artifacts
        if "slices" in artifacts:
            written.append(
                export_slices_csv(directory / f"{outcome.name}_slices.csv", artifacts["slices"], artifacts["d"])
            )
        if "spine" in artifacts:
            level, samples = artifacts["spine"]
            written.append(export_spine_csv(directory / f"{outcome.name}_spine.csv", level, samples))
        if "tree" in artifacts:
            path = directory / f"{outcome.name}_tree.ndjson"
            export_tree_ndjson(artifacts["tree"], path)
            written.append(path)
    return written


def write_outputs(cfg: RunConfig, outcomes: Sequence[CheckOutcome], report: dict[str, Any]) -> list[Path]:
    directory = Path(cfg.output)
    written = [write_json(directory / f"{cfg.subcommand}.json", report)]
    if cfg.format == "csv":
        header = ["check", "test", "kind", "value", "threshold_or_se", "passed", "superseded"]
        written.append(write_csv(directory / f"{cfg.subcommand}.csv", header, _summary_rows(outcomes)))
        for outcome in outcomes:
            table = outcome.details.get("table")
            if isinstance(table, KappaResult):
                written.append(export_kappa_csv(directory / "kappa_table.csv", table))
        written += _export_artifacts(directory, outcomes)
    return written


def _error_document(exc: BaseException) -> dict[str, Any]:
    return {"type": type(exc).__name__, "message": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    lab = LabConfig(args.config) if args.config else LabConfig()
    setup_logging(
        level=lab.log_level_number,
        use_json=lab.log_json,
        log_file=Path(lab.log_file) if lab.log_file else None,
    )
    for warning in lab.warnings:
        logger.warning(warning)

    output = Path(args.output or lab.output_dir)
    try:
        if lab.last_error is not None:
            raise lab.last_error
        cfg = run_config_from_args(args, lab).validate()
    except ConfigError as exc:
        logger.error("Configuration rejected: %s", exc)
        write_json(
            output / f"{args.subcommand}.json",
            build_report(args.subcommand, {"argv": list(argv or sys.argv[1:])}, [], False, _error_document(exc)),
        )
        return EXIT_CONFIG

    log_structured(logger, logging.INFO, "Starting run", command=cfg.subcommand, seed=cfg.seed, threads=cfg.threads)
    started = time.perf_counter()
    try:
        outcomes = run_command(cfg)
    except (*_RUNTIME_ERRORS, ValueError) as exc:
        logger.error("Run failed: %s", exc, exc_info=True)
        write_json(
            output / f"{cfg.subcommand}.json",
            build_report(cfg.subcommand, cfg.as_dict(), [], False, _error_document(exc)),
        )
        return EXIT_RUNTIME

    passed = verdict(outcomes)
    report = build_report(cfg.subcommand, cfg.as_dict(), outcomes, passed)
    report["elapsed_seconds"] = time.perf_counter() - started
    for path in write_outputs(cfg, outcomes, report):
        logger.info("Wrote %s", path)
    log_structured(logger, logging.INFO, "Run finished", command=cfg.subcommand, passed=passed)
    return EXIT_PASSED if passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
