"""
featshift command line

    featshift generate-data [--config FILE] [--output-dir DIR] [--force]
    featshift train         [--config FILE] [--aug KIND] [--p P] [--seed N] ...
    featshift ablate        [--config FILE] [--sweep {p,positions,batch,method}] [--jobs N] ...
    featshift analyze-shift [--config FILE] [--slot N] ...
    featshift selftest      [--seed N]

Flags override run-config fields one to one (--p is augmentor.p, --seed is
training.seed, ...); --set dotted.key=value reaches any other field. Exit
codes: 0 success, 1 validation error, 2 runtime error. Failures print a
single line starting with "error:" on stderr.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml  # type: ignore

from .config import SWEEP_NAMES, RunConfig, load_run_config, save_run_config
from .errors import ConfigValidationError, DatasetError, FeatshiftError, OutputExistsError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

LOG_LEVEL_ENV = "FEATSHIFT_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

PLOT_AXES = {
    "p": ("p", "method"),
    "positions": ("positions", "method"),
    "batch": ("batch_size", "method"),
    "method": ("method", "held_out"),
}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors share the exit-code contract"""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigValidationError(message, key="<args>")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config (.json, .yaml or .yml)")
    common.add_argument("--seed", type=int, help="training.seed")
    common.add_argument("--output-dir", help="output_dir")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="Override any dotted config key (repeatable)"
    )
    common.add_argument("--log-level", help=f"Logging level (default: ${LOG_LEVEL_ENV} or INFO)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--aug", help="augmentor.kind")
    run.add_argument("--p", type=float, help="augmentor.p")
    run.add_argument("--held-out", help="training.held_out")
    run.add_argument("--positions", help='network.insert_positions, e.g. "0,1,2" or "" for none')

    parser = _Parser(prog="featshift", description="Feature-statistics augmentation experiments")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    commands.add_parser("generate-data", parents=[common], help="Generate and export the benchmark")
    commands.add_parser("train", parents=[common, run], help="Train one model and write its RunReport")

    ablate = commands.add_parser("ablate", parents=[common, run], help="Run an ablation sweep")
    ablate.add_argument("--sweep", choices=SWEEP_NAMES, help="sweep.name")
    ablate.add_argument("--jobs", type=int, help="sweep.jobs")

    shift = commands.add_parser("analyze-shift", parents=[common, run], help="Measure feature-statistics shift")
    shift.add_argument("--slot", type=int, default=None, help="Slot to capture (default: 2)")
    shift.add_argument("--jobs", type=int, help="sweep.jobs")

    selftest = commands.add_parser("selftest", help="Run the property self-test")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.add_argument("--log-level", help=f"Logging level (default: ${LOG_LEVEL_ENV} or INFO)")
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ConfigValidationError(f"unknown log level '{name}'", key="--log-level")
    logging.basicConfig(level=numeric, format=LOG_FORMAT)


# -----------------------------------------------------------------------------
# config resolution
# -----------------------------------------------------------------------------


def parse_positions(text: str) -> List[int]:
    """Slot list from "0,1,2"; "" or "none" is the empty set"""
    text = text.strip()
    if text.lower() in ("", "none", "{}"):
        return []
    try:
        return [int(part) for part in text.strip("{}").split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigValidationError(f"expected comma-separated slots, got '{text}'", key="network.insert_positions") from exc


def parse_set(items: Sequence[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigValidationError(f"expected KEY=VALUE, got '{item}'", key="--set")
        try:
            overrides[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigValidationError(f"cannot parse value '{raw}'", key=key.strip()) from exc
    return overrides


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted-path overrides for the flags that were given"""
    mapping = {
        "seed": "training.seed",
        "output_dir": "output_dir",
        "aug": "augmentor.kind",
        "p": "augmentor.p",
        "held_out": "training.held_out",
        "sweep": "sweep.name",
        "jobs": "sweep.jobs",
    }
    overrides = {path: getattr(args, flag) for flag, path in mapping.items() if getattr(args, flag, None) is not None}
    if getattr(args, "positions", None) is not None:
        overrides["network.insert_positions"] = parse_positions(args.positions)
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults), then --set, then the dedicated flags"""
    config = load_run_config(args.config) if args.config else RunConfig().validate()
    overrides = parse_set(args.set)
    overrides.update(flag_overrides(args))
    return config.apply_overrides(overrides) if overrides else config


def run_directory(config: RunConfig, command: str, force: bool = False, stamp: Optional[str] = None) -> Path:
    """
    <output_dir>/<command>-<hash8>-<timestamp>, created empty

    The timestamp has microsecond resolution. A non-empty directory of the
    same name gets a -2, -3, ... suffix instead, unless force reuses it.
    """
    stamp = stamp or datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    base = Path(config.output_dir) / f"{command}-{config.config_hash()[:8]}-{stamp}"
    path, attempt = base, 1
    while path.exists() and any(path.iterdir()) and not force:
        attempt += 1
        path = base.with_name(f"{base.name}-{attempt}")
    path.mkdir(parents=True, exist_ok=True)
    save_run_config(config, path / "config.json")
    return path


def _write_json(data: Any, path: Path) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    return path


# -----------------------------------------------------------------------------
# commands
# -----------------------------------------------------------------------------


def cmd_generate_data(args: argparse.Namespace) -> int:
    """
    Generate the benchmark and export it

    The target directory is <output_dir>/dataset-<hash8> with the hash taken
    over the manifest, so regenerating the same dataset collides unless
    --force is given.
    """
    from .data import build_benchmark, export_dataset

    config = resolve_config(args)
    manifest = config.to_manifest()
    digest = hashlib.sha256(json.dumps(manifest.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()
    out_dir = Path(config.output_dir) / f"dataset-{digest[:8]}"
    if (out_dir / "manifest.json").exists() and not args.force:
        raise OutputExistsError(f"{out_dir} exists; pass --force to overwrite")
    path = export_dataset(build_benchmark(manifest), manifest, out_dir, force=args.force)
    print(path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .net import save_checkpoint
    from .train import train_model

    config = resolve_config(args)
    out_dir = run_directory(config, "train", args.force)
    params, report = train_model(config.to_train_config())
    report.to_json(out_dir / "report.json")
    _write_json(report.metrics(), out_dir / "metrics.json")
    save_checkpoint(params, out_dir / "params.bin")
    logger.info(f"[CLI] Train outputs in {out_dir}")
    print(out_dir / "report.json")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    from .analyze import emit_plot_data
    from .train import paired_gap, sweep_batch, sweep_method, sweep_p, sweep_positions

    config = resolve_config(args)
    out_dir = run_directory(config, f"ablate-{config.sweep.name}", args.force)
    base = config.to_train_config()
    sweep = config.sweep
    options = {"seeds": sweep.seeds, "held_outs": sweep.held_outs, "jobs": sweep.jobs}
    runners = {"p": sweep_p, "positions": sweep_positions, "batch": sweep_batch, "method": sweep_method}
    result = runners[sweep.name](base, sweep.resolved_values(), **options)

    result.to_csv(out_dir / "runs.csv")
    result.to_json(out_dir / "runs.json")
    if result.filter_successful():
        x, group = PLOT_AXES[sweep.name]
        emit_plot_data(result, out_dir / "plot.csv", x=x, group=group)
        _write_json(paired_gap(result), out_dir / "gaps.json")
    failed = len(result.filter_failed())
    logger.info(f"[CLI] Sweep '{sweep.name}' outputs in {out_dir} ({failed} failed)")
    print(out_dir / "runs.csv")
    return EXIT_RUNTIME if failed == len(result) else EXIT_OK


def cmd_analyze_shift(args: argparse.Namespace) -> int:
    """Train a baseline and an augmented model per seed, then compare their statistics shift"""
    from dataclasses import replace

    from .analyze import DEFAULT_SLOT, compare_shift, emit_shift_data, measure_shift
    from .augment import AugmentorConfig
    from .data import leave_one_out
    from .train import resolve_dataset, train_model

    config = resolve_config(args)
    slot = DEFAULT_SLOT if args.slot is None else args.slot
    out_dir = run_directory(config, "analyze-shift", args.force)
    base = config.to_train_config()
    method = base.aug if base.aug.kind != "Identity" else replace(base.aug, kind="DSU")
    models = [("baseline", AugmentorConfig(kind="Identity")), (method.kind, method)]
    manifest, benchmark = resolve_dataset(base.dataset)

    reports = []
    for seed in config.sweep.seeds or [base.seed]:
        split = leave_one_out(benchmark, base.held_out, seed)
        for tag, aug in models:
            params, _ = train_model(replace(base, aug=aug, seed=seed))
            reports.append(
                measure_shift(
                    params, split.train, split.test, slot=slot, model_tag=tag, seed=seed, class_names=manifest.classes
                )
            )
    _write_json([r.to_dict() for r in reports], out_dir / "shift_reports.json")
    emit_shift_data(reports, out_dir / "shift.csv")
    summary = compare_shift(reports)
    summary.to_csv(out_dir / "shift_summary.csv", index=False, float_format="%.9g")
    logger.info(f"[CLI] Shift analysis outputs in {out_dir}")
    print(out_dir / "shift_summary.csv")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest

    report = run_selftest(seed=args.seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"error: selftest failed: {', '.join(report.failures())}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"selftest passed in {report.seconds:.1f}s")
    return EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "analyze-shift": cmd_analyze_shift,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the featshift console script

    Returns:
        Process exit code (0 success, 1 validation error, 2 runtime error)
    """
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        return COMMANDS[args.command](args)
    except (ConfigValidationError, DatasetError, OutputExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FeatshiftError, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        logger.debug("[CLI] Command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
