"""
Command-line entry point (run from backend/):

    python cli.py repair --input data.csv --adjusted-columns age hours --group-column sex
    python cli.py baseline            # synthetic data when --input is omitted
    python cli.py tvtable --input adult.csv --group-column race --group-values White Black
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from config import LOG_LEVEL, OUTPUT_DIR
from errors import ConfigError, RepairError
from metrics import classify_projected, evaluate
from models import RunConfig, SyntheticSpec
from pipeline import (
    DEMO_SCORE,
    FLOAT_FORMAT,
    compare_methods,
    emit_outputs,
    generate_synthetic,
    ingest_csv,
    run_repair,
    run_trials,
    select_adjusted_features,
    synthetic_target,
)
from projection import SOURCE_ROW, WEIGHT, WeightedDataset, tuple_support

logger = logging.getLogger("cli")


# ---------- parser ----------
def _add_config_flags(parser: argparse.ArgumentParser):
    """RunConfig fields as kebab-case flags; unset flags leave the attribute absent."""
    add = parser.add_argument
    S = argparse.SUPPRESS
    add("--epsilon", type=float, default=S)
    add("--lambda", dest="lam", type=float, nargs="+", default=S, help="scalar or one value per target point")
    add("--iterations", type=int, default=S)
    add("--baseline-iterations", type=int, default=S)
    add("--varepsilon", type=float, default=S)
    add("--marginal-tolerance", type=float, default=S)
    add("--pairing", choices=["dykstra", "shifted"], default=S)
    add("--no-warm-start", dest="warm_start", action="store_false", default=S,
        help="start the solvers from exp(-C / epsilon) instead of annealed potentials")
    add("--adjusted-columns", nargs="+", default=S)
    add("--group-column", default=S)
    add("--label-column", default=S)
    add("--score-column", default=S)
    add("--weight-column", default=S)
    add("--group-values", nargs="+", default=S)
    add("--positive-label", default=S)
    add("--unprivileged-group", default=S)
    add("--cost-weights", choices=["unit", "reciprocal-range", "explicit"], default=S)
    add("--explicit-weights", type=float, nargs="+", default=S)
    add("--tv-threshold", type=float, default=S)
    add("--classifier-threshold", type=float, default=S)
    add("--rounding", nargs="+", default=S, metavar="COLUMN=DIGITS")
    add("--v-file", default=S)
    add("--target-file", default=S)
    add("--trials", type=int, default=S)
    add("--train-frac", type=float, default=S)
    add("--seed", type=int, default=S)
    add("--pi0", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of RunConfig values (flags take precedence)")
    common.add_argument("--input", help="CSV dataset; synthetic data is generated when omitted")
    common.add_argument("--out", default=OUTPUT_DIR, help="output directory")
    common.add_argument("--samples", type=int, default=None, help="synthetic sample count")
    common.add_argument("--log-level", default=LOG_LEVEL)
    _add_config_flags(common)

    parser = argparse.ArgumentParser(prog="cli.py", description="Group-blind repair of feature distributions")
    sub = parser.add_subparsers(dest="command", required=True)

    repair = sub.add_parser("repair", parents=[common], help="Dykstra repair (or the identity with --method none)")
    repair.add_argument("--method", choices=["dykstra", "none"], default="dykstra")
    repair.add_argument("--compare", action="store_true", help="also write the method comparison table")
    repair.set_defaults(handler=cmd_repair)

    for name in ("baseline", "barycentre"):
        p = sub.add_parser(name, parents=[common], help=f"{name} repair")
        p.set_defaults(handler=cmd_repair, method=name, compare=False)

    metrics = sub.add_parser("metrics", parents=[common], help="indices of a projected.csv file")
    metrics.add_argument("--projected", required=True)
    metrics.set_defaults(handler=cmd_metrics)

    synth = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and its target")
    synth.set_defaults(handler=cmd_synth)

    tvtable = sub.add_parser("tvtable", parents=[common], help="group-wise TV distance per column")
    tvtable.add_argument("--columns", nargs="+", default=None)
    tvtable.set_defaults(handler=cmd_tvtable)
    return parser


# ---------- config ----------
def _parse_rounding(items: List[str]) -> Dict[str, int]:
    out = {}
    for item in items:
        column, sep, digits = item.partition("=")
        if not sep:
            raise ConfigError(f"Rounding must look like COLUMN=DIGITS, got '{item}'")
        try:
            out[column] = int(digits)
        except ValueError:
            raise ConfigError(f"Rounding digits must be an integer, got '{item}'") from None
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                values.update(json.load(f))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config} is not valid JSON: {e}") from e
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    flags = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields}
    if "lam" in flags and len(flags["lam"]) == 1:
        flags["lam"] = flags["lam"][0]
    if "rounding" in flags:
        flags["rounding"] = _parse_rounding(flags["rounding"])
    values.update(flags)
    return RunConfig(**values)


def _synthetic_spec(args: argparse.Namespace, config: RunConfig) -> SyntheticSpec:
    values: Dict[str, Any] = {"seed": config.seed}
    if args.samples is not None:
        values["samples"] = args.samples
    return SyntheticSpec(**values)


def _source(args: argparse.Namespace, config: RunConfig):
    if args.input:
        return ingest_csv(args.input, config)
    return _synthetic_spec(args, config)


def _write_frame(frame: pd.DataFrame, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


# ---------- commands ----------
def cmd_repair(args: argparse.Namespace) -> int:
    config = build_config(args)
    source = _source(args, config)
    if config.trials > 1:
        per_trial, summary = run_trials(source, config, args.method)
        _write_frame(per_trial, args.out, "trials.csv")
        _write_frame(summary, args.out, "trials_summary.csv")
        print(summary.to_string(index=False))
        return 0
    result = run_repair(source, config, args.method)
    emit_outputs(result, args.out)
    if args.compare:
        table = compare_methods(source, config)
        _write_frame(table, args.out, "comparison.csv")
        print(table.to_string(index=False))
    print(json.dumps(result.report.flat()))
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    config = build_config(args)
    frame = pd.read_csv(args.projected)
    score = config.score_column or (DEMO_SCORE if DEMO_SCORE in frame.columns else None)
    data = WeightedDataset(
        frame,
        tuple(config.adjusted_columns),
        config.group_column if config.group_column in frame.columns else None,
        config.label_column if config.label_column in frame.columns else None,
        score,
    )
    predictions = classify_projected(data.frame, score, config.classifier_threshold) if score else None
    report = evaluate(data, tuple_support(data), predictions, unprivileged=config.unprivileged_group)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report.flat(), f, indent=2)
        f.write("\n")
    print(json.dumps(report.flat()))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = build_config(args)
    spec = _synthetic_spec(args, config)
    data = generate_synthetic(spec)
    target = synthetic_target(spec)
    path = _write_frame(data.frame.drop(columns=[WEIGHT, SOURCE_ROW]), args.out, "synthetic.csv")
    _write_frame(pd.DataFrame({"x": target.support.as_array()[:, 0], "probability": target.values}),
                 args.out, "target.csv")
    print(path)
    return 0


def cmd_tvtable(args: argparse.Namespace) -> int:
    config = build_config(args)
    if not args.input:
        raise ConfigError("tvtable needs --input")
    if not config.group_column:
        raise ConfigError("tvtable needs --group-column")
    frame = pd.read_csv(args.input, skipinitialspace=True)
    frame.columns = [str(c).strip() for c in frame.columns]
    if config.group_values is not None and config.group_column in frame.columns:
        frame = frame.loc[frame[config.group_column].astype(str).str.strip().isin(config.group_values)]
        frame = frame.reset_index(drop=True)
    selected, table = select_adjusted_features(frame, config.group_column, config.tv_threshold,
                                               args.columns, config.unprivileged_group)
    _write_frame(table, args.out, "tv_table.csv")
    print(table.to_string(index=False))
    print("selected:", ", ".join(selected) if selected else "(none)")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return ConfigError.exit_code
    except RepairError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
