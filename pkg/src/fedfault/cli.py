"""Command-line interface.

Subcommands: `preprocess` turns raw vibration recordings into spectral
feature CSVs, `gen-data` writes synthetic per-condition datasets, `run`
executes a configured federation experiment, and `compare` joins finished
reports.  Exit codes: 0 success, 2 usage or configuration error, 3 runtime
numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .config import load_config_file, materialize_data, resolve_config
from .errors import ConfigError, FedFaultError, NumericalError, PlanError
from .federation import STRATEGY_KINDS, make_client_states, run_experiment
from .scenarios import PRESET_NAMES, build_clients, preset_synth_spec
from .signal import (
    DEFAULT_TARGET_RATE_HZ,
    DEFAULT_WINDOW,
    Dataset,
    preprocess_signal,
    read_raw_signal,
    save_dataset_csv,
    synth_generate_by_condition,
)


def _parse_labelled_path(token: str) -> tuple[str, int]:
    path, sep, label = token.rpartition(":")
    if not sep or not path:
        raise ConfigError(
            f"inputs: expected PATH:LABEL, got {token!r} (e.g. run1.csv:0)"
        )
    try:
        return path, int(label)
    except ValueError:
        raise ConfigError(f"inputs: label in {token!r} must be an integer") from None


def cmd_preprocess(args) -> int:
    if not args.inputs:
        raise ConfigError("inputs: at least one PATH:LABEL input is required")
    parts = []
    for token in args.inputs:
        path, label = _parse_labelled_path(token)
        try:
            raw = read_raw_signal(path, rate_hz=args.rate, label=label)
        except OSError as exc:
            raise ConfigError(f"inputs: cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"inputs: cannot parse {path}: {exc}") from exc
        parts.append(
            preprocess_signal(
                raw,
                target_rate_hz=args.target_rate,
                window=args.window,
                stride=args.stride,
                mode=args.mode,
            )
        )
    dataset = Dataset.concatenate(parts)
    save_dataset_csv(dataset, args.out)
    for label, count in sorted(dataset.class_counts().items()):
        print(f"label {label}: {count} windows")
    print(f"wrote {len(dataset)} rows x {dataset.features.shape[1]} features to {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    spec = preset_synth_spec(
        args.preset, seed=args.seed, samples_per_class=args.samples_per_class
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cond, ds in sorted(synth_generate_by_condition(spec).items()):
        path = out_dir / f"condition_{cond}.csv"
        save_dataset_csv(ds, path)
        print(f"condition {cond}: {len(ds)} rows -> {path}")
    return 0


def cmd_run(args) -> int:
    doc = load_config_file(args.config)
    cfg = resolve_config(
        doc,
        strategy_override=args.strategy,
        output_override=args.output,
        seed_override=args.seed,
        parallel_override=args.parallel_clients,
    )
    data = materialize_data(cfg)
    client_data = build_clients(data, cfg.scenario, seed=cfg.seed)
    clients = make_client_states(
        client_data, cfg.model, seed=cfg.seed, normalize_inputs=cfg.normalize_inputs
    )
    out_dir = Path(cfg.output_dir)
    artifacts.write_resolved_config(out_dir, cfg.resolved)
    result = run_experiment(
        clients,
        cfg.strategy,
        experiment_seed=cfg.seed,
        parallel_clients=cfg.parallel_clients,
    )
    for log in result.round_logs:
        artifacts.write_round_artifacts(out_dir, log)
    artifacts.write_report(out_dir, result)
    print(
        f"{cfg.strategy.kind}: {len(result.round_logs)} round(s), "
        f"mean accuracy {result.mean_accuracy:.4f} over {len(clients)} clients"
    )
    print(f"artifacts in {out_dir}")
    return 0


def cmd_compare(args) -> int:
    table_path, deltas_path = artifacts.write_comparison(args.out, args.reports)
    print(f"wrote {table_path} and {deltas_path}")
    for line in table_path.read_text().splitlines():
        if line.startswith("client_id") or line.startswith("mean"):
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedfault",
        description="Federated fault-diagnosis simulation with distance-aware models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser(
        "preprocess", help="raw signals -> resampled, windowed power spectra CSV"
    )
    pre.add_argument("inputs", nargs="*", metavar="PATH:LABEL",
                     help="signal files with integer labels, e.g. run1.csv:0")
    pre.add_argument("--rate", type=float, required=True,
                     help="sample rate of the input recordings in Hz")
    pre.add_argument("--target-rate", type=float, default=DEFAULT_TARGET_RATE_HZ)
    pre.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    pre.add_argument("--stride", type=int, default=None,
                     help="window step, defaults to the window length")
    pre.add_argument("--mode", choices=("magnitude", "power"), default="magnitude")
    pre.add_argument("--out", required=True, help="output dataset CSV")
    pre.set_defaults(func=cmd_preprocess)

    gen = sub.add_parser("gen-data", help="write synthetic per-condition dataset CSVs")
    gen.add_argument("--preset", choices=PRESET_NAMES, required=True)
    gen.add_argument("--samples-per-class", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser("run", help="run a configured federation experiment")
    run.add_argument("--config", required=True, help="experiment JSON config")
    run.add_argument("--strategy", choices=STRATEGY_KINDS, default=None,
                     help="override the config's strategy kind")
    run.add_argument("--output", default=None, help="override the output directory")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--parallel-clients", type=int, default=None,
                     help="client training worker count (results are identical)")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="join finished reports into one table")
    cmp_.add_argument("reports", nargs="+", help="two or more report.csv paths")
    cmp_.add_argument("--out", default=".", help="output directory")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: linear algebra: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FedFaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
