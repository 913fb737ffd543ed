"""Run artifacts: round logs, final reports, and strategy comparisons.

Everything is written deterministically (sorted keys, explicit newlines,
shortest-round-trip float formatting), so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .federation import ExperimentResult, RoundLog

REPORT_COLUMNS = ("client_id", "strategy", "accuracy", "n_train", "n_test")


def _fmt(value) -> str:
    return repr(float(value))


def _write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    lines = [",".join(_fmt(v) for v in row) for row in matrix]
    path.write_text("\n".join(lines) + "\n")


def write_round_artifacts(out_dir: str | Path, log: RoundLog) -> None:
    """One JSON document per round plus CSV dumps of any matrices."""
    rounds_dir = Path(out_dir) / "rounds"
    rounds_dir.mkdir(parents=True, exist_ok=True)
    ids = log.client_ids
    doc = {
        "round": log.round_index,
        "strategy": log.strategy,
        "client_ids": list(ids),
        "clusters": [
            sorted(ids[pos] for pos in members) for members in log.assignment.clusters
        ],
        "exemplars": [ids[pos] for pos in log.assignment.exemplars],
        "converged": log.assignment.converged,
        "iterations": log.assignment.iterations,
        "accuracies": {str(cid): log.accuracies[cid] for cid in ids},
        "param_digests": {str(cid): log.param_digests[cid] for cid in ids},
    }
    path = rounds_dir / f"round_{log.round_index}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if log.uncertainty is not None:
        _write_matrix_csv(rounds_dir / f"round_{log.round_index}_MU.csv", log.uncertainty)
    if log.similarity is not None:
        _write_matrix_csv(
            rounds_dir / f"round_{log.round_index}_MSim.csv", log.similarity
        )


def write_report(out_dir: str | Path, result: ExperimentResult) -> Path:
    """`report.csv` (one row per client) and per-client confusion matrices."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for cid in sorted(result.client_ids):
            writer.writerow(
                [
                    cid,
                    result.strategy.kind,
                    _fmt(result.metrics[cid].accuracy),
                    result.n_train[cid],
                    result.n_test[cid],
                ]
            )
    confusion = {
        str(cid): result.metrics[cid].confusion.tolist()
        for cid in sorted(result.client_ids)
    }
    (out_dir / "report_confusion.json").write_text(
        json.dumps(confusion, indent=2, sort_keys=True) + "\n"
    )
    return path


def write_resolved_config(out_dir: str | Path, resolved: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_resolved.json"
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return path


def read_report(path: str | Path) -> tuple[str, dict[int, float]]:
    """Load a report.csv; returns (strategy, client accuracies)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"report: file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_COLUMNS:
            raise ConfigError(
                f"report: {path} has columns {header}, expected {list(REPORT_COLUMNS)}"
            )
        strategies = set()
        accuracies: dict[int, float] = {}
        for row in reader:
            if len(row) != len(REPORT_COLUMNS):
                raise ConfigError(f"report: malformed row in {path}: {row}")
            cid = int(row[0])
            if cid in accuracies:
                raise ConfigError(f"report: duplicate client {cid} in {path}")
            strategies.add(row[1])
            accuracies[cid] = float(row[2])
    if not accuracies:
        raise ConfigError(f"report: {path} holds no client rows")
    if len(strategies) != 1:
        raise ConfigError(f"report: {path} mixes strategies {sorted(strategies)}")
    return strategies.pop(), accuracies


def write_comparison(
    out_dir: str | Path, report_paths: Sequence[str | Path]
) -> tuple[Path, Path]:
    """Join reports into per-client and mean accuracy tables plus deltas.

    Column names reuse each report's strategy, suffixed `_2`, `_3`, ... when
    several reports share one.  `comparison_deltas.csv` holds every pair's
    mean difference (second minus first, in argument order).
    """
    if len(report_paths) < 2:
        raise ConfigError("compare: need at least two reports")
    loaded = [read_report(p) for p in report_paths]
    base_ids = sorted(loaded[0][1])
    for path, (_, accs) in zip(report_paths[1:], loaded[1:]):
        if sorted(accs) != base_ids:
            raise ConfigError(
                f"compare: client ids in {path} do not match {report_paths[0]}"
            )
    names = []
    seen: dict[str, int] = {}
    for strategy, _ in loaded:
        seen[strategy] = seen.get(strategy, 0) + 1
        names.append(strategy if seen[strategy] == 1 else f"{strategy}_{seen[strategy]}")
    means = [float(np.mean(list(accs.values()))) for _, accs in loaded]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "comparison.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", *names])
        for cid in base_ids:
            writer.writerow([cid, *[_fmt(accs[cid]) for _, accs in loaded]])
        writer.writerow(["mean", *[_fmt(m) for m in means]])

    deltas_path = out_dir / "comparison_deltas.csv"
    with open(deltas_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy_a", "strategy_b", "mean_a", "mean_b", "delta"])
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                writer.writerow(
                    [
                        names[i],
                        names[j],
                        _fmt(means[i]),
                        _fmt(means[j]),
                        _fmt(means[j] - means[i]),
                    ]
                )
    return table_path, deltas_path
