"""Experiment configuration: a single JSON document, strictly validated.

Every diagnostic names the offending field by its dotted path, unknown keys
are rejected, and all defaults are materialized into a resolved document so
a finished run can be reproduced bit-exactly from `config_resolved.json`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .clustering import ApConfig
from .errors import ConfigError, PlanError, ShapeError
from .federation import STRATEGY_KINDS, StrategyConfig
from .scenarios import (
    PRESET_NAMES,
    ClientPlan,
    ScenarioSpec,
    preset_scenario_spec,
    preset_synth_spec,
)
from .signal import ConditionShift, Dataset, SynthSpec, load_condition_datasets
from .sngp import SngpConfig


def _require_mapping(value, path: str) -> Mapping:
    if not isinstance(value, Mapping):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(doc: Mapping, allowed, path: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field")


def _get(doc: Mapping, key: str, kind, default, path: str):
    if key not in doc:
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        raise ConfigError(
            f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _build_synth(doc: Mapping, master_seed: int) -> SynthSpec:
    path = "data.synth"
    doc = _require_mapping(doc, path)
    allowed = {
        "preset",
        "class_peaks",
        "conditions",
        "samples_per_class",
        "noise_sigma",
        "peak_width",
        "feature_dim",
        "seed",
    }
    _reject_unknown(doc, allowed, path)
    seed = _get(doc, "seed", int, master_seed, path)
    samples = _get(doc, "samples_per_class", int, 100, path)
    if "preset" in doc:
        if "class_peaks" in doc or "conditions" in doc:
            raise ConfigError(
                f"{path}.preset: cannot combine a preset with explicit peaks/conditions"
            )
        name = _get(doc, "preset", str, None, path)
        if name not in PRESET_NAMES:
            raise ConfigError(
                f"{path}.preset: unknown preset {name!r}, choose from {PRESET_NAMES}"
            )
        base = preset_synth_spec(name, seed=seed, samples_per_class=samples)
        return SynthSpec(
            class_peaks=base.class_peaks,
            conditions=base.conditions,
            samples_per_class=samples,
            noise_sigma=_get(doc, "noise_sigma", float, base.noise_sigma, path),
            peak_width=_get(doc, "peak_width", float, base.peak_width, path),
            feature_dim=_get(doc, "feature_dim", int, base.feature_dim, path),
            seed=seed,
        )
    if "class_peaks" not in doc or "conditions" not in doc:
        raise ConfigError(
            f"{path}: needs either a preset or explicit class_peaks and conditions"
        )
    try:
        peaks = tuple(
            tuple((int(b), float(a)) for b, a in per_class)
            for per_class in doc["class_peaks"]
        )
        conditions = tuple(
            ConditionShift(int(off), float(scale)) for off, scale in doc["conditions"]
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.class_peaks: malformed entry ({exc})") from exc
    try:
        return SynthSpec(
            class_peaks=peaks,
            conditions=conditions,
            samples_per_class=samples,
            noise_sigma=_get(doc, "noise_sigma", float, 0.05, path),
            peak_width=_get(doc, "peak_width", float, 1.5, path),
            feature_dim=_get(doc, "feature_dim", int, 512, path),
            seed=seed,
        )
    except ShapeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_files(doc: Mapping) -> dict[int, str]:
    path = "data.files"
    doc = _require_mapping(doc, path)
    if not doc:
        raise ConfigError(f"{path}: needs at least one condition file")
    out = {}
    for key, value in doc.items():
        try:
            cond = int(key)
        except ValueError:
            raise ConfigError(f"{path}.{key}: condition ids must be integers")
        if not isinstance(value, str):
            raise ConfigError(f"{path}.{key}: expected a file path string")
        out[cond] = value
    return out


def _build_scenario(doc: Mapping) -> ScenarioSpec:
    path = "scenario"
    doc = _require_mapping(doc, path)
    allowed = {"preset", "scenario", "fractions", "num_classes", "plans", "train_fraction"}
    _reject_unknown(doc, allowed, path)
    scenario = _get(doc, "scenario", int, 2, path)
    if "preset" in doc:
        if "plans" in doc or "num_classes" in doc:
            raise ConfigError(
                f"{path}.preset: cannot combine a preset with explicit plans"
            )
        name = _get(doc, "preset", str, None, path)
        if name not in PRESET_NAMES:
            raise ConfigError(
                f"{path}.preset: unknown preset {name!r}, choose from {PRESET_NAMES}"
            )
        fractions = doc.get("fractions", [1.0, 0.5, 0.2])
        if not isinstance(fractions, list) or not all(
            isinstance(f, (int, float)) and not isinstance(f, bool) for f in fractions
        ):
            raise ConfigError(f"{path}.fractions: expected a list of numbers")
        try:
            return preset_scenario_spec(
                name, scenario=scenario, fractions=[float(f) for f in fractions]
            )
        except PlanError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if "plans" not in doc or "num_classes" not in doc:
        raise ConfigError(f"{path}: needs either a preset or explicit plans and num_classes")
    plans = doc["plans"]
    if not isinstance(plans, list):
        raise ConfigError(f"{path}.plans: expected a list")
    built = []
    for index, entry in enumerate(plans):
        entry_path = f"{path}.plans[{index}]"
        entry = _require_mapping(entry, entry_path)
        _reject_unknown(entry, {"client_id", "condition_id", "labels", "fraction"}, entry_path)
        for field_name in ("client_id", "condition_id", "labels"):
            if field_name not in entry:
                raise ConfigError(f"{entry_path}.{field_name}: required field missing")
        labels = entry["labels"]
        if not isinstance(labels, list) or not all(isinstance(k, int) for k in labels):
            raise ConfigError(f"{entry_path}.labels: expected a list of integers")
        try:
            built.append(
                ClientPlan(
                    client_id=_get(entry, "client_id", int, None, entry_path),
                    condition_id=_get(entry, "condition_id", int, None, entry_path),
                    labels=tuple(labels),
                    fraction=_get(entry, "fraction", float, 1.0, entry_path),
                )
            )
        except PlanError as exc:
            raise ConfigError(f"{entry_path}: {exc}") from exc
    try:
        return ScenarioSpec(
            scenario=scenario,
            plans=tuple(built),
            num_classes=_get(doc, "num_classes", int, None, path),
            train_fraction=_get(doc, "train_fraction", float, 0.8, path),
        )
    except PlanError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_strategy(doc: Mapping) -> StrategyConfig:
    path = "strategy"
    doc = _require_mapping(doc, path)
    allowed = {
        "kind",
        "rounds",
        "local_epochs",
        "learning_rate",
        "local_only_epochs",
        "ood_threshold_factor",
        "force_single_cluster",
        "ap",
    }
    _reject_unknown(doc, allowed, path)
    kind = _get(doc, "kind", str, "fedsngp", path)
    if kind not in STRATEGY_KINDS:
        raise ConfigError(
            f"{path}.kind: unknown strategy {kind!r}, choose from {STRATEGY_KINDS}"
        )
    ap_doc = _require_mapping(doc.get("ap", {}), f"{path}.ap")
    _reject_unknown(
        ap_doc,
        {"damping", "max_iterations", "convergence_iterations", "preference"},
        f"{path}.ap",
    )
    preference = ap_doc.get("preference", "median")
    if not isinstance(preference, str):
        preference = _get(ap_doc, "preference", float, "median", f"{path}.ap")
    elif preference != "median":
        raise ConfigError(
            f'{path}.ap.preference: expected a number or "median", got {preference!r}'
        )
    try:
        ap = ApConfig(
            damping=_get(ap_doc, "damping", float, 0.7, f"{path}.ap"),
            max_iterations=_get(ap_doc, "max_iterations", int, 500, f"{path}.ap"),
            convergence_iterations=_get(
                ap_doc, "convergence_iterations", int, 30, f"{path}.ap"
            ),
            preference=preference,
        )
    except ShapeError as exc:
        raise ConfigError(f"{path}.ap: {exc}") from exc
    try:
        return StrategyConfig(
            kind=kind,
            rounds=_get(doc, "rounds", int, 50, path),
            local_epochs=_get(doc, "local_epochs", int, 5, path),
            learning_rate=_get(doc, "learning_rate", float, 0.005, path),
            local_only_epochs=_get(doc, "local_only_epochs", int, 250, path),
            ap=ap,
            ood_threshold_factor=_get(doc, "ood_threshold_factor", float, 10.0, path),
            force_single_cluster=_get(doc, "force_single_cluster", bool, False, path),
        )
    except ShapeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_model(doc: Mapping, num_classes: int) -> SngpConfig:
    path = "model"
    doc = _require_mapping(doc, path)
    allowed = {
        "num_classes",
        "input_dim",
        "hidden_dim",
        "num_blocks",
        "rff_dim",
        "spectral_bound",
        "batch_size",
        "mc_samples",
        "mean_field_factor",
    }
    _reject_unknown(doc, allowed, path)
    stated = _get(doc, "num_classes", int, num_classes, path)
    if stated != num_classes:
        raise ConfigError(
            f"{path}.num_classes: {stated} disagrees with the scenario's {num_classes}"
        )
    try:
        return SngpConfig(
            num_classes=num_classes,
            input_dim=_get(doc, "input_dim", int, 512, path),
            hidden_dim=_get(doc, "hidden_dim", int, 64, path),
            num_blocks=_get(doc, "num_blocks", int, 3, path),
            rff_dim=_get(doc, "rff_dim", int, 256, path),
            spectral_bound=_get(doc, "spectral_bound", float, 0.95, path),
            batch_size=_get(doc, "batch_size", int, 64, path),
            mc_samples=_get(doc, "mc_samples", int, 100, path),
            mean_field_factor=_get(doc, "mean_field_factor", float, math.pi / 8, path),
        )
    except ShapeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description.

    ``resolved`` is the JSON-serializable document with every default made
    explicit; rerunning from it reproduces the run bit-exactly.
    """

    seed: int
    output_dir: str
    normalize_inputs: bool
    parallel_clients: int
    data_kind: str
    synth: SynthSpec | None
    files: dict[int, str] | None
    scenario: ScenarioSpec
    strategy: StrategyConfig
    model: SngpConfig
    resolved: dict


def _resolved_document(cfg: ExperimentConfig) -> dict:
    if cfg.data_kind == "synth":
        data = {
            "synth": {
                "class_peaks": [
                    [[b, a] for b, a in per_class] for per_class in cfg.synth.class_peaks
                ],
                "conditions": [
                    [c.bin_offset, c.amplitude_scale] for c in cfg.synth.conditions
                ],
                "samples_per_class": cfg.synth.samples_per_class,
                "noise_sigma": cfg.synth.noise_sigma,
                "peak_width": cfg.synth.peak_width,
                "feature_dim": cfg.synth.feature_dim,
                "seed": cfg.synth.seed,
            }
        }
    else:
        data = {"files": {str(k): v for k, v in sorted(cfg.files.items())}}
    ap = cfg.strategy.ap
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "normalize_inputs": cfg.normalize_inputs,
        "parallel_clients": cfg.parallel_clients,
        "data": data,
        "scenario": {
            "scenario": cfg.scenario.scenario,
            "num_classes": cfg.scenario.num_classes,
            "train_fraction": cfg.scenario.train_fraction,
            "plans": [
                {
                    "client_id": p.client_id,
                    "condition_id": p.condition_id,
                    "labels": list(p.labels),
                    "fraction": p.fraction,
                }
                for p in cfg.scenario.plans
            ],
        },
        "strategy": {
            "kind": cfg.strategy.kind,
            "rounds": cfg.strategy.rounds,
            "local_epochs": cfg.strategy.local_epochs,
            "learning_rate": cfg.strategy.learning_rate,
            "local_only_epochs": cfg.strategy.local_only_epochs,
            "ood_threshold_factor": cfg.strategy.ood_threshold_factor,
            "force_single_cluster": cfg.strategy.force_single_cluster,
            "ap": {
                "damping": ap.damping,
                "max_iterations": ap.max_iterations,
                "convergence_iterations": ap.convergence_iterations,
                "preference": ap.preference,
            },
        },
        "model": {
            "num_classes": cfg.model.num_classes,
            "input_dim": cfg.model.input_dim,
            "hidden_dim": cfg.model.hidden_dim,
            "num_blocks": cfg.model.num_blocks,
            "rff_dim": cfg.model.rff_dim,
            "spectral_bound": cfg.model.spectral_bound,
            "batch_size": cfg.model.batch_size,
            "mc_samples": cfg.model.mc_samples,
            "mean_field_factor": cfg.model.mean_field_factor,
        },
    }


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    return doc


def resolve_config(
    doc: Mapping,
    strategy_override: str | None = None,
    output_override: str | None = None,
    seed_override: int | None = None,
    parallel_override: int | None = None,
) -> ExperimentConfig:
    """Validate a raw config document and materialize every default."""
    doc = _require_mapping(doc, "config")
    _reject_unknown(
        doc,
        {
            "seed",
            "output_dir",
            "normalize_inputs",
            "parallel_clients",
            "data",
            "scenario",
            "strategy",
            "model",
        },
        "config",
    )
    seed = seed_override if seed_override is not None else _get(doc, "seed", int, 0, "config")
    output_dir = (
        output_override
        if output_override is not None
        else _get(doc, "output_dir", str, "", "config")
    )
    if not output_dir:
        raise ConfigError("config.output_dir: required (or pass --output)")
    parallel = (
        parallel_override
        if parallel_override is not None
        else _get(doc, "parallel_clients", int, 1, "config")
    )
    if parallel < 1:
        raise ConfigError("config.parallel_clients: must be at least 1")

    if "data" not in doc:
        raise ConfigError("config.data: required field missing")
    data_doc = _require_mapping(doc["data"], "data")
    _reject_unknown(data_doc, {"synth", "files"}, "data")
    if ("synth" in data_doc) == ("files" in data_doc):
        raise ConfigError("data: exactly one of data.synth or data.files is required")
    synth = files = None
    if "synth" in data_doc:
        data_kind = "synth"
        synth = _build_synth(data_doc["synth"], seed)
    else:
        data_kind = "files"
        files = _build_files(data_doc["files"])

    if "scenario" not in doc:
        raise ConfigError("config.scenario: required field missing")
    scenario = _build_scenario(doc["scenario"])

    strategy_doc = dict(_require_mapping(doc.get("strategy", {}), "strategy"))
    if strategy_override is not None:
        strategy_doc["kind"] = strategy_override
    strategy = _build_strategy(strategy_doc)

    model = _build_model(doc.get("model", {}), scenario.num_classes)

    cfg = ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        normalize_inputs=_get(doc, "normalize_inputs", bool, True, "config"),
        parallel_clients=parallel,
        data_kind=data_kind,
        synth=synth,
        files=files,
        scenario=scenario,
        strategy=strategy,
        model=model,
        resolved={},
    )
    cfg.resolved = _resolved_document(cfg)
    return cfg


def materialize_data(cfg: ExperimentConfig) -> dict[int, Dataset]:
    """Produce the per-condition datasets the config describes."""
    from .signal import synth_generate_by_condition

    if cfg.data_kind == "synth":
        data = synth_generate_by_condition(cfg.synth)
    else:
        missing = [p for p in cfg.files.values() if not Path(p).exists()]
        if missing:
            raise ConfigError(f"data.files: missing file(s): {missing}")
        data = load_condition_datasets(cfg.files)
    dims = {ds.features.shape[1] for ds in data.values()}
    if len(dims) > 1:
        raise ConfigError(f"data: conditions disagree on feature dim: {sorted(dims)}")
    dim = dims.pop()
    if dim != cfg.model.input_dim:
        raise ConfigError(
            f"model.input_dim: {cfg.model.input_dim} does not match the data's {dim}"
        )
    labels = set()
    for ds in data.values():
        labels.update(ds.label_set)
    if not labels <= set(range(cfg.scenario.num_classes)):
        raise ConfigError(
            f"scenario.num_classes: data holds labels {sorted(labels)}, outside "
            f"0..{cfg.scenario.num_classes - 1}"
        )
    return data
