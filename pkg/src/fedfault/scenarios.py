"""Client partition plans for the three heterogeneity scenarios, plus metrics.

A scenario assigns each client a source condition, an allowed label subset,
and a sample fraction.  Scenario 1 tests each client only on its own labels;
scenarios 2 and 3 test on a label-balanced set covering every class, and
scenario 3 additionally varies training-set sizes through the fractions.

Clients drawing the same (condition, class) pool receive disjoint slices, so
no sample is shared between clients or between anyone's train and test data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, PlanError, ShapeError
from .signal import ConditionShift, Dataset, SynthSpec, train_test_split
from .sngp import SngpModel, predict

PRESET_NAMES = ("three-group", "cwru-like", "pu-like", "isu-like")
DEFAULT_SCENARIO3_FRACTIONS = (1.0, 0.5, 0.2)


@dataclass(frozen=True)
class ClientPlan:
    """One client's slice of the world: where its data comes from, which
    fault classes it sees, and how much of its share it keeps."""

    client_id: int
    condition_id: int
    labels: tuple[int, ...]
    fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(sorted(set(self.labels))))
        if len(self.labels) == 0:
            raise PlanError(f"client {self.client_id}: label subset is empty")
        if not 0.0 < self.fraction <= 1.0:
            raise PlanError(
                f"client {self.client_id}: fraction must be in (0, 1], got {self.fraction}"
            )


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    plans: tuple[ClientPlan, ...]
    num_classes: int
    train_fraction: float = 0.8
    name: str = ""

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise PlanError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if len(self.plans) == 0:
            raise PlanError("a scenario needs at least one client plan")
        object.__setattr__(self, "plans", tuple(self.plans))
        ids = [p.client_id for p in self.plans]
        if len(set(ids)) != len(ids):
            raise PlanError(f"client ids must be unique, got {ids}")
        if not 0.0 < self.train_fraction < 1.0:
            raise PlanError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        covered = set()
        for plan in self.plans:
            if any(k < 0 or k >= self.num_classes for k in plan.labels):
                raise PlanError(
                    f"client {plan.client_id}: labels {plan.labels} outside "
                    f"0..{self.num_classes - 1}"
                )
            covered.update(plan.labels)
        if covered != set(range(self.num_classes)):
            raise PlanError(
                f"clients jointly cover labels {sorted(covered)}, expected all "
                f"of 0..{self.num_classes - 1}"
            )
        if self.scenario == 3 and len({p.fraction for p in self.plans}) < 2:
            raise PlanError("scenario 3 requires at least two distinct fractions")

    @property
    def num_clients(self) -> int:
        return len(self.plans)


@dataclass(frozen=True)
class ClientData:
    """Materialized data for one client, ready to become a ClientState."""

    client_id: int
    condition_id: int
    labels: tuple[int, ...]
    fraction: float
    train: Dataset
    test: Dataset


# tag 5 keeps these streams disjoint from the federation module's 0..3
def _split_seed(seed: int, condition_id: int) -> int:
    return int(
        np.random.SeedSequence((seed, 5, int(condition_id))).generate_state(1)[0]
    )


def _nearest_condition_with(
    pools: Mapping[int, dict[int, np.ndarray]], own: int, label: int
) -> int:
    candidates = [
        cond for cond, by_class in pools.items() if len(by_class.get(label, ())) > 0
    ]
    if not candidates:
        raise PlanError(f"no condition holds test samples of class {label}")
    return min(candidates, key=lambda cond: (abs(cond - own), cond))


def build_clients(
    full_data: Mapping[int, Dataset], spec: ScenarioSpec, seed: int = 0
) -> list[ClientData]:
    """Partition per-condition datasets into per-client train/test sets.

    Each condition is first split into train/test pools (stratified, seeded
    per condition so adding conditions does not reshuffle existing ones).
    Clients claiming the same (condition, class) then receive equal disjoint
    slices of the train pool, trimmed to round(fraction * share) samples.

    Test sets follow the scenario: scenario 1 uses the client's own labels
    only, scenarios 2 and 3 use an exactly label-balanced set over all
    classes, pulling any class its own condition lacks from the nearest
    condition by id distance.
    """
    for plan in spec.plans:
        if plan.condition_id not in full_data:
            raise PlanError(
                f"client {plan.client_id}: condition {plan.condition_id} not in data"
            )
    train_pools: dict[int, Dataset] = {}
    test_pools: dict[int, Dataset] = {}
    train_by_class: dict[int, dict[int, np.ndarray]] = {}
    test_by_class: dict[int, dict[int, np.ndarray]] = {}
    for cond in sorted(full_data):
        ds = full_data[cond]
        if len(ds) == 0:
            raise EmptyDataset(f"condition {cond} has no samples")
        train_pool, test_pool = train_test_split(
            ds, spec.train_fraction, seed=_split_seed(seed, cond)
        )
        train_pools[cond] = train_pool
        test_pools[cond] = test_pool
        train_by_class[cond] = {
            k: np.flatnonzero(train_pool.labels == k) for k in range(spec.num_classes)
        }
        test_by_class[cond] = {
            k: np.flatnonzero(test_pool.labels == k) for k in range(spec.num_classes)
        }

    # disjoint train slices per (condition, class), claimants in id order
    rows_for: dict[int, list[np.ndarray]] = {p.client_id: [] for p in spec.plans}
    for cond in sorted(train_pools):
        for label in range(spec.num_classes):
            claimants = sorted(
                (p for p in spec.plans if p.condition_id == cond and label in p.labels),
                key=lambda p: p.client_id,
            )
            if not claimants:
                continue
            pool_idx = train_by_class[cond][label]
            share = len(pool_idx) // len(claimants)
            if share < 1:
                raise PlanError(
                    f"condition {cond} class {label}: {len(pool_idx)} training "
                    f"samples cannot serve {len(claimants)} clients"
                )
            for position, plan in enumerate(claimants):
                take = max(1, int(round(plan.fraction * share)))
                start = position * share
                rows_for[plan.client_id].append(pool_idx[start : start + take])

    out = []
    for plan in sorted(spec.plans, key=lambda p: p.client_id):
        train_rows = np.concatenate(rows_for[plan.client_id])
        train = train_pools[plan.condition_id].subset(train_rows)
        if spec.scenario == 1:
            test_rows = np.concatenate(
                [test_by_class[plan.condition_id][k] for k in plan.labels]
            )
            test = test_pools[plan.condition_id].subset(test_rows)
        else:
            sources = {}
            for label in range(spec.num_classes):
                own_rows = test_by_class[plan.condition_id][label]
                if len(own_rows) > 0:
                    sources[label] = (plan.condition_id, own_rows)
                else:
                    cond = _nearest_condition_with(test_by_class, plan.condition_id, label)
                    sources[label] = (cond, test_by_class[cond][label])
            per_class = min(len(rows) for _, rows in sources.values())
            parts = [
                test_pools[cond].subset(rows[:per_class])
                for cond, rows in (sources[k] for k in range(spec.num_classes))
            ]
            test = Dataset.concatenate(parts)
        out.append(
            ClientData(
                client_id=plan.client_id,
                condition_id=plan.condition_id,
                labels=plan.labels,
                fraction=plan.fraction,
                train=train,
                test=test,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class Metrics:
    """One client's evaluation: accuracy plus a row-true/column-predicted
    confusion matrix."""

    accuracy: float
    confusion: np.ndarray
    n: int


def confusion_matrix(
    true_labels: np.ndarray, predicted: np.ndarray, num_classes: int
) -> np.ndarray:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.shape != predicted.shape or true_labels.ndim != 1:
        raise ShapeError(
            f"label arrays disagree: {true_labels.shape} vs {predicted.shape}"
        )
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (true_labels, predicted), 1)
    return out


def evaluate(model: SngpModel, test_ds: Dataset) -> Metrics:
    """Accuracy and confusion matrix of mean-field argmax predictions."""
    if len(test_ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty test set")
    num_classes = model.beta.shape[1]
    predicted = predict(model, test_ds.features).labels
    confusion = confusion_matrix(test_ds.labels, predicted, num_classes)
    accuracy = float(np.trace(confusion) / confusion.sum())
    return Metrics(accuracy=accuracy, confusion=confusion, n=len(test_ds))


# ---------------------------------------------------------------------------
# Built-in presets
#
# Synthetic analogs of the paper-style layouts.  Class templates share a
# common base peak and differ in one fault peak; conditions shift peak
# positions and scale amplitudes, giving distinct but related distributions.

_PEAKS_3CLASS = (
    ((10, 1.0), (95, 0.7)),
    ((10, 1.0), (160, 0.9)),
    ((10, 1.0), (225, 0.8)),
)
_PEAKS_4CLASS = _PEAKS_3CLASS + (((10, 1.0), (290, 0.85)),)

# Layout for the three-group preset.  Every class carries the shared peak,
# so within one condition an unseen class is only half foreign while any
# other condition's samples are foreign in every peak; that gap is what the
# cross-client variance matrix keys on.  The 40-bin condition steps slide
# shifted copies of each peak near (but not onto) foreign class bins, so a
# model trained on pooled conditions faces crowded spectra that a
# single-condition model never sees.
_PEAKS_THREE_GROUP = (
    ((30, 1.0), (95, 0.7)),
    ((30, 1.0), (160, 0.9)),
    ((30, 1.0), (230, 0.8)),
)

_PRESET_LAYOUT = {
    # name: (num_classes, class peaks, condition shifts, clients per condition)
    "three-group": (
        3,
        _PEAKS_THREE_GROUP,
        (ConditionShift(0, 1.0), ConditionShift(40, 1.15), ConditionShift(80, 0.85)),
        4,
    ),
    "cwru-like": (
        3,
        _PEAKS_3CLASS,
        (
            ConditionShift(0, 1.0),
            ConditionShift(25, 1.1),
            ConditionShift(50, 0.9),
            ConditionShift(75, 1.2),
            ConditionShift(100, 0.8),
            ConditionShift(125, 1.05),
        ),
        2,
    ),
    "pu-like": (
        3,
        _PEAKS_3CLASS,
        (
            ConditionShift(0, 1.0),
            ConditionShift(35, 1.12),
            ConditionShift(70, 0.9),
            ConditionShift(105, 1.05),
        ),
        3,
    ),
    "isu-like": (
        4,
        _PEAKS_4CLASS,
        (
            ConditionShift(0, 1.0),
            ConditionShift(30, 1.1),
            ConditionShift(60, 0.9),
            ConditionShift(90, 1.05),
        ),
        3,
    ),
}


def _cycled_pairs(num_classes: int) -> tuple[tuple[int, int], ...]:
    return tuple(
        tuple(sorted((k, (k + 1) % num_classes))) for k in range(num_classes)
    )


def preset_synth_spec(
    name: str, seed: int = 0, samples_per_class: int = 100
) -> SynthSpec:
    """Synthetic-data recipe matching a named preset layout."""
    if name not in _PRESET_LAYOUT:
        raise PlanError(f"unknown preset {name!r}, choose from {PRESET_NAMES}")
    _, peaks, shifts, _ = _PRESET_LAYOUT[name]
    return SynthSpec(
        class_peaks=peaks,
        conditions=shifts,
        samples_per_class=samples_per_class,
        seed=seed,
    )


def preset_scenario_spec(
    name: str,
    scenario: int = 2,
    fractions: Sequence[float] = DEFAULT_SCENARIO3_FRACTIONS,
) -> ScenarioSpec:
    """Named client layout in a chosen scenario variant.

    Clients are numbered from 1, grouped by condition, so in `pu-like` the
    clients holding all three labels are 1, 4, 7 and 10 (the first of each
    condition).  Scenario 3 cycles ``fractions`` across clients; the other
    scenarios use fraction 1 everywhere.
    """
    if name not in _PRESET_LAYOUT:
        raise PlanError(f"unknown preset {name!r}, choose from {PRESET_NAMES}")
    num_classes, _, shifts, per_condition = _PRESET_LAYOUT[name]
    pairs = _cycled_pairs(num_classes)
    plans = []
    client_id = 1
    for cond in range(len(shifts)):
        for position in range(per_condition):
            if name == "pu-like" and position == 0:
                labels: tuple[int, ...] = tuple(range(num_classes))
            elif name == "pu-like":
                labels = pairs[(cond + position) % len(pairs)]
            else:
                labels = pairs[(client_id - 1) % len(pairs)]
            fraction = (
                float(fractions[(client_id - 1) % len(fractions)])
                if scenario == 3
                else 1.0
            )
            plans.append(
                ClientPlan(
                    client_id=client_id,
                    condition_id=cond,
                    labels=labels,
                    fraction=fraction,
                )
            )
            client_id += 1
    return ScenarioSpec(
        scenario=scenario,
        plans=tuple(plans),
        num_classes=num_classes,
        name=f"{name}-s{scenario}",
    )


def builtin_scenario_presets(
    fractions: Sequence[float] = DEFAULT_SCENARIO3_FRACTIONS,
) -> dict[str, dict[int, ScenarioSpec]]:
    """All named presets in their scenario 1/2/3 variants."""
    return {
        name: {
            scenario: preset_scenario_spec(name, scenario, fractions)
            for scenario in (1, 2, 3)
        }
        for name in PRESET_NAMES
    }
