"""Tests for scenario partitioning, presets, and evaluation metrics."""

import numpy as np
import pytest

from fedfault.errors import PlanError, ShapeError
from fedfault.scenarios import (
    PRESET_NAMES,
    ClientPlan,
    ScenarioSpec,
    build_clients,
    builtin_scenario_presets,
    confusion_matrix,
    evaluate,
    preset_scenario_spec,
    preset_synth_spec,
)
from fedfault.signal import Dataset, synth_generate_by_condition
from fedfault.sngp import SngpConfig, init_model, train_epochs


def small_condition_data(num_conditions=2, num_classes=3, n=30, seed=0):
    """Random per-condition datasets with class-dependent shifts."""
    rng = np.random.default_rng(seed)
    out = {}
    for cond in range(num_conditions):
        feats, labels = [], []
        for k in range(num_classes):
            feats.append(rng.normal(k + 0.1 * cond, 0.3, size=(n, 6)))
            labels.append(np.full(n, k))
        out[cond] = Dataset(np.concatenate(feats), np.concatenate(labels))
    return out


def two_client_spec(scenario=1, labels=((0, 1), (1, 2)), fractions=(1.0, 1.0)):
    return ScenarioSpec(
        scenario=scenario,
        plans=(
            ClientPlan(0, 0, labels[0], fractions[0]),
            ClientPlan(1, 1, labels[1], fractions[1]),
        ),
        num_classes=3,
    )


class TestSpecValidation:
    def test_empty_labels_rejected(self):
        with pytest.raises(PlanError):
            ClientPlan(0, 0, ())

    def test_bad_fraction_rejected(self):
        with pytest.raises(PlanError):
            ClientPlan(0, 0, (0,), fraction=0.0)
        with pytest.raises(PlanError):
            ClientPlan(0, 0, (0,), fraction=1.5)

    def test_bad_scenario_rejected(self):
        with pytest.raises(PlanError):
            ScenarioSpec(scenario=4, plans=(ClientPlan(0, 0, (0,)),), num_classes=1)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(PlanError):
            ScenarioSpec(
                scenario=1,
                plans=(ClientPlan(0, 0, (0,)), ClientPlan(0, 1, (0,))),
                num_classes=1,
            )

    def test_label_out_of_range_rejected(self):
        with pytest.raises(PlanError):
            ScenarioSpec(
                scenario=1, plans=(ClientPlan(0, 0, (0, 3)),), num_classes=3
            )

    def test_uncovered_label_rejected(self):
        with pytest.raises(PlanError):
            ScenarioSpec(
                scenario=1,
                plans=(ClientPlan(0, 0, (0, 1)),),
                num_classes=3,
            )

    def test_scenario3_needs_distinct_fractions(self):
        with pytest.raises(PlanError):
            two_client_spec(scenario=3, labels=((0, 1), (1, 2)), fractions=(0.5, 0.5))


class TestBuildClients:
    def test_scenario1_test_restricted_to_own_labels(self):
        data = small_condition_data()
        clients = build_clients(data, two_client_spec(scenario=1), seed=0)
        assert set(np.unique(clients[0].test.labels)) == {0, 1}
        assert set(np.unique(clients[0].train.labels)) == {0, 1}
        assert set(np.unique(clients[1].test.labels)) == {1, 2}

    def test_scenario2_test_balanced_over_all_classes(self):
        data = small_condition_data()
        clients = build_clients(data, two_client_spec(scenario=2), seed=0)
        for client in clients:
            counts = np.bincount(client.test.labels, minlength=3)
            assert counts.min() == counts.max() > 0
            assert set(np.unique(client.train.labels)) == set(client.labels)

    def test_scenario3_fraction_ratio(self):
        data = small_condition_data(num_conditions=1, n=50)
        spec = ScenarioSpec(
            scenario=3,
            plans=(
                ClientPlan(0, 0, (0, 1, 2), 1.0),
                ClientPlan(1, 0, (0, 1, 2), 0.2),
            ),
            num_classes=3,
        )
        clients = build_clients(data, spec, seed=1)
        big, small = len(clients[0].train), len(clients[1].train)
        # shares are 20 per class: 20 vs round(4) -> 5:1 within rounding slack
        assert abs(big - 5 * small) <= 3 * 5

    def test_same_pool_clients_are_disjoint(self):
        data = small_condition_data(num_conditions=1, n=40)
        spec = ScenarioSpec(
            scenario=2,
            plans=(
                ClientPlan(0, 0, (0, 1, 2)),
                ClientPlan(1, 0, (0, 1, 2)),
            ),
            num_classes=3,
        )
        clients = build_clients(data, spec, seed=2)
        rows_a = {row.tobytes() for row in clients[0].train.features}
        rows_b = {row.tobytes() for row in clients[1].train.features}
        assert not rows_a & rows_b

    def test_no_train_test_overlap(self):
        data = small_condition_data()
        for scenario in (1, 2):
            for client in build_clients(data, two_client_spec(scenario), seed=3):
                train_rows = {row.tobytes() for row in client.train.features}
                test_rows = {row.tobytes() for row in client.test.features}
                assert not train_rows & test_rows

    def test_deterministic(self):
        data = small_condition_data()
        one = build_clients(data, two_client_spec(2), seed=4)
        two = build_clients(data, two_client_spec(2), seed=4)
        for a, b in zip(one, two):
            assert np.array_equal(a.train.features, b.train.features)
            assert np.array_equal(a.test.features, b.test.features)

    def test_missing_condition_rejected(self):
        data = small_condition_data(num_conditions=1)
        with pytest.raises(PlanError):
            build_clients(data, two_client_spec(1), seed=0)

    def test_label_absent_from_condition_rejected(self):
        data = small_condition_data(num_conditions=2)
        # strip class 2 from condition 1 entirely
        ds = data[1]
        keep = np.flatnonzero(ds.labels != 2)
        data[1] = ds.subset(keep)
        with pytest.raises(PlanError):
            build_clients(data, two_client_spec(1), seed=0)

    def test_balanced_test_pulls_missing_class_from_nearest_condition(self):
        data = small_condition_data(num_conditions=2)
        ds = data[0]
        data[0] = ds.subset(np.flatnonzero(ds.labels != 2))
        spec = ScenarioSpec(
            scenario=2,
            plans=(
                ClientPlan(0, 0, (0, 1)),
                ClientPlan(1, 1, (0, 1, 2)),
            ),
            num_classes=3,
        )
        clients = build_clients(data, spec, seed=5)
        counts = np.bincount(clients[0].test.labels, minlength=3)
        assert counts.min() == counts.max() > 0
        # class-2 rows must come from condition 1's pool
        donor_rows = {row.tobytes() for row in clients[1].test.features}
        own_class2 = clients[0].test.features[clients[0].test.labels == 2]
        # they were drawn from condition 1 data, which is disjoint from cond 0
        all_cond1 = {row.tobytes() for row in data[1].features}
        assert all(row.tobytes() in all_cond1 for row in own_class2)


class TestMetrics:
    def test_perfect_predictor(self):
        # tiny separable problem trained to saturation
        rng = np.random.default_rng(0)
        feats = np.concatenate(
            [rng.normal(-2, 0.2, (20, 4)), rng.normal(2, 0.2, (20, 4))]
        )
        labels = np.array([0] * 20 + [1] * 20)
        ds = Dataset(feats, labels)
        config = SngpConfig(num_classes=2, input_dim=4, hidden_dim=8, rff_dim=16)
        model = init_model(config, seed=0)
        train_epochs(model, ds, 60, 0.05, rng=1)
        metrics = evaluate(model, ds)
        assert metrics.accuracy == 1.0
        assert np.array_equal(metrics.confusion, np.diag([20, 20]))

    def test_uniform_model_on_balanced_test(self):
        # beta = 0 predicts class 0 everywhere -> 1/3 on balanced 3-class data
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(30, 4)), np.repeat([0, 1, 2], 10))
        config = SngpConfig(num_classes=3, input_dim=4, hidden_dim=8, rff_dim=16)
        model = init_model(config, seed=0)
        metrics = evaluate(model, ds)
        assert metrics.accuracy == pytest.approx(1 / 3)
        assert metrics.confusion[:, 0].sum() == 30

    def test_accuracy_is_trace_over_total(self):
        rng = np.random.default_rng(2)
        true = rng.integers(0, 4, size=200)
        pred = rng.integers(0, 4, size=200)
        confusion = confusion_matrix(true, pred, 4)
        assert confusion.sum() == 200
        assert np.trace(confusion) == np.sum(true == pred)
        np.testing.assert_array_equal(
            confusion.sum(axis=1), np.bincount(true, minlength=4)
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            confusion_matrix(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)


class TestPresets:
    def test_pu_like_three_label_clients(self):
        spec = preset_scenario_spec("pu-like", scenario=2)
        three_label = [p.client_id for p in spec.plans if len(p.labels) == 3]
        assert three_label == [1, 4, 7, 10]
        assert spec.num_clients == 12

    def test_cwru_like_layout(self):
        spec = preset_scenario_spec("cwru-like", scenario=1)
        assert spec.num_clients == 12
        assert len({p.condition_id for p in spec.plans}) == 6
        assert all(len(p.labels) == 2 for p in spec.plans)

    def test_isu_like_has_four_classes(self):
        spec = preset_scenario_spec("isu-like", scenario=2)
        assert spec.num_classes == 4
        assert len({p.condition_id for p in spec.plans}) == 4

    def test_all_presets_cover_all_labels(self):
        presets = builtin_scenario_presets()
        assert set(presets) == set(PRESET_NAMES)
        for name, variants in presets.items():
            for scenario, spec in variants.items():
                covered = set()
                for plan in spec.plans:
                    covered.update(plan.labels)
                assert covered == set(range(spec.num_classes)), (name, scenario)

    def test_scenario3_size_ratio_at_least_four(self):
        spec = preset_scenario_spec("three-group", scenario=3)
        synth = preset_synth_spec("three-group", seed=0)
        data = synth_generate_by_condition(synth)
        clients = build_clients(data, spec, seed=0)
        sizes = [len(c.train) for c in clients]
        assert max(sizes) / min(sizes) >= 4.0 - 1e-9

    def test_preset_builds_run_end_to_end(self):
        for name in PRESET_NAMES:
            spec = preset_scenario_spec(name, scenario=2)
            synth = preset_synth_spec(name, seed=1, samples_per_class=40)
            data = synth_generate_by_condition(synth)
            clients = build_clients(data, spec, seed=1)
            assert len(clients) == 12
            for client in clients:
                assert len(client.train) > 0
                counts = np.bincount(client.test.labels, minlength=spec.num_classes)
                assert counts.min() == counts.max() > 0

    def test_unknown_preset_rejected(self):
        with pytest.raises(PlanError):
            preset_scenario_spec("mystery")
        with pytest.raises(PlanError):
            preset_synth_spec("mystery")
