"""Tests for aggregation strategies, federation rounds, OOD resolution,
and the trajectory diagnostics.

Clients here carry tiny Gaussian-blob datasets so whole federations run in
milliseconds.  Group structure is created by putting each group's class
centers on disjoint coordinate axes.
"""

import numpy as np
import pytest

import fedfault.federation as fed
from fedfault.clustering import ClusterAssignment, single_cluster_assignment
from fedfault.errors import (
    DegenerateInput,
    EmptyDataset,
    EmptyInput,
    ShapeError,
    ZeroVector,
)
from fedfault.federation import (
    ClientState,
    ClusterModelInfo,
    StrategyConfig,
    aggregate_by_cluster,
    build_cosine_similarity_matrix,
    build_uncertainty_matrix,
    cluster_exemplar_models,
    cosine_similarity,
    make_client_states,
    ood_resolve,
    pca_parameter_trajectories,
    run_experiment,
    run_round,
    similarity_from_uncertainty,
    weighted_average,
)
from fedfault.signal import Dataset
from fedfault.sngp import (
    SngpConfig,
    clone_model,
    dataset_variance,
    flat_parameters,
    predict,
    train_epochs,
)

DIM = 8
CONFIG = SngpConfig(
    num_classes=2, input_dim=DIM, hidden_dim=16, rff_dim=32, mc_samples=50
)


def blob_dataset(centers, n_per_class, seed, spread=0.4):
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for label, center in enumerate(centers):
        feats.append(rng.normal(center, spread, size=(n_per_class, DIM)))
        labels.append(np.full(n_per_class, label))
    return Dataset(np.concatenate(feats), np.concatenate(labels))


def group_centers(group):
    """Two class centers on axes owned by this group only."""
    c0 = np.zeros(DIM)
    c1 = np.zeros(DIM)
    c0[2 * group] = 3.0
    c1[2 * group + 1] = 3.0
    return [c0, c1]


class Record:
    def __init__(self, client_id, condition_id, train, test):
        self.client_id = client_id
        self.condition_id = condition_id
        self.train = train
        self.test = test


def make_group_clients(groups, per_group, seed=0, n_train=12, n_test=8):
    records = []
    cid = 0
    for g in range(groups):
        centers = group_centers(g)
        for _ in range(per_group):
            records.append(
                Record(
                    cid,
                    g,
                    blob_dataset(centers, n_train, seed=(seed, 10, cid)),
                    blob_dataset(centers, n_test, seed=(seed, 11, cid)),
                )
            )
            cid += 1
    return make_client_states(records, CONFIG, seed=seed, normalize_inputs=False)


# ---------------------------------------------------------------------------
# weighted_average / aggregate_by_cluster


class TestWeightedAverage:
    def test_two_point_example(self):
        out = weighted_average([np.array([0.0]), np.array([4.0])], [1.0, 3.0])
        assert out[0] == 3.0

    def test_equal_weights_is_mean(self):
        vecs = [np.random.default_rng(i).normal(size=5) for i in range(4)]
        out = weighted_average(vecs, [2.0] * 4)
        np.testing.assert_allclose(out, np.mean(vecs, axis=0), rtol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptyInput):
            weighted_average([], [])
        with pytest.raises(ShapeError):
            weighted_average([np.zeros(2)], [1.0, 2.0])
        with pytest.raises(ShapeError):
            weighted_average([np.zeros(2), np.zeros(3)], [1.0, 1.0])
        with pytest.raises(ShapeError):
            weighted_average([np.zeros(2), np.zeros(2)], [1.0, -1.0])
        with pytest.raises(ShapeError):
            weighted_average([np.zeros(2)], [0.0])


class TestAggregateByCluster:
    def test_per_cluster_means(self):
        assignment = ClusterAssignment(
            clusters=((0, 2), (1,)), exemplars=(0, 1), converged=True, iterations=1
        )
        flats = [np.array([1.0, 0.0]), np.array([5.0, 5.0]), np.array([3.0, 2.0])]
        out = aggregate_by_cluster(assignment, flats, [1.0, 1.0, 1.0], [0, 1, 2])
        np.testing.assert_allclose(out[0], [2.0, 1.0])
        np.testing.assert_allclose(out[1], [5.0, 5.0])

    def test_summation_follows_client_id_order(self):
        # same clients presented in two list orders must aggregate bit-equal
        rng = np.random.default_rng(0)
        flats = [rng.normal(size=50) for _ in range(3)]
        weights = [10.0, 20.0, 30.0]
        ids = [7, 3, 5]
        one = aggregate_by_cluster(
            single_cluster_assignment(3), flats, weights, ids
        )[0]
        perm = [2, 0, 1]
        two = aggregate_by_cluster(
            single_cluster_assignment(3),
            [flats[i] for i in perm],
            [weights[i] for i in perm],
            [ids[i] for i in perm],
        )[0]
        assert np.array_equal(one, two)


# ---------------------------------------------------------------------------
# cosine similarity


class TestCosine:
    def test_parallel_orthogonal_opposite(self):
        a = np.array([1.0, 0.0])
        assert cosine_similarity(a, 2 * a) == pytest.approx(1.0)
        assert cosine_similarity(a, np.array([0.0, 1.0])) == pytest.approx(0.0)
        assert cosine_similarity(a, -a) == pytest.approx(-1.0)

    def test_zero_vector_raises(self):
        with pytest.raises(ZeroVector):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_matrix_symmetric_and_normalized(self):
        rng = np.random.default_rng(1)
        flats = [rng.normal(size=20) for _ in range(5)]
        sim = build_cosine_similarity_matrix(flats)
        assert np.array_equal(sim, sim.T)
        assert np.all(np.diag(sim) == 1.0)
        off = sim[~np.eye(5, dtype=bool)]
        assert off.min() == 0.0 and off.max() == 1.0

    def test_identical_vectors_constant_offdiag(self):
        flats = [np.ones(10)] * 3
        sim = build_cosine_similarity_matrix(flats)
        off = sim[~np.eye(3, dtype=bool)]
        assert np.all(off == 0.0)  # constant off-diagonal maps to zeros


# ---------------------------------------------------------------------------
# uncertainty matrix


class TestUncertaintyMatrix:
    def test_identical_clients_normalize_to_zero(self):
        ds = blob_dataset(group_centers(0), 10, seed=0)
        records = [Record(i, 0, ds, ds) for i in range(4)]
        clients = make_client_states(records, CONFIG, seed=0, normalize_inputs=False)
        matrix = build_uncertainty_matrix(clients, seed=7)
        assert np.all(matrix.raw == matrix.raw[0, 0])
        assert np.all(matrix.normalized == 0.0)

    def test_columns_hit_exact_bounds(self):
        clients = make_group_clients(2, 2, seed=3)
        strategy = StrategyConfig(kind="localonly", local_only_epochs=3)
        run_round(clients, strategy)
        matrix = build_uncertainty_matrix(clients, seed=1)
        for j in range(matrix.normalized.shape[1]):
            col = matrix.normalized[:, j]
            if matrix.raw[:, j].max() > matrix.raw[:, j].min():
                assert col.min() == 0.0 and col.max() == 1.0
            else:
                assert np.all(col == 0.0)

    def test_within_group_variance_lower_than_cross(self):
        hits = 0
        for seed in range(100):
            clients = make_group_clients(2, 3, seed=seed)
            for c in clients:
                train_epochs(c.model, c.train, 3, 0.005, c.rng)
            matrix = build_uncertainty_matrix(clients, seed=seed).raw
            same = [
                matrix[i, j]
                for i in range(6)
                for j in range(6)
                if i != j and (i < 3) == (j < 3)
            ]
            cross = [
                matrix[i, j] for i in range(6) for j in range(6) if (i < 3) != (j < 3)
            ]
            if np.mean(same) < np.mean(cross):
                hits += 1
        assert hits >= 95, f"within < cross in only {hits}/100 trials"

    def test_parallel_rows_identical(self):
        clients = make_group_clients(2, 2, seed=5)
        for c in clients:
            train_epochs(c.model, c.train, 2, 0.005, c.rng)
        serial = build_uncertainty_matrix(clients, seed=2, parallel=1)
        threaded = build_uncertainty_matrix(clients, seed=2, parallel=4)
        assert np.array_equal(serial.raw, threaded.raw)

    def test_empty_train_raises(self):
        clients = make_group_clients(1, 2, seed=0)
        empty = Dataset(np.empty((0, DIM)), np.empty(0, dtype=np.int64))
        clients[0].train = empty
        with pytest.raises(EmptyDataset):
            build_uncertainty_matrix(clients)


class TestSimilarityFromUncertainty:
    def test_zero_matrix_gives_ones(self):
        assert np.all(similarity_from_uncertainty(np.zeros((3, 3))) == 1.0)

    def test_complement_identity(self):
        rng = np.random.default_rng(0)
        m = rng.uniform(size=(5, 5))
        assert np.all(similarity_from_uncertainty(m) + m == 1.0)
        assert similarity_from_uncertainty(np.array([[0.25]]))[0, 0] == 0.75

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            similarity_from_uncertainty(np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# rounds


class TestRunRound:
    def test_localonly_is_pure_local_training(self):
        clients = make_group_clients(1, 3, seed=1)
        twins = make_group_clients(1, 3, seed=1)
        strategy = StrategyConfig(kind="localonly", local_only_epochs=4)
        log = run_round(clients, strategy)
        for twin in twins:
            train_epochs(twin.model, twin.train, 4, strategy.learning_rate, twin.rng)
        for client, twin in zip(clients, twins):
            assert np.array_equal(
                flat_parameters(client.model), flat_parameters(twin.model)
            )
        assert log.assignment.clusters == ((0,), (1,), (2,))

    def test_fedavg_identical_clients_average_is_noop(self):
        ds = blob_dataset(group_centers(0), 10, seed=2)
        records = [Record(i, 0, ds, ds) for i in range(3)]
        clients = make_client_states(records, CONFIG, seed=0, normalize_inputs=False)
        # same data, same per-step rng -> identical training trajectories
        for c in clients:
            c.rng = np.random.default_rng(42)
        twins = make_client_states(records, CONFIG, seed=0, normalize_inputs=False)
        strategy = StrategyConfig(kind="fedavg", local_epochs=2)
        run_round(clients, strategy)
        train_epochs(twins[0].model, twins[0].train, 2, strategy.learning_rate,
                     np.random.default_rng(42))
        # mean of equal vectors: exact in math, rounding-limited in float
        np.testing.assert_allclose(
            flat_parameters(clients[0].model),
            flat_parameters(twins[0].model),
            rtol=1e-12,
            atol=1e-15,
        )

    def test_cluster_members_share_parameters(self):
        clients = make_group_clients(2, 3, seed=4)
        strategy = StrategyConfig(kind="fedsngp", local_epochs=2)
        log = run_round(clients, strategy, experiment_seed=4)
        for members in log.assignment.clusters:
            digests = {log.param_digests[clients[pos].client_id] for pos in members}
            assert len(digests) == 1

    def test_fedsngp_recovers_two_groups(self):
        strategy = StrategyConfig(kind="fedsngp", local_epochs=5)
        truth = {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
        hits = 0
        for seed in range(100):
            clients = make_group_clients(2, 3, seed=seed)
            for round_index in range(5):
                log = run_round(
                    clients, strategy, round_index=round_index, experiment_seed=seed
                )
            found = {
                frozenset(clients[pos].client_id for pos in members)
                for members in log.assignment.clusters
            }
            if found == truth:
                hits += 1
        assert hits >= 90, f"ground truth recovered in only {hits}/100 seeds"

    def test_client_order_invariance(self):
        clients = make_group_clients(2, 2, seed=6)
        shuffled = make_group_clients(2, 2, seed=6)
        order = [2, 0, 3, 1]
        shuffled = [shuffled[i] for i in order]
        strategy = StrategyConfig(kind="fedsngp", local_epochs=2)
        log_a = run_round(clients, strategy, experiment_seed=6)
        log_b = run_round(shuffled, strategy, experiment_seed=6)
        assert log_a.accuracies == log_b.accuracies
        assert log_a.param_digests == log_b.param_digests
        groups_a = {
            frozenset(clients[pos].client_id for pos in members)
            for members in log_a.assignment.clusters
        }
        groups_b = {
            frozenset(shuffled[pos].client_id for pos in members)
            for members in log_b.assignment.clusters
        }
        assert groups_a == groups_b

    def test_forced_single_cluster_matches_fedavg_bitwise(self):
        avg_clients = make_group_clients(2, 2, seed=7)
        sngp_clients = make_group_clients(2, 2, seed=7)
        fedavg = StrategyConfig(kind="fedavg", local_epochs=2)
        forced = StrategyConfig(kind="fedsngp", local_epochs=2, force_single_cluster=True)
        for round_index in range(3):
            log_avg = run_round(avg_clients, fedavg, round_index, experiment_seed=7)
            log_forced = run_round(sngp_clients, forced, round_index, experiment_seed=7)
            assert log_avg.param_digests == log_forced.param_digests
            assert log_avg.accuracies == log_forced.accuracies

    def test_parallel_clients_bit_identical(self):
        serial = make_group_clients(2, 2, seed=8)
        threaded = make_group_clients(2, 2, seed=8)
        strategy = StrategyConfig(kind="fedsngp", local_epochs=2)
        for round_index in range(2):
            log_s = run_round(serial, strategy, round_index, experiment_seed=8)
            log_t = run_round(
                threaded, strategy, round_index, experiment_seed=8, parallel_clients=4
            )
            assert log_s.param_digests == log_t.param_digests
            assert np.array_equal(log_s.uncertainty_raw, log_t.uncertainty_raw)

    def test_duplicate_ids_rejected(self):
        clients = make_group_clients(1, 2, seed=0)
        clients[1].client_id = clients[0].client_id
        with pytest.raises(ShapeError):
            run_round(clients, StrategyConfig(kind="fedavg"))


class TestRunExperiment:
    def test_zero_rounds_leaves_models_untrained(self):
        clients = make_group_clients(1, 2, seed=9)
        untouched = [clone_model(c.model) for c in clients]
        result = run_experiment(clients, StrategyConfig(kind="fedavg", rounds=0))
        assert result.round_logs == []
        for client, before in zip(clients, untouched):
            assert np.array_equal(
                flat_parameters(client.model), flat_parameters(before)
            )
        assert set(result.metrics) == {c.client_id for c in clients}

    def test_deterministic_reruns(self):
        logs = []
        for _ in range(2):
            clients = make_group_clients(2, 2, seed=10)
            result = run_experiment(
                clients, StrategyConfig(kind="fedsngp", rounds=3), experiment_seed=10
            )
            logs.append(result)
        for log_a, log_b in zip(logs[0].round_logs, logs[1].round_logs):
            assert log_a.param_digests == log_b.param_digests
            assert log_a.accuracies == log_b.accuracies
            assert np.array_equal(log_a.uncertainty_raw, log_b.uncertainty_raw)
        assert logs[0].mean_accuracy == logs[1].mean_accuracy

    def test_localonly_runs_one_long_pass(self):
        clients = make_group_clients(1, 2, seed=11)
        result = run_experiment(
            clients,
            StrategyConfig(kind="localonly", rounds=50, local_only_epochs=3),
        )
        assert len(result.round_logs) == 1
        assert result.round_logs[0].strategy == "localonly"


class TestPrivacyBoundary:
    def test_server_side_calls_receive_no_datasets(self, monkeypatch):
        """Structural check: aggregation and clustering see only numeric
        payloads (assignment, flat vectors, counts, ids, matrices)."""
        seen = {"aggregate": 0, "cluster": 0}

        def contains_dataset(obj, depth=0):
            if isinstance(obj, Dataset):
                return True
            if depth >= 2 or isinstance(obj, (str, bytes, np.ndarray)):
                return False
            if isinstance(obj, (list, tuple, set)):
                return any(contains_dataset(x, depth + 1) for x in obj)
            if isinstance(obj, dict):
                return any(contains_dataset(x, depth + 1) for x in obj.values())
            return False

        real_aggregate = fed.aggregate_by_cluster
        real_ap = fed.affinity_propagation

        def spy_aggregate(*args, **kwargs):
            seen["aggregate"] += 1
            assert not contains_dataset(list(args) + list(kwargs.values()))
            return real_aggregate(*args, **kwargs)

        def spy_ap(*args, **kwargs):
            seen["cluster"] += 1
            assert not contains_dataset(list(args) + list(kwargs.values()))
            return real_ap(*args, **kwargs)

        monkeypatch.setattr(fed, "aggregate_by_cluster", spy_aggregate)
        monkeypatch.setattr(fed, "affinity_propagation", spy_ap)
        clients = make_group_clients(2, 2, seed=12)
        run_round(clients, StrategyConfig(kind="fedsngp", local_epochs=1),
                  experiment_seed=12)
        assert seen["aggregate"] == 1 and seen["cluster"] == 1


# ---------------------------------------------------------------------------
# out-of-cluster resolution


def trained_client(client_id, group, seed=0, epochs=150):
    # long training saturates in-distribution confidence, which is what
    # separates own-data variance from foreign-data variance
    centers = group_centers(group)
    record = Record(
        client_id,
        group,
        blob_dataset(centers, 64, seed=(seed, 20, client_id)),
        blob_dataset(centers, 8, seed=(seed, 21, client_id)),
    )
    client = make_client_states([record], CONFIG, seed=seed, normalize_inputs=False)[0]
    train_epochs(client.model, client.train, epochs, 0.05, client.rng)
    return client


class TestOodResolve:
    def test_own_distribution_keeps_own_model(self):
        client = trained_client(0, group=0)
        fresh = blob_dataset(group_centers(0), 10, seed=99)
        decision = ood_resolve(client, fresh, cluster_models=[], seed=3)
        assert decision.status == "own"
        assert decision.chosen_id == 0
        assert decision.predictions is not None

    def test_foreign_cluster_model_selected(self):
        client = trained_client(0, group=0)
        foreign = trained_client(1, group=1)
        foreign_train_var = dataset_variance(foreign.model, foreign.train, seed=3)
        info = ClusterModelInfo(
            exemplar_id=1, model=foreign.model, train_variance=foreign_train_var
        )
        test_ds = blob_dataset(group_centers(1), 10, seed=98)
        decision = ood_resolve(client, test_ds, [info], seed=3)
        assert decision.status == "foreign"
        assert decision.chosen_id == 1
        assert decision.own_test_variance > decision.own_threshold
        acc = np.mean(decision.predictions == test_ds.labels)
        own_acc = np.mean(
            predict(client.model, test_ds.features).labels == test_ds.labels
        )
        assert acc >= own_acc

    def test_unseen_distribution_unresolved(self):
        client = trained_client(0, group=0)
        foreign = trained_client(1, group=1)
        info = ClusterModelInfo(
            exemplar_id=1,
            model=foreign.model,
            train_variance=dataset_variance(foreign.model, foreign.train, seed=3),
        )
        unseen = blob_dataset(group_centers(3), 10, seed=97)
        decision = ood_resolve(client, unseen, [info], seed=3)
        assert decision.status == "unresolved"
        assert decision.chosen_id is None
        assert decision.predictions is None
        assert set(decision.candidate_variances) == {1}

    def test_empty_test_set_raises(self):
        client = trained_client(0, group=0)
        empty = Dataset(np.empty((0, DIM)), np.empty(0, dtype=np.int64))
        with pytest.raises(EmptyDataset):
            ood_resolve(client, empty, [])


class TestClusterExemplarModels:
    def test_weighted_population_variance(self):
        clients = make_group_clients(1, 2, seed=13, n_train=10)
        clients[1].train = clients[1].train.subset(np.arange(6))
        for c in clients:
            train_epochs(c.model, c.train, 2, 0.005, c.rng)
        assignment = ClusterAssignment(
            clusters=((0, 1),), exemplars=(0,), converged=True, iterations=1
        )
        infos = cluster_exemplar_models(clients, assignment, seed=5)
        assert len(infos) == 1
        assert infos[0].exemplar_id == clients[0].client_id
        v0 = dataset_variance(clients[0].model, clients[0].train, seed=5)
        v1 = dataset_variance(clients[0].model, clients[1].train, seed=5)
        expected = (20 * v0 + 6 * v1) / 26
        assert infos[0].train_variance == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# PCA trajectories


class TestPcaTrajectories:
    def test_recovers_planar_geometry(self):
        rng = np.random.default_rng(0)
        points = rng.normal(size=(12, 2))
        points -= points.mean(axis=0)
        out = pca_parameter_trajectories(points)
        orig = np.linalg.norm(points[:, None] - points[None, :], axis=2)
        proj = np.linalg.norm(out.coords[:, None] - out.coords[None, :], axis=2)
        np.testing.assert_allclose(proj, orig, atol=1e-9)

    def test_duplicated_snapshots_project_identically(self):
        rng = np.random.default_rng(1)
        snaps = rng.normal(size=(5, 30))
        doubled = np.vstack([snaps, snaps])
        out = pca_parameter_trajectories(doubled)
        np.testing.assert_allclose(out.coords[:5], out.coords[5:], atol=1e-12)

    def test_explained_variance_matches_eigen_oracle(self):
        rng = np.random.default_rng(2)
        snaps = rng.normal(size=(10, 6)) @ np.diag([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])
        out = pca_parameter_trajectories(snaps)
        centred = snaps - snaps.mean(axis=0)
        eigvals = np.linalg.eigvalsh(centred.T @ centred)[::-1]
        oracle = eigvals[:2] / eigvals.sum()
        np.testing.assert_allclose(out.explained_variance_ratio, oracle, atol=1e-6)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(DegenerateInput):
            pca_parameter_trajectories(np.ones((4, 10)))
        with pytest.raises(ShapeError):
            pca_parameter_trajectories(np.ones((4, 1)))
        with pytest.raises(ShapeError):
            pca_parameter_trajectories(np.ones(10))

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        snaps = rng.normal(size=(8, 5))
        out = pca_parameter_trajectories(snaps)
        for row in out.components:
            assert row[np.argmax(np.abs(row))] > 0


# ---------------------------------------------------------------------------
# client construction


class TestMakeClientStates:
    def test_shared_initial_model(self):
        clients = make_group_clients(2, 2, seed=14)
        digests = {
            fed._digest(c.model) for c in clients
        }
        assert len(digests) == 1

    def test_normalization_bounds_features(self):
        ds = blob_dataset(group_centers(0), 10, seed=3)
        records = [Record(0, 0, ds, ds)]
        client = make_client_states(records, CONFIG, seed=0, normalize_inputs=True)[0]
        assert client.train.features.min() >= 0.0
        assert client.train.features.max() <= 1.0

    def test_duplicate_ids_rejected(self):
        ds = blob_dataset(group_centers(0), 6, seed=4)
        records = [Record(0, 0, ds, ds), Record(0, 0, ds, ds)]
        with pytest.raises(ShapeError):
            make_client_states(records, CONFIG, seed=0)

    def test_empty_inputs_rejected(self):
        with pytest.raises(EmptyInput):
            make_client_states([], CONFIG, seed=0)
