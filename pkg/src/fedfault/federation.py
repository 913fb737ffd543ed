"""Federated training loop, aggregation strategies, and client clustering.

One round: every client trains locally, the chosen strategy groups clients
into clusters, each cluster's flat parameter vectors are averaged weighted
by training-set size, the result is written back to every member, and each
client rebuilds its Laplace precision on its own data.

Privacy boundary: raw datasets never leave their client.  Everything the
server-side steps (clustering and aggregation) consume is numeric summaries:
flat parameter vectors, sample counts, and the variance matrix whose rows
each client computed locally by evaluating the shared models on its own
training data.  ``aggregate_by_cluster`` is that server step and accepts
nothing else.

Strategies:
  localonly  train locally, never aggregate
  fedavg     one global weighted average
  fedcos     cluster by cosine similarity of parameters, average per cluster
  fedsngp    cluster by uncertainty-derived similarity, average per cluster
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .clustering import (
    ApConfig,
    ClusterAssignment,
    affinity_propagation,
    single_cluster_assignment,
    singleton_assignment,
)
from .errors import (
    DegenerateInput,
    EmptyDataset,
    EmptyInput,
    ShapeError,
    ZeroVector,
)
from .signal import Dataset, apply_feature_scale, fit_feature_scale
from .sngp import (
    SngpConfig,
    SngpModel,
    clone_model,
    dataset_variance,
    flat_parameters,
    init_model,
    predict,
    recompute_precision,
    set_flat_parameters,
    train_epochs,
)

STRATEGY_KINDS = ("localonly", "fedavg", "fedcos", "fedsngp")

# seed-stream tags: every random stream hangs off (experiment_seed, tag, ...)
_STREAM_INIT = 0
_STREAM_TRAIN = 1
_STREAM_UNCERTAINTY = 2
_STREAM_OOD = 3


@dataclass(frozen=True)
class StrategyConfig:
    """What to run each round and how to aggregate."""

    kind: str
    rounds: int = 50
    local_epochs: int = 5
    learning_rate: float = 0.005
    local_only_epochs: int = 250
    ap: ApConfig = ApConfig()
    ood_threshold_factor: float = 10.0
    force_single_cluster: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ShapeError(
                f"kind must be one of {STRATEGY_KINDS}, got {self.kind!r}"
            )
        if self.rounds < 0:
            raise ShapeError(f"rounds must be non-negative, got {self.rounds}")
        if self.local_epochs < 1 or self.local_only_epochs < 1:
            raise ShapeError("epoch counts must be positive")
        if not self.learning_rate > 0:
            raise ShapeError("learning_rate must be positive")
        if not self.ood_threshold_factor > 0:
            raise ShapeError("ood_threshold_factor must be positive")


@dataclass
class ClientState:
    """One simulated client: private data, its model, and its RNG stream."""

    client_id: int
    train: Dataset
    test: Dataset
    model: SngpModel
    rng: np.random.Generator
    condition_id: int | None = None

    @property
    def n_train(self) -> int:
        return len(self.train)


@dataclass
class RoundLog:
    """Everything observable about one federation round."""

    round_index: int
    strategy: str
    client_ids: tuple[int, ...]
    assignment: ClusterAssignment
    accuracies: dict[int, float]
    param_digests: dict[int, str]
    uncertainty_raw: np.ndarray | None = None
    uncertainty: np.ndarray | None = None
    similarity: np.ndarray | None = None


def _train_seed(experiment_seed: int, client_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((experiment_seed, _STREAM_TRAIN, client_id))


def _round_eval_seed(experiment_seed: int, round_index: int) -> int:
    ss = np.random.SeedSequence((experiment_seed, _STREAM_UNCERTAINTY, round_index))
    return int(ss.generate_state(1)[0])


def make_client_states(
    client_datasets: Sequence,
    model_config: SngpConfig,
    seed: int = 0,
    normalize_inputs: bool = True,
) -> list[ClientState]:
    """Turn (client_id, condition_id, train, test) records into live clients.

    Every client starts from the same initial model (cloned), which is what
    makes parameter-similarity comparisons across clients meaningful.  Each
    client then owns an independent RNG stream keyed by its id, so results
    do not depend on list order or on how clients are scheduled.
    Optionally min-max scales features to [0, 1] using each client's own
    training statistics.
    """
    if len(client_datasets) == 0:
        raise EmptyInput("need at least one client")
    ids = [c.client_id for c in client_datasets]
    if len(set(ids)) != len(ids):
        raise ShapeError(f"client ids must be unique, got {ids}")
    base = init_model(model_config, seed=np.random.SeedSequence((seed, _STREAM_INIT)).generate_state(1)[0])
    clients = []
    for record in client_datasets:
        train, test = record.train, record.test
        if len(train) == 0:
            raise EmptyDataset(f"client {record.client_id} has no training data")
        if len(test) == 0:
            raise EmptyDataset(f"client {record.client_id} has no test data")
        if normalize_inputs:
            scale = fit_feature_scale(train)
            train = apply_feature_scale(train, scale)
            test = apply_feature_scale(test, scale)
        clients.append(
            ClientState(
                client_id=record.client_id,
                train=train,
                test=test,
                model=clone_model(base),
                rng=np.random.default_rng(_train_seed(seed, record.client_id)),
                condition_id=getattr(record, "condition_id", None),
            )
        )
    return clients


# ---------------------------------------------------------------------------
# Aggregation primitives


def weighted_average(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """sum_i w_i v_i / sum_i w_i over flat parameter vectors."""
    if len(vectors) == 0:
        raise EmptyInput("weighted_average needs at least one vector")
    if len(weights) != len(vectors):
        raise ShapeError(
            f"{len(weights)} weights for {len(vectors)} vectors"
        )
    total = float(sum(weights))
    if not total > 0:
        raise ShapeError(f"weights must sum to a positive value, got {total}")
    acc = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for vec, w in zip(vectors, weights):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != acc.shape:
            raise ShapeError(
                f"vector shapes disagree: {vec.shape} vs {acc.shape}"
            )
        if w < 0:
            raise ShapeError(f"weights must be non-negative, got {w}")
        acc += w * vec
    return acc / total


def aggregate_by_cluster(
    assignment: ClusterAssignment,
    flat_params: Sequence[np.ndarray],
    weights: Sequence[float],
    client_ids: Sequence[int],
) -> list[np.ndarray]:
    """Server-side step: weighted average per cluster over flat vectors.

    Takes only numeric payloads (parameter vectors, sample counts, ids); the
    structural privacy test relies on this signature.  Members are summed in
    ascending client-id order so the result is independent of list order.
    """
    if not (len(flat_params) == len(weights) == len(client_ids)):
        raise ShapeError("flat_params, weights and client_ids must align")
    out = []
    for members in assignment.clusters:
        ordered = sorted(members, key=lambda pos: client_ids[pos])
        out.append(
            weighted_average(
                [flat_params[pos] for pos in ordered],
                [weights[pos] for pos in ordered],
            )
        )
    return out


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two flat parameter vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vectors disagree in shape: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(a @ b / (na * nb))


def build_cosine_similarity_matrix(flat_params: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise parameter cosine matrix, min-max scaled for clustering.

    The raw matrix is symmetric by construction (each pair computed once).
    Off-diagonal entries are min-max normalized to [0, 1]; a constant
    off-diagonal maps to zeros.  The diagonal is set to 1 (the affinity
    preference replaces it anyway).
    """
    n = len(flat_params)
    if n == 0:
        raise EmptyInput("need at least one parameter vector")
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            value = cosine_similarity(flat_params[i], flat_params[j])
            sim[i, j] = value
            sim[j, i] = value
    if n == 1:
        return sim
    off = ~np.eye(n, dtype=bool)
    lo = sim[off].min()
    hi = sim[off].max()
    if hi > lo:
        sim[off] = (sim[off] - lo) / (hi - lo)
    else:
        sim[off] = 0.0
    np.fill_diagonal(sim, 1.0)
    return sim


# ---------------------------------------------------------------------------
# Uncertainty matrix


@dataclass(frozen=True)
class UncertaintyMatrix:
    """Cross-evaluation variances: entry (i, j) is the predicted variance of
    client j's model on client i's training data.

    ``normalized`` holds the column-wise min-max scaled matrix in [0, 1];
    a constant column maps to all zeros.
    """

    raw: np.ndarray
    normalized: np.ndarray
    client_ids: tuple[int, ...]


def _normalize_columns(raw: np.ndarray) -> np.ndarray:
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    out = np.zeros_like(raw)
    live = span > 0
    out[:, live] = (raw[:, live] - lo[live]) / span[live]
    return out


def _map_maybe_parallel(fn: Callable, items: Sequence, parallel: int) -> list:
    if parallel <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def build_uncertainty_matrix(
    clients: Sequence[ClientState],
    n_samples: int | None = None,
    seed: int = 0,
    parallel: int = 1,
) -> UncertaintyMatrix:
    """Every client evaluates every model on its own training data.

    Row i is computed entirely on client i (models are shared, data is not).
    The same Monte-Carlo noise seed is used for every entry so differences
    reflect the models and data, not the draws.
    """
    if len(clients) == 0:
        raise EmptyInput("need at least one client")
    models = [c.model for c in clients]

    def row(client: ClientState) -> np.ndarray:
        return np.array(
            [dataset_variance(m, client.train, n_samples, seed) for m in models]
        )

    rows = _map_maybe_parallel(row, clients, parallel)
    raw = np.stack(rows)
    return UncertaintyMatrix(
        raw=raw,
        normalized=_normalize_columns(raw),
        client_ids=tuple(c.client_id for c in clients),
    )


def similarity_from_uncertainty(matrix: UncertaintyMatrix | np.ndarray) -> np.ndarray:
    """Similarity = 1 - normalized uncertainty."""
    normalized = matrix.normalized if isinstance(matrix, UncertaintyMatrix) else np.asarray(matrix)
    if normalized.ndim != 2 or normalized.shape[0] != normalized.shape[1]:
        raise ShapeError(f"expected a square matrix, got {normalized.shape}")
    return 1.0 - normalized


# ---------------------------------------------------------------------------
# Rounds


def _accuracy(model: SngpModel, ds: Dataset) -> float:
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    pred = predict(model, ds.features)
    return float(np.mean(pred.labels == ds.labels))


def _digest(model: SngpModel) -> str:
    return hashlib.sha256(flat_parameters(model).tobytes()).hexdigest()


def run_round(
    clients: Sequence[ClientState],
    strategy: StrategyConfig,
    round_index: int = 0,
    experiment_seed: int = 0,
    parallel_clients: int = 1,
    epochs_override: int | None = None,
) -> RoundLog:
    """One federation round over live clients (mutates their models)."""
    if len(clients) == 0:
        raise EmptyInput("need at least one client")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ShapeError(f"client ids must be unique, got {ids}")

    if epochs_override is not None:
        epochs = epochs_override
    elif strategy.kind == "localonly":
        epochs = strategy.local_only_epochs
    else:
        epochs = strategy.local_epochs

    def train_one(client: ClientState):
        train_epochs(client.model, client.train, epochs, strategy.learning_rate, client.rng)

    _map_maybe_parallel(train_one, clients, parallel_clients)

    n = len(clients)
    uncertainty = None
    similarity = None
    if strategy.kind == "localonly":
        assignment = singleton_assignment(n)
    elif strategy.kind == "fedavg":
        assignment = single_cluster_assignment(n)
    elif strategy.kind == "fedcos":
        similarity = build_cosine_similarity_matrix(
            [flat_parameters(c.model) for c in clients]
        )
        assignment = affinity_propagation(similarity, strategy.ap)
    else:  # fedsngp
        uncertainty = build_uncertainty_matrix(
            clients,
            seed=_round_eval_seed(experiment_seed, round_index),
            parallel=parallel_clients,
        )
        similarity = similarity_from_uncertainty(uncertainty)
        if strategy.force_single_cluster:
            assignment = single_cluster_assignment(n)
        else:
            assignment = affinity_propagation(similarity, strategy.ap)

    if strategy.kind != "localonly":
        flats = [flat_parameters(c.model) for c in clients]
        weights = [float(c.n_train) for c in clients]
        merged = aggregate_by_cluster(assignment, flats, weights, ids)
        for cluster_vec, members in zip(merged, assignment.clusters):
            for pos in members:
                set_flat_parameters(clients[pos].model, cluster_vec)
        _map_maybe_parallel(
            lambda c: recompute_precision(c.model, c.train), clients, parallel_clients
        )

    accuracies = dict(
        zip(ids, _map_maybe_parallel(lambda c: _accuracy(c.model, c.test), clients, parallel_clients))
    )
    return RoundLog(
        round_index=round_index,
        strategy=strategy.kind,
        client_ids=tuple(ids),
        assignment=assignment,
        accuracies=accuracies,
        param_digests={c.client_id: _digest(c.model) for c in clients},
        uncertainty_raw=None if uncertainty is None else uncertainty.raw,
        uncertainty=None if uncertainty is None else uncertainty.normalized,
        similarity=similarity,
    )


@dataclass
class ExperimentResult:
    """Round logs plus final per-client evaluation."""

    strategy: StrategyConfig
    round_logs: list[RoundLog]
    metrics: dict[int, "Metrics"]
    client_ids: tuple[int, ...]
    n_train: dict[int, int]
    n_test: dict[int, int]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([m.accuracy for m in self.metrics.values()]))


def run_experiment(
    clients: Sequence[ClientState],
    strategy: StrategyConfig,
    experiment_seed: int = 0,
    parallel_clients: int = 1,
) -> ExperimentResult:
    """Run all rounds of one strategy over already-built clients.

    LocalOnly runs a single long pass of ``local_only_epochs`` instead of
    ``rounds`` federated rounds; ``rounds = 0`` skips training entirely for
    any strategy, leaving the untrained models to be evaluated.
    """
    from .scenarios import evaluate

    logs: list[RoundLog] = []
    if strategy.rounds > 0:
        if strategy.kind == "localonly":
            logs.append(
                run_round(
                    clients,
                    strategy,
                    round_index=0,
                    experiment_seed=experiment_seed,
                    parallel_clients=parallel_clients,
                )
            )
        else:
            for round_index in range(strategy.rounds):
                logs.append(
                    run_round(
                        clients,
                        strategy,
                        round_index=round_index,
                        experiment_seed=experiment_seed,
                        parallel_clients=parallel_clients,
                    )
                )
    metrics = {c.client_id: evaluate(c.model, c.test) for c in clients}
    return ExperimentResult(
        strategy=strategy,
        round_logs=logs,
        metrics=metrics,
        client_ids=tuple(c.client_id for c in clients),
        n_train={c.client_id: len(c.train) for c in clients},
        n_test={c.client_id: len(c.test) for c in clients},
    )


# ---------------------------------------------------------------------------
# Out-of-cluster resolution


@dataclass(frozen=True)
class ClusterModelInfo:
    """A cluster's shareable representative: the exemplar client's model and
    the cluster's training-population variance under that model."""

    exemplar_id: int
    model: SngpModel
    train_variance: float


def cluster_exemplar_models(
    clients: Sequence[ClientState],
    assignment: ClusterAssignment,
    n_samples: int | None = None,
    seed: int = 0,
) -> list[ClusterModelInfo]:
    """One ClusterModelInfo per cluster.

    The training-population variance is the sample-count-weighted mean of
    the exemplar model's dataset variance over every member's training set,
    i.e. the value the cluster itself can compute and ship as metadata.
    """
    out = []
    for members, exemplar_pos in zip(assignment.clusters, assignment.exemplars):
        model = clients[exemplar_pos].model
        ordered = sorted(members, key=lambda pos: clients[pos].client_id)
        num = 0.0
        den = 0
        for pos in ordered:
            member = clients[pos]
            num += len(member.train) * dataset_variance(model, member.train, n_samples, seed)
            den += len(member.train)
        out.append(
            ClusterModelInfo(
                exemplar_id=clients[exemplar_pos].client_id,
                model=model,
                train_variance=num / den,
            )
        )
    return out


@dataclass(frozen=True)
class OodDecision:
    """Outcome of resolving test data against the cluster models.

    ``status`` is 'own' (the client's model is confident enough), 'foreign'
    (another cluster's model was selected), or 'unresolved' (every model's
    variance exceeded its threshold; predictions are withheld).
    """

    status: str
    chosen_id: int | None
    own_test_variance: float
    own_threshold: float
    candidate_variances: dict[int, float]
    predictions: np.ndarray | None


def ood_resolve(
    client: ClientState,
    test_ds: Dataset,
    cluster_models: Sequence[ClusterModelInfo],
    threshold_factor: float = 10.0,
    n_samples: int | None = None,
    seed: int = 0,
) -> OodDecision:
    """Decide which model, if any, may classify possibly-foreign test data.

    The client keeps its own model when the test variance stays within
    ``threshold_factor`` times its training variance.  Otherwise the other
    clusters' models are evaluated on the test data and the lowest-variance
    one is chosen, provided it passes the same factor against its own
    shipped training-population variance.  If nothing qualifies the data is
    explicitly unresolved; there is no silent fallback.
    """
    if not threshold_factor > 0:
        raise ShapeError("threshold_factor must be positive")
    own_train = dataset_variance(client.model, client.train, n_samples, seed)
    own_test = dataset_variance(client.model, test_ds, n_samples, seed)
    threshold = threshold_factor * own_train
    if own_test <= threshold:
        return OodDecision(
            status="own",
            chosen_id=client.client_id,
            own_test_variance=own_test,
            own_threshold=threshold,
            candidate_variances={},
            predictions=predict(client.model, test_ds.features).labels,
        )
    ordered = sorted(cluster_models, key=lambda cm: cm.exemplar_id)
    variances = {
        cm.exemplar_id: dataset_variance(cm.model, test_ds, n_samples, seed)
        for cm in ordered
    }
    for cm in sorted(ordered, key=lambda cm: (variances[cm.exemplar_id], cm.exemplar_id)):
        if variances[cm.exemplar_id] <= threshold_factor * cm.train_variance:
            return OodDecision(
                status="foreign",
                chosen_id=cm.exemplar_id,
                own_test_variance=own_test,
                own_threshold=threshold,
                candidate_variances=variances,
                predictions=predict(cm.model, test_ds.features).labels,
            )
    return OodDecision(
        status="unresolved",
        chosen_id=None,
        own_test_variance=own_test,
        own_threshold=threshold,
        candidate_variances=variances,
        predictions=None,
    )


# ---------------------------------------------------------------------------
# Parameter-trajectory diagnostics


@dataclass(frozen=True)
class PcaTrajectories:
    """Parameter snapshots projected onto their top-2 principal directions."""

    coords: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance_ratio: np.ndarray


def pca_parameter_trajectories(snapshots) -> PcaTrajectories:
    """Project flat parameter snapshots to 2-D for trajectory plots.

    Centers the snapshot matrix and projects onto the top-2 right singular
    directions.  Component signs are fixed so the largest-magnitude loading
    is positive, which makes the output reproducible.
    """
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"snapshots must form a 2-D matrix, got shape {X.shape}")
    if X.shape[1] < 2:
        raise ShapeError("parameter vectors must have at least 2 dimensions")
    if not np.all(np.isfinite(X)):
        raise DegenerateInput("snapshots contain non-finite values")
    if len(np.unique(X, axis=0)) < 2:
        raise DegenerateInput("need at least 2 distinct snapshots")
    mean = X.mean(axis=0)
    centred = X - mean
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:2].copy()
    for row in components:
        anchor = np.argmax(np.abs(row))
        if row[anchor] < 0:
            row *= -1.0
    coords = centred @ components.T
    total = float(np.sum(s**2))
    ratio = (s[:2] ** 2) / total
    if ratio.shape[0] < 2:  # rank-deficient second direction
        ratio = np.pad(ratio, (0, 2 - ratio.shape[0]))
    return PcaTrajectories(
        coords=coords,
        components=components,
        mean=mean,
        explained_variance_ratio=ratio,
    )
