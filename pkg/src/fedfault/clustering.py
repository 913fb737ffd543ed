"""Affinity propagation over client similarity matrices.

Exemplar-based clustering by message passing: responsibilities say how
well-suited point k is to represent point i compared with other candidates,
availabilities say how appropriate it is for i to pick k given the support
k already gathers.  Both messages are damped and iterated until the
exemplar set is stable.  The similarity input may be asymmetric (the
uncertainty-based similarity is); it is used unmodified.

All tie-breaks resolve to the lowest index, so results are deterministic
and permutation-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NumericalError, ShapeError


@dataclass(frozen=True)
class ApConfig:
    """Affinity-propagation knobs.

    ``preference`` is either the string "median" (median of the
    off-diagonal similarities) or an explicit float applied to every
    diagonal entry.  Larger preferences yield more clusters.
    """

    damping: float = 0.7
    max_iterations: int = 500
    convergence_iterations: int = 30
    preference: float | str = "median"

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ShapeError(f"damping must lie in [0.5, 1), got {self.damping}")
        if self.max_iterations < 1:
            raise ShapeError("max_iterations must be positive")
        if self.convergence_iterations < 1:
            raise ShapeError("convergence_iterations must be positive")
        if isinstance(self.preference, str) and self.preference != "median":
            raise ShapeError(
                f"preference must be a float or 'median', got {self.preference!r}"
            )


@dataclass(frozen=True)
class ClusterAssignment:
    """A partition of points 0..n-1 into exemplar-led clusters.

    Clusters are ordered by exemplar index; members are sorted and each
    exemplar belongs to its own cluster.
    """

    clusters: tuple[tuple[int, ...], ...]
    exemplars: tuple[int, ...]
    converged: bool
    iterations: int

    @property
    def num_clusters(self) -> int:
        return len(self.exemplars)

    @property
    def labels(self) -> np.ndarray:
        n = sum(len(c) for c in self.clusters)
        out = np.empty(n, dtype=np.int64)
        for idx, members in enumerate(self.clusters):
            for m in members:
                out[m] = idx
        return out

    def cluster_of(self, point: int) -> int:
        return int(self.labels[point])


def _check_similarity(similarity: np.ndarray) -> np.ndarray:
    S = np.asarray(similarity, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"similarity must be square, got shape {S.shape}")
    if S.shape[0] == 0:
        raise DegenerateInput("similarity matrix has no points")
    if not np.all(np.isfinite(S)):
        raise NumericalError("similarity matrix contains non-finite values")
    return S


def preference_from(similarity: np.ndarray, preference: float | str) -> float:
    """Resolve the preference setting against a similarity matrix."""
    S = _check_similarity(similarity)
    if isinstance(preference, str):
        if preference != "median":
            raise ShapeError(f"unknown preference rule {preference!r}")
        n = S.shape[0]
        if n == 1:
            return float(S[0, 0])
        off_diag = S[~np.eye(n, dtype=bool)]
        return float(np.median(off_diag))
    return float(preference)


def _final_assignment(S: np.ndarray, exemplar_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assign points to exemplars, then refine each exemplar to the member
    that maximises intra-cluster similarity (ties to the lowest index)."""
    labels = np.argmax(S[:, exemplar_idx], axis=1)
    labels[exemplar_idx] = np.arange(len(exemplar_idx))
    refined = exemplar_idx.copy()
    for k in range(len(exemplar_idx)):
        members = np.flatnonzero(labels == k)
        totals = S[np.ix_(members, members)].sum(axis=0)
        refined[k] = members[np.argmax(totals)]
    labels = np.argmax(S[:, refined], axis=1)
    labels[refined] = np.arange(len(refined))
    return refined, labels


def affinity_propagation(similarity: np.ndarray, config: ApConfig = ApConfig()) -> ClusterAssignment:
    """Cluster points given a (possibly asymmetric) similarity matrix.

    Stops once the exemplar set has been stable for
    ``convergence_iterations`` sweeps, or at ``max_iterations``; in the
    latter case the last assignment is returned with ``converged=False``.
    Always returns a valid partition: if no point accumulates positive
    evidence, the single best candidate becomes the only exemplar.
    """
    S = _check_similarity(similarity).copy()
    n = S.shape[0]
    if n == 1:
        return ClusterAssignment(((0,),), (0,), True, 0)

    pref = preference_from(S, config.preference)
    np.fill_diagonal(S, pref)

    damping = config.damping
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)

    stable_count = 0
    last_exemplars: np.ndarray | None = None
    converged = False
    iterations = 0

    for iteration in range(config.max_iterations):
        iterations = iteration + 1

        # responsibilities: r(i,k) <- s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
        AS = A + S
        best_idx = np.argmax(AS, axis=1)
        best = AS[rows, best_idx]
        AS[rows, best_idx] = -np.inf
        second = AS.max(axis=1)
        R_new = S - best[:, None]
        R_new[rows, best_idx] = S[rows, best_idx] - second
        R = damping * R + (1.0 - damping) * R_new

        # availabilities: a(i,k) <- min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        col_sums = Rp.sum(axis=0)
        A_new = np.minimum(0.0, col_sums[None, :] - Rp)
        A_new[rows, rows] = col_sums - Rp[rows, rows]  # sum of others' positive support
        A = damping * A + (1.0 - damping) * A_new

        exemplars = np.flatnonzero(np.diag(A) + np.diag(R) > 0.0)
        if last_exemplars is not None and np.array_equal(exemplars, last_exemplars):
            stable_count += 1
        else:
            stable_count = 1
        last_exemplars = exemplars
        if stable_count >= config.convergence_iterations and len(exemplars) > 0:
            converged = True
            break

    exemplars = last_exemplars if last_exemplars is not None else np.array([], dtype=np.int64)
    if len(exemplars) == 0:
        # no positive evidence anywhere; fall back to the strongest candidate
        fallback = int(np.argmax(np.diag(A) + np.diag(R)))
        exemplars = np.array([fallback])
        converged = False

    refined, labels = _final_assignment(S, np.asarray(exemplars, dtype=np.int64))
    order = np.argsort(refined)
    clusters = tuple(
        tuple(int(i) for i in np.flatnonzero(labels == k)) for k in order
    )
    return ClusterAssignment(
        clusters=clusters,
        exemplars=tuple(int(refined[k]) for k in order),
        converged=converged,
        iterations=iterations,
    )


def single_cluster_assignment(n: int) -> ClusterAssignment:
    """The trivial partition holding every point, exemplar at index 0."""
    if n < 1:
        raise DegenerateInput("need at least one point")
    return ClusterAssignment(
        clusters=(tuple(range(n)),), exemplars=(0,), converged=True, iterations=0
    )


def singleton_assignment(n: int) -> ClusterAssignment:
    """Every point alone in its own cluster."""
    if n < 1:
        raise DegenerateInput("need at least one point")
    return ClusterAssignment(
        clusters=tuple((i,) for i in range(n)),
        exemplars=tuple(range(n)),
        converged=True,
        iterations=0,
    )
