"""Distance-aware spectral-normalized residual classifier with a GP head.

The network is a residual MLP whose weight matrices are kept near-isometric
by spectral normalization, followed by a random-Fourier-feature (RFF)
approximation of a Gaussian-process output layer.  Keeping the hidden map
bi-Lipschitz means distances in input space survive into feature space, so
the GP head's predictive variance grows on inputs far from the training
data.  That variance is the quantity the federation layer compares across
clients.

Layout of one model:

  h   = residual_mlp(x)                      hidden features, dim ``hidden_dim``
  Phi = sqrt(2/D) * cos(b_rff - h @ W_rff.T) random features, dim ``rff_dim``
  m_k = Phi . beta_k                         per-class logit mean
  H_k = I + sum_i p_ik (1 - p_ik) Phi_i Phi_i^T   per-class Laplace precision
  v_k = Phi . H_k^{-1} . Phi                 per-class logit variance

W_rff and b_rff are drawn once at init (standard normal / uniform on
[0, pi)) and stay frozen; only the MLP weights and beta train.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import EmptyDataset, LabelError, NumericalError, ShapeError
from .signal import Dataset

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SngpConfig:
    """Hyper-parameters of one classifier."""

    num_classes: int
    input_dim: int = 512
    hidden_dim: int = 64
    num_blocks: int = 3
    rff_dim: int = 256
    spectral_bound: float = 0.95
    learning_rate: float = 0.005
    batch_size: int = 64
    mean_field_factor: float = math.pi / 8
    mc_samples: int = 100

    def __post_init__(self):
        for name in ("num_classes", "input_dim", "hidden_dim", "num_blocks",
                     "rff_dim", "batch_size", "mc_samples"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.spectral_bound > 0:
            raise ShapeError(f"spectral_bound must be positive, got {self.spectral_bound}")
        if not self.learning_rate > 0:
            raise ShapeError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.mean_field_factor < 0:
            raise ShapeError("mean_field_factor must be non-negative")

    @property
    def num_parameters(self) -> int:
        """Length of the trainable flat parameter vector."""
        proj = self.hidden_dim * self.input_dim + self.hidden_dim
        blocks = self.num_blocks * (self.hidden_dim * self.hidden_dim + self.hidden_dim)
        head = self.rff_dim * self.num_classes
        return proj + blocks + head


@dataclass
class SngpModel:
    """Mutable parameter container; operations live at module level."""

    config: SngpConfig
    w_in: np.ndarray
    b_in: np.ndarray
    block_w: list[np.ndarray]
    block_b: list[np.ndarray]
    rff_w: np.ndarray
    rff_b: np.ndarray
    beta: np.ndarray
    precision: np.ndarray
    precision_inv: np.ndarray
    pi_u: dict[str, np.ndarray] = field(default_factory=dict)

    def weight_matrices(self) -> list[tuple[str, np.ndarray]]:
        """The spectrally-constrained matrices, in canonical order."""
        out = [("w_in", self.w_in)]
        out += [(f"block_{i}", w) for i, w in enumerate(self.block_w)]
        return out


class Prediction(NamedTuple):
    """Batched prediction: probabilities plus the GP moments behind them."""

    class_probs: np.ndarray  # (n, K)
    logit_means: np.ndarray  # (n, K)
    logit_vars: np.ndarray   # (n, K)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.class_probs, axis=1)


class SpectralResult(NamedTuple):
    weight: np.ndarray
    u: np.ndarray
    sigma: float


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def init_model(config: SngpConfig, seed: int = 0) -> SngpModel:
    """Build a model with documented, seed-reproducible initialisation.

    Draw order: projection weight+bias, each block's weight+bias, RFF
    weights (standard normal), RFF phases (uniform on [0, pi)), then one
    power-iteration vector per constrained matrix.  Weights and biases are
    uniform on +-1/sqrt(fan_in); beta starts at zero (its prior mean);
    each Laplace precision starts at the identity (its prior).  Constrained
    matrices get 20 power-iteration steps and are scaled to the spectral
    bound immediately so a fresh model already satisfies the constraint.
    """
    rng = np.random.default_rng(seed)
    cfg = config

    def uniform(fan_in, *shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    w_in = uniform(cfg.input_dim, cfg.hidden_dim, cfg.input_dim)
    b_in = uniform(cfg.input_dim, cfg.hidden_dim)
    block_w = []
    block_b = []
    for _ in range(cfg.num_blocks):
        block_w.append(uniform(cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim))
        block_b.append(uniform(cfg.hidden_dim, cfg.hidden_dim))
    rff_w = rng.standard_normal((cfg.rff_dim, cfg.hidden_dim))
    rff_b = rng.uniform(0.0, math.pi, cfg.rff_dim)
    beta = np.zeros((cfg.rff_dim, cfg.num_classes))
    eye = np.eye(cfg.rff_dim)
    precision = np.repeat(eye[None, :, :], cfg.num_classes, axis=0)
    model = SngpModel(
        config=cfg,
        w_in=w_in,
        b_in=b_in,
        block_w=block_w,
        block_b=block_b,
        rff_w=rff_w,
        rff_b=rff_b,
        beta=beta,
        precision=precision,
        precision_inv=precision.copy(),
        pi_u={},
    )
    for name, w in model.weight_matrices():
        u = rng.standard_normal(w.shape[0])
        model.pi_u[name] = u / np.linalg.norm(u)
    _spectral_normalize_model(model, steps=20)
    return model


def clone_model(model: SngpModel) -> SngpModel:
    """Deep copy (shares nothing mutable with the original)."""
    return SngpModel(
        config=model.config,
        w_in=model.w_in.copy(),
        b_in=model.b_in.copy(),
        block_w=[w.copy() for w in model.block_w],
        block_b=[b.copy() for b in model.block_b],
        rff_w=model.rff_w.copy(),
        rff_b=model.rff_b.copy(),
        beta=model.beta.copy(),
        precision=model.precision.copy(),
        precision_inv=model.precision_inv.copy(),
        pi_u={k: v.copy() for k, v in model.pi_u.items()},
    )


def spectral_normalize(
    weight: np.ndarray, u: np.ndarray, bound: float, steps: int = 1
) -> SpectralResult:
    """Estimate sigma_max by power iteration and rescale if it exceeds ``bound``.

    ``u`` is the warm-started left singular vector estimate; the returned
    vector should be fed back in on the next call.  A zero matrix is
    returned unchanged (sigma = 0).
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2:
        raise ShapeError(f"weight must be a matrix, got shape {weight.shape}")
    if len(u) != weight.shape[0]:
        raise ShapeError(
            f"power vector has length {len(u)}, expected {weight.shape[0]}"
        )
    sigma = 0.0
    for _ in range(max(steps, 1)):
        v = weight.T @ u
        v_norm = np.linalg.norm(v)
        if v_norm == 0.0:
            return SpectralResult(weight.copy(), u.copy(), 0.0)
        v = v / v_norm
        wv = weight @ v
        sigma = float(np.linalg.norm(wv))
        if sigma == 0.0:
            return SpectralResult(weight.copy(), u.copy(), 0.0)
        u = wv / sigma
    if sigma > bound:
        weight = weight * (bound / sigma)
    else:
        weight = weight.copy()
    return SpectralResult(weight, u, sigma)


def _spectral_normalize_model(model: SngpModel, steps: int = 1) -> None:
    bound = model.config.spectral_bound
    result = spectral_normalize(model.w_in, model.pi_u["w_in"], bound, steps)
    model.w_in, model.pi_u["w_in"] = result.weight, result.u
    for i in range(model.config.num_blocks):
        name = f"block_{i}"
        result = spectral_normalize(model.block_w[i], model.pi_u[name], bound, steps)
        model.block_w[i], model.pi_u[name] = result.weight, result.u


def _check_inputs(model: SngpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"inputs must have shape (n, {model.config.input_dim}), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise NumericalError("inputs contain non-finite values")
    return X


def forward_features(model: SngpModel, X: np.ndarray) -> np.ndarray:
    """Hidden features of the residual MLP: project then u + relu(w u + b)."""
    X = _check_inputs(model, X)
    U = X @ model.w_in.T + model.b_in
    for w, b in zip(model.block_w, model.block_b):
        U = U + np.maximum(U @ w.T + b, 0.0)
    return U


def rff_features(model: SngpModel, H: np.ndarray) -> np.ndarray:
    """Random Fourier features sqrt(2/D) * cos(b - h W^T); frozen after init."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != model.config.hidden_dim:
        raise ShapeError(
            f"hidden features must have shape (n, {model.config.hidden_dim}), got {H.shape}"
        )
    scale = math.sqrt(2.0 / model.config.rff_dim)
    return scale * np.cos(model.rff_b - H @ model.rff_w.T)


def _phi(model: SngpModel, X: np.ndarray) -> np.ndarray:
    return rff_features(model, forward_features(model, X))


def _logit_moments(model: SngpModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class logit means and variances for a batch."""
    Phi = _phi(model, X)
    means = Phi @ model.beta
    K = model.config.num_classes
    variances = np.empty_like(means)
    for k in range(K):
        variances[:, k] = np.einsum(
            "nd,nd->n", Phi @ model.precision_inv[k], Phi
        )
    return means, variances


def predict(
    model: SngpModel, X: np.ndarray, mean_field_factor: float | None = None
) -> Prediction:
    """Mean-field class probabilities: softmax(m / sqrt(1 + lambda v)).

    A zero mean-field factor (or an identity-free precision inverse of
    zeros) reduces to the plain softmax over logit means.
    """
    lam = model.config.mean_field_factor if mean_field_factor is None else mean_field_factor
    if lam < 0:
        raise ShapeError("mean_field_factor must be non-negative")
    means, variances = _logit_moments(model, X)
    if np.any(variances < -1e-9):
        raise NumericalError("negative logit variance; precision is not positive definite")
    variances = np.maximum(variances, 0.0)
    probs = _softmax(means / np.sqrt(1.0 + lam * variances), axis=1)
    return Prediction(probs, means, variances)


def loss_and_gradients(
    model: SngpModel, X: np.ndarray, y: np.ndarray, l2_count: int
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch plus the beta prior term.

    The objective is  mean_i CE(softmax(Phi_i beta), y_i) + ||beta||^2 / (2 n)
    with n = ``l2_count`` (the dataset size, so the penalty matches the
    standard-normal prior on beta once summed over an epoch).  Returns the
    loss and analytic gradients for every trainable array.
    """
    X = _check_inputs(model, X)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise ShapeError(f"labels must be (n,) matching inputs, got {y.shape}")
    if len(X) == 0:
        raise EmptyDataset("cannot compute a loss on an empty batch")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise LabelError(
            f"labels must lie in [0, {model.config.num_classes}), got "
            f"[{y.min()}, {y.max()}]"
        )
    if l2_count < 1:
        raise ShapeError("l2_count must be at least 1")

    n = len(X)
    # forward, caching block inputs and pre-activations
    U = X @ model.w_in.T + model.b_in
    block_inputs = []
    block_pre = []
    for w, b in zip(model.block_w, model.block_b):
        block_inputs.append(U)
        Z = U @ w.T + b
        block_pre.append(Z)
        U = U + np.maximum(Z, 0.0)
    scale = math.sqrt(2.0 / model.config.rff_dim)
    G = model.rff_b - U @ model.rff_w.T
    Phi = scale * np.cos(G)
    M = Phi @ model.beta

    m_max = M.max(axis=1, keepdims=True)
    lse = m_max[:, 0] + np.log(np.sum(np.exp(M - m_max), axis=1))
    ce = float(np.mean(lse - M[np.arange(n), y]))
    loss = ce + 0.5 * float(np.sum(model.beta**2)) / l2_count

    probs = np.exp(M - lse[:, None])
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n

    grads: dict[str, np.ndarray] = {}
    grads["beta"] = Phi.T @ d_logits + model.beta / l2_count
    d_phi = d_logits @ model.beta.T
    d_g = -scale * np.sin(G) * d_phi
    dU = -(d_g @ model.rff_w)
    for i in reversed(range(model.config.num_blocks)):
        dZ = dU * (block_pre[i] > 0.0)
        grads[f"block_w_{i}"] = dZ.T @ block_inputs[i]
        grads[f"block_b_{i}"] = dZ.sum(axis=0)
        dU = dU + dZ @ model.block_w[i]
    grads["w_in"] = dU.T @ X
    grads["b_in"] = dU.sum(axis=0)
    return loss, grads


def _sgd_step(model: SngpModel, grads: dict[str, np.ndarray], lr: float) -> None:
    model.beta -= lr * grads["beta"]
    model.w_in -= lr * grads["w_in"]
    model.b_in -= lr * grads["b_in"]
    for i in range(model.config.num_blocks):
        model.block_w[i] -= lr * grads[f"block_w_{i}"]
        model.block_b[i] -= lr * grads[f"block_b_{i}"]


def _check_dataset(model: SngpModel, ds: Dataset) -> None:
    if len(ds) == 0:
        raise EmptyDataset("dataset holds no samples")
    if ds.feature_dim != model.config.input_dim:
        raise ShapeError(
            f"dataset features have dim {ds.feature_dim}, model expects "
            f"{model.config.input_dim}"
        )
    if ds.labels.max() >= model.config.num_classes:
        raise LabelError(
            f"dataset labels reach {ds.labels.max()}, model has "
            f"{model.config.num_classes} classes"
        )


def train_epochs(
    model: SngpModel,
    ds: Dataset,
    epochs: int,
    lr: float | None = None,
    rng: np.random.Generator | int = 0,
) -> list[float]:
    """Mini-batch SGD in place; returns the mean batch loss per epoch.

    Each optimizer step is followed by one warm-started power-iteration
    step of spectral normalization on the projection and block weights.
    The Laplace precision is rebuilt from the full dataset at the end of
    every call (including epochs = 0), so the posterior always reflects
    the current parameters.
    """
    _check_dataset(model, ds)
    if epochs < 0:
        raise ShapeError(f"epochs must be non-negative, got {epochs}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    step_lr = model.config.learning_rate if lr is None else lr
    if not step_lr > 0:
        raise ShapeError(f"learning rate must be positive, got {step_lr}")
    X, y = ds.features, ds.labels
    batch = model.config.batch_size
    history: list[float] = []
    for epoch in range(epochs):
        order = gen.permutation(len(X))
        batch_losses = []
        for start in range(0, len(X), batch):
            idx = order[start : start + batch]
            loss, grads = loss_and_gradients(model, X[idx], y[idx], len(X))
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            _sgd_step(model, grads, step_lr)
            _spectral_normalize_model(model, steps=1)
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
    recompute_precision(model, ds)
    return history


def _accumulate_precision(Phi: np.ndarray, probs: np.ndarray, rff_dim: int) -> np.ndarray:
    """I + sum_i p_ik (1 - p_ik) Phi_i Phi_i^T for each class column of probs."""
    K = probs.shape[1]
    out = np.repeat(np.eye(rff_dim)[None, :, :], K, axis=0)
    for k in range(K):
        w = probs[:, k] * (1.0 - probs[:, k])
        out[k] += (Phi * w[:, None]).T @ Phi
    return out


def recompute_precision(model: SngpModel, ds: Dataset) -> None:
    """Rebuild the per-class Laplace precision over the full dataset.

    Class contributions are weighted by p(1-p) where p is the logistic of
    that class's logit, so a fresh (beta = 0) model weights every sample
    at exactly 1/4.  The inverse is cached for prediction.
    """
    _check_dataset(model, ds)
    Phi = _phi(model, ds.features)
    probs = _sigmoid(Phi @ model.beta)
    model.precision = _accumulate_precision(Phi, probs, model.config.rff_dim)
    model.precision_inv = np.linalg.inv(model.precision)


def _mc_variances(M: np.ndarray, V: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Mean-over-classes MC probability variance for each row of (M, V).

    ``eps`` has shape (samples, K) and is shared across rows, which keeps
    dataset-level summaries invariant to sample order and duplication.
    """
    logits = M[:, None, :] + np.sqrt(V)[:, None, :] * eps[None, :, :]
    probs = _softmax(logits, axis=2)
    out = probs.var(axis=1).mean(axis=1)
    # rows with no variance in any class produce identical draws; make the
    # result exactly zero instead of mean-of-constant rounding dust
    out[~V.any(axis=1)] = 0.0
    return out


def mc_prob_variance(
    model: SngpModel,
    x: np.ndarray,
    n_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Monte-Carlo predicted variance of one input.

    Draws ``n_samples`` logit vectors with independent per-class noise
    scaled by the GP variance, pushes each through softmax, and averages
    the per-class variance of the resulting probabilities.  Deterministic
    for a given seed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != 1:
        raise ShapeError(f"mc_prob_variance takes a single input, got {x.shape}")
    samples = model.config.mc_samples if n_samples is None else n_samples
    if samples < 2:
        raise ShapeError(f"variance needs at least 2 samples, got {samples}")
    M, V = _logit_moments(model, x)
    V = np.maximum(V, 0.0)
    eps = np.random.default_rng(seed).standard_normal((samples, model.config.num_classes))
    return float(_mc_variances(M, V, eps)[0])


def dataset_variance(
    model: SngpModel,
    ds: Dataset,
    n_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Mean MC predicted variance over a dataset.

    Equals the mean of mc_prob_variance over the samples: the noise draws
    depend only on (seed, n_samples, num_classes), so the summary is
    invariant to sample order and duplication.
    """
    _check_dataset(model, ds)
    samples = model.config.mc_samples if n_samples is None else n_samples
    if samples < 2:
        raise ShapeError(f"variance needs at least 2 samples, got {samples}")
    M, V = _logit_moments(model, ds.features)
    V = np.maximum(V, 0.0)
    eps = np.random.default_rng(seed).standard_normal((samples, model.config.num_classes))
    return float(_mc_variances(M, V, eps).mean())


# ---------------------------------------------------------------------------
# Flat parameter vector


def flat_parameters(model: SngpModel) -> np.ndarray:
    """Trainable parameters as one vector, in a documented canonical order.

    Order: projection weight (row-major), projection bias, then each block's
    weight and bias, then beta (row-major).  The frozen RFF arrays and the
    Laplace precision are not part of the vector.
    """
    parts = [model.w_in.ravel(), model.b_in]
    for w, b in zip(model.block_w, model.block_b):
        parts.append(w.ravel())
        parts.append(b)
    parts.append(model.beta.ravel())
    return np.concatenate(parts)


def set_flat_parameters(model: SngpModel, flat: np.ndarray) -> None:
    """Write a flat vector produced by flat_parameters back into the model."""
    flat = np.asarray(flat, dtype=np.float64)
    expected = model.config.num_parameters
    if flat.shape != (expected,):
        raise ShapeError(f"flat vector must have shape ({expected},), got {flat.shape}")
    cfg = model.config
    pos = 0

    def take(*shape):
        nonlocal pos
        size = int(np.prod(shape))
        chunk = flat[pos : pos + size].reshape(shape).copy()
        pos += size
        return chunk

    model.w_in = take(cfg.hidden_dim, cfg.input_dim)
    model.b_in = take(cfg.hidden_dim)
    for i in range(cfg.num_blocks):
        model.block_w[i] = take(cfg.hidden_dim, cfg.hidden_dim)
        model.block_b[i] = take(cfg.hidden_dim)
    model.beta = take(cfg.rff_dim, cfg.num_classes)


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(model: SngpModel, path: str | Path) -> None:
    """Write a self-describing checkpoint (single .npz with JSON metadata)."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {
            "num_classes": model.config.num_classes,
            "input_dim": model.config.input_dim,
            "hidden_dim": model.config.hidden_dim,
            "num_blocks": model.config.num_blocks,
            "rff_dim": model.config.rff_dim,
            "spectral_bound": model.config.spectral_bound,
            "learning_rate": model.config.learning_rate,
            "batch_size": model.config.batch_size,
            "mean_field_factor": model.config.mean_field_factor,
            "mc_samples": model.config.mc_samples,
        },
    }
    arrays = {
        "w_in": model.w_in,
        "b_in": model.b_in,
        "rff_w": model.rff_w,
        "rff_b": model.rff_b,
        "beta": model.beta,
        "precision": model.precision,
        "precision_inv": model.precision_inv,
    }
    for i in range(model.config.num_blocks):
        arrays[f"block_w_{i}"] = model.block_w[i]
        arrays[f"block_b_{i}"] = model.block_b[i]
    for name, u in model.pi_u.items():
        arrays[f"pi_u_{name}"] = u
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path: str | Path) -> SngpModel:
    """Load a checkpoint written by save_model."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        version = meta.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ShapeError(
                f"unsupported checkpoint format version {version!r}, "
                f"expected {CHECKPOINT_FORMAT_VERSION}"
            )
        config = SngpConfig(**meta["config"])
        model = SngpModel(
            config=config,
            w_in=data["w_in"],
            b_in=data["b_in"],
            block_w=[data[f"block_w_{i}"] for i in range(config.num_blocks)],
            block_b=[data[f"block_b_{i}"] for i in range(config.num_blocks)],
            rff_w=data["rff_w"],
            rff_b=data["rff_b"],
            beta=data["beta"],
            precision=data["precision"],
            precision_inv=data["precision_inv"],
            pi_u={
                name[len("pi_u_"):]: data[name]
                for name in data.files
                if name.startswith("pi_u_")
            },
        )
    return model
