"""Vibration-signal preprocessing: resampling, windowing, spectra, datasets.

The pipeline turns a raw 1-D vibration record into fixed-length spectral
feature vectors: resample to a common rate, cut non-overlapping windows,
take the single-sided DFT magnitude of each window.  A 1024-point window
yields 512 features (bins 0..511, DC first; the Nyquist bin is dropped).

Synthetic data generation lives here too: class templates are sums of
narrow spectral peaks, operating conditions shift every peak by a bin
offset and rescale amplitudes, and bin-wise Gaussian noise is clamped at
zero so features stay non-negative like real magnitude spectra.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy import signal as _sps

from .errors import (
    EmptyDataset,
    EmptyInput,
    EmptyResample,
    LabelError,
    NoWindows,
    NumericalError,
    ShapeError,
)

DEFAULT_TARGET_RATE_HZ = 12_800.0
DEFAULT_WINDOW = 1024


@dataclass(frozen=True)
class RawSignal:
    """A 1-D vibration record with its sample rate.

    Label and condition id are metadata supplied by the caller (they are
    not embedded in signal files).
    """

    samples: np.ndarray
    rate_hz: float
    label: int | None = None
    condition_id: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"signal must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NumericalError("signal contains non-finite samples")
        if not self.rate_hz > 0:
            raise ShapeError(f"sample rate must be positive, got {self.rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SpectrumSample:
    """One spectral feature vector with its class label."""

    features: np.ndarray
    label: int


class Dataset:
    """A labelled collection of spectral feature vectors.

    Features are held as one (n, d) float64 array and labels as an (n,)
    integer array; rows correspond.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or len(labels) != len(features):
            raise ShapeError(
                f"labels must be 1-D with one entry per row, got {labels.shape} "
                f"for {len(features)} rows"
            )
        if len(labels) and not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise LabelError("labels must be integers")
            labels = as_int
        else:
            labels = labels.astype(np.int64)
        if len(labels) and labels.min() < 0:
            raise LabelError(f"labels must be non-negative, got min {labels.min()}")
        if not np.all(np.isfinite(features)):
            raise NumericalError("features contain non-finite values")
        self.features = features
        self.labels = labels

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[SpectrumSample]:
        for row, label in zip(self.features, self.labels):
            yield SpectrumSample(row, int(label))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_set(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.labels.tolist())))

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices])

    @staticmethod
    def concatenate(parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise EmptyInput("concatenate needs at least one dataset")
        feats = np.concatenate([p.features for p in parts], axis=0)
        labels = np.concatenate([p.labels for p in parts], axis=0)
        return Dataset(feats, labels)


def resample(raw: RawSignal, target_rate_hz: float = DEFAULT_TARGET_RATE_HZ) -> RawSignal:
    """Resample a signal to ``target_rate_hz`` with polyphase filtering.

    The rate ratio is approximated by a rational factor and the conversion
    uses a band-limited anti-aliasing low-pass, so spectral content below
    the new Nyquist frequency is preserved.  Output length is
    round(n * target / source); the polyphase edge sample is trimmed when
    the rational conversion overshoots that length.
    """
    if not target_rate_hz > 0:
        raise ShapeError(f"target rate must be positive, got {target_rate_hz}")
    n = len(raw.samples)
    ratio = Fraction(target_rate_hz / raw.rate_hz).limit_denominator(10_000)
    n_out = int(round(n * ratio.numerator / ratio.denominator))
    if n_out < 1:
        raise EmptyResample(
            f"resampling {n} samples by {float(ratio):g} leaves no output"
        )
    if ratio == 1:
        out = raw.samples.copy()
    else:
        out = _sps.resample_poly(raw.samples, ratio.numerator, ratio.denominator)
        out = out[:n_out]
    return RawSignal(out, target_rate_hz, raw.label, raw.condition_id)


def segment(raw: RawSignal, window: int = DEFAULT_WINDOW, stride: int | None = None) -> np.ndarray:
    """Cut a signal into fixed-length windows (non-overlapping by default).

    Returns an (m, window) array; the tail shorter than a window is dropped.
    """
    if window < 1:
        raise ShapeError(f"window must be positive, got {window}")
    if stride is None:
        stride = window
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    n = len(raw.samples)
    if n < window:
        raise NoWindows(f"signal of {n} samples is shorter than window {window}")
    m = 1 + (n - window) // stride
    starts = np.arange(m) * stride
    return np.stack([raw.samples[s : s + window] for s in starts])


def power_spectrum(window: np.ndarray, mode: str = "magnitude") -> np.ndarray:
    """Single-sided spectrum of one window: the first half of the DFT.

    Returns len(window)//2 non-negative values with the DC bin at index 0.
    ``mode`` selects plain magnitudes (default) or squared magnitudes.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ShapeError(f"window must be 1-D, got shape {window.shape}")
    if len(window) < 2:
        raise ShapeError(f"window must have at least 2 samples, got {len(window)}")
    if mode not in ("magnitude", "power"):
        raise ShapeError(f"mode must be 'magnitude' or 'power', got {mode!r}")
    if not np.all(np.isfinite(window)):
        raise NumericalError("window contains non-finite samples")
    half = len(window) // 2
    mag = np.abs(np.fft.rfft(window)[:half])
    return mag**2 if mode == "power" else mag


def spectra_from_windows(windows: np.ndarray, mode: str = "magnitude") -> np.ndarray:
    """Vectorised power_spectrum over the rows of an (m, window) array."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise ShapeError(f"windows must be 2-D, got shape {windows.shape}")
    if mode not in ("magnitude", "power"):
        raise ShapeError(f"mode must be 'magnitude' or 'power', got {mode!r}")
    if not np.all(np.isfinite(windows)):
        raise NumericalError("windows contain non-finite samples")
    half = windows.shape[1] // 2
    mag = np.abs(np.fft.rfft(windows, axis=1)[:, :half])
    return mag**2 if mode == "power" else mag


def preprocess_signal(
    raw: RawSignal,
    target_rate_hz: float = DEFAULT_TARGET_RATE_HZ,
    window: int = DEFAULT_WINDOW,
    stride: int | None = None,
    mode: str = "magnitude",
) -> Dataset:
    """Full raw-to-features pipeline for one labelled signal."""
    if raw.label is None:
        raise LabelError("preprocess_signal needs a labelled signal")
    resampled = resample(raw, target_rate_hz)
    windows = segment(resampled, window, stride)
    feats = spectra_from_windows(windows, mode)
    labels = np.full(len(feats), raw.label, dtype=np.int64)
    return Dataset(feats, labels)


def train_test_split(
    ds: Dataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Stratified split: ``train_fraction`` of each class goes to train.

    Per-class counts are rounded; a class whose rounding leaves the test
    side empty (e.g. a single-sample class) is kept entirely in train and
    a warning is recorded.  Deterministic for a given seed.
    """
    if not 0 < train_fraction <= 1:
        raise ShapeError(f"train_fraction must be in (0, 1], got {train_fraction}")
    if len(ds) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for label in ds.label_set:
        idx = np.flatnonzero(ds.labels == label)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx))
        if n_train == len(idx) and train_fraction < 1.0:
            warnings.warn(
                f"class {label}: all {len(idx)} sample(s) assigned to train, "
                "none left for test",
                stacklevel=2,
            )
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train = ds.subset(np.concatenate(train_idx))
    test_indices = np.concatenate(test_idx) if test_idx else np.array([], dtype=np.int64)
    test = ds.subset(test_indices)
    return train, test


@dataclass(frozen=True)
class FeatureScale:
    """Per-feature min/max learned from a training set."""

    lo: np.ndarray
    hi: np.ndarray


def fit_feature_scale(ds: Dataset) -> FeatureScale:
    """Per-feature min and max of a training set, for [0, 1] scaling."""
    if len(ds) == 0:
        raise EmptyDataset("cannot fit a feature scale on an empty dataset")
    return FeatureScale(ds.features.min(axis=0), ds.features.max(axis=0))


def apply_feature_scale(ds: Dataset, scale: FeatureScale) -> Dataset:
    """Map features through (x - lo) / (hi - lo); constant features map to 0."""
    span = scale.hi - scale.lo
    safe = np.where(span > 0, span, 1.0)
    feats = (ds.features - scale.lo) / safe
    return Dataset(feats, ds.labels.copy())


# ---------------------------------------------------------------------------
# Synthetic spectra


@dataclass(frozen=True)
class ConditionShift:
    """An operating condition: every peak moves by ``bin_offset`` bins and
    amplitudes scale by ``amplitude_scale``."""

    bin_offset: int = 0
    amplitude_scale: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for synthetic spectral datasets.

    ``class_peaks[k]`` lists (bin, amplitude) peaks for class k; peaks are
    rendered as narrow Gaussian bumps of width ``peak_width`` bins.  One
    dataset of ``samples_per_class`` rows per class is produced for each
    condition.
    """

    class_peaks: tuple[tuple[tuple[int, float], ...], ...]
    conditions: tuple[ConditionShift, ...] = (ConditionShift(),)
    samples_per_class: int = 100
    noise_sigma: float = 0.05
    peak_width: float = 1.5
    feature_dim: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.class_peaks:
            raise ShapeError("class_peaks must define at least one class")
        if not self.conditions:
            raise ShapeError("at least one condition is required")
        if self.samples_per_class < 1:
            raise ShapeError("samples_per_class must be positive")
        if self.feature_dim < 1:
            raise ShapeError("feature_dim must be positive")
        if self.noise_sigma < 0:
            raise ShapeError("noise_sigma must be non-negative")

    @property
    def num_classes(self) -> int:
        return len(self.class_peaks)


def class_template(spec: SynthSpec, label: int, condition: ConditionShift) -> np.ndarray:
    """Noise-free spectrum of one class under one condition."""
    grid = np.arange(spec.feature_dim, dtype=np.float64)
    template = np.zeros(spec.feature_dim)
    for bin_pos, amplitude in spec.class_peaks[label]:
        centre = bin_pos + condition.bin_offset
        template += (
            amplitude
            * condition.amplitude_scale
            * np.exp(-0.5 * ((grid - centre) / spec.peak_width) ** 2)
        )
    return template


def synth_generate_by_condition(spec: SynthSpec) -> dict[int, Dataset]:
    """Generate one dataset per condition (condition id = position)."""
    rng = np.random.default_rng(spec.seed)
    out: dict[int, Dataset] = {}
    for cond_id, condition in enumerate(spec.conditions):
        feats = []
        labels = []
        for label in range(spec.num_classes):
            template = class_template(spec, label, condition)
            noise = rng.standard_normal((spec.samples_per_class, spec.feature_dim))
            block = np.clip(template + spec.noise_sigma * noise, 0.0, None)
            feats.append(block)
            labels.append(np.full(spec.samples_per_class, label, dtype=np.int64))
        out[cond_id] = Dataset(np.concatenate(feats), np.concatenate(labels))
    return out


def synth_generate(spec: SynthSpec) -> Dataset:
    """All conditions concatenated into a single dataset."""
    per_condition = synth_generate_by_condition(spec)
    return Dataset.concatenate([per_condition[c] for c in sorted(per_condition)])


# ---------------------------------------------------------------------------
# File formats


def read_raw_signal(
    path: str | Path,
    rate_hz: float,
    label: int | None = None,
    condition_id: int | None = None,
) -> RawSignal:
    """Read a raw signal file: CSV (one value per line) or float32 binary.

    ``.bin``/``.raw``/``.f32`` files are little-endian float32; anything
    else is parsed as text, skipping a non-numeric header line if present.
    """
    path = Path(path)
    if path.suffix.lower() in (".bin", ".raw", ".f32"):
        samples = np.fromfile(path, dtype="<f4").astype(np.float64)
    else:
        with open(path, "r", newline="") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        start = 0
        if lines:
            try:
                float(lines[0].split(",")[0])
            except ValueError:
                start = 1
        samples = np.array(
            [float(ln.split(",")[0]) for ln in lines[start:]], dtype=np.float64
        )
    if samples.size == 0:
        raise EmptyResample(f"{path} holds no samples")
    return RawSignal(samples, rate_hz, label, condition_id)


def save_dataset_csv(ds: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV: one feature column per dimension plus ``label``."""
    path = Path(path)
    width = len(str(ds.feature_dim - 1))
    header = [f"f{idx:0{width}d}" for idx in range(ds.feature_dim)] + ["label"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_dataset_csv(path: str | Path) -> Dataset:
    """Read a dataset written by save_dataset_csv (label column by name)."""
    path = Path(path)
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path} is empty")
        try:
            label_col = header.index("label")
        except ValueError:
            raise ShapeError(f"{path} has no 'label' column") from None
        feature_cols = [i for i in range(len(header)) if i != label_col]
        feats = []
        labels = []
        for row in reader:
            if not row:
                continue
            feats.append([float(row[i]) for i in feature_cols])
            labels.append(int(row[label_col]))
    if not feats:
        raise EmptyDataset(f"{path} holds no samples")
    return Dataset(np.array(feats), np.array(labels, dtype=np.int64))


def load_condition_datasets(paths: Mapping[int, str | Path]) -> dict[int, Dataset]:
    """Load a condition-id -> csv-path mapping into datasets."""
    return {int(cond): load_dataset_csv(p) for cond, p in paths.items()}
