"""Per-band extraction, cumulant features and modulation classifiers.

A proposal names a band inside a wideband capture. ``extract_slice`` moves
that band to 0 Hz, low-pass filters it, decimates to about two samples per
symbol and normalizes it to unit power. ``cumulant_features`` turns the
slice into five scale-free statistics that separate the PSK and QAM
constellations, and two small classifiers map features to class scores:

* ``CentroidModel``: nearest class mean in per-class standardized distance;
* ``LinearModel``: multinomial logistic regression fit by gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps_signal

from .modem import SCHEMES, ModulationScheme

FEATURE_NAMES = ("abs_c20", "abs_c40", "c42", "abs_c41", "amp_kurtosis")
CLASS_NAMES = tuple(s.value for s in SCHEMES)
MODEL_VERSION = "wideband-amc-model/1"
EXTRACT_NUMTAPS = 64
CUTOFF_MARGIN = 1.05
MIN_SLICE = 64
MIN_PER_CLASS = 10
STD_FLOOR = 1e-6


class ClassifyError(ValueError):
    pass


class TrainingError(ClassifyError):
    pass


class DivergenceError(TrainingError):
    pass


def _band_of(p) -> tuple[float, float]:
    """``(center, bandwidth)`` of a proposal, label or proposal record."""
    if hasattr(p, "center_freq_hz"):
        return float(p.center_freq_hz), float(p.bandwidth_hz)
    return float(p.center_freq), float(p.bandwidth)


@dataclass
class SignalSlice:
    samples: np.ndarray
    est_symbol_rate: float
    fs: float = 0.0  # sample rate of ``samples``

    @property
    def samples_per_symbol(self) -> float:
        return self.fs / self.est_symbol_rate


def extraction_taps(bandwidth: float, fs: float, numtaps: int = EXTRACT_NUMTAPS) -> np.ndarray:
    """Hamming windowed-sinc low-pass with cutoff ``1.05 * bandwidth / 2``."""
    cutoff = bandwidth / 2 * CUTOFF_MARGIN
    if not 0 < cutoff < fs / 2:
        raise ClassifyError(f"cutoff {cutoff} Hz must lie in (0, {fs / 2}) Hz")
    return sps_signal.firwin(numtaps, cutoff, window="hamming", fs=fs)


def decimation_factor(symbol_rate: float, fs: float) -> int:
    return max(1, int(round(fs / (2 * symbol_rate))))


def extract_slice(entry, proposal, rolloff: float = 0.35, numtaps: int = EXTRACT_NUMTAPS) -> SignalSlice:
    """Isolate one proposed band of ``entry`` as a unit-power baseband slice.

    ``entry`` needs ``iq`` and ``fs``. Only fully overlapped filter outputs
    are kept, so the slice has no start-up transient.
    """
    iq = np.asarray(entry.iq, dtype=complex)
    fs = float(entry.fs)
    center, bw = _band_of(proposal)
    if not bw > 0:
        raise ClassifyError(f"proposal bandwidth must be positive, got {bw}")
    if center - bw / 2 < -fs / 2 or center + bw / 2 > fs / 2:
        raise ClassifyError(f"proposal [{center - bw / 2}, {center + bw / 2}] Hz leaves Nyquist")
    if rolloff < 0:
        raise ClassifyError("rolloff must be >= 0")
    n = np.arange(iq.size)
    shifted = iq * np.exp(-2j * np.pi * center * n / fs)
    taps = extraction_taps(bw, fs, numtaps)
    if iq.size < taps.size:
        raise ClassifyError(f"capture of {iq.size} samples is shorter than the filter")
    filtered = np.convolve(shifted, taps, mode="valid")
    rate = bw / (1 + rolloff)
    d = decimation_factor(rate, fs)
    s = filtered[::d]
    power = np.mean(np.abs(s) ** 2)
    if not power > 0:
        raise ClassifyError("extracted slice has zero power")
    return SignalSlice(s / np.sqrt(power), rate, fs / d)


# -- features ------------------------------------------------------------------


def cumulant_features(x) -> np.ndarray:
    """``[|C20|, |C40|, C42, |C41|, E|s|^4 / (E|s|^2)^2]`` of a slice.

    Cumulants are normalized by the matching power of ``C21 = E|s|^2``, so
    the vector does not depend on the slice's scale or carrier phase.
    """
    s = np.asarray(x.samples if isinstance(x, SignalSlice) else x, dtype=complex)
    if s.ndim != 1 or s.size < MIN_SLICE:
        raise ClassifyError(f"need at least {MIN_SLICE} samples, got {s.size}")
    s2 = s * s
    a2 = (s * s.conj()).real
    c21 = a2.mean()
    if not c21 > 0:
        raise ClassifyError("slice has zero power")
    c20 = s2.mean()
    c40 = (s2 * s2).mean() - 3 * c20**2
    c41 = (s2 * a2).mean() - 3 * c20 * c21
    m42 = (a2 * a2).mean()
    c42 = m42 - abs(c20) ** 2 - 2 * c21**2
    f = np.array([abs(c20) / c21, abs(c40) / c21**2, c42 / c21**2, abs(c41) / c21**2, m42 / c21**2])
    if not np.all(np.isfinite(f)):
        raise ClassifyError("non-finite features")
    return f


def feature_matrix(slices: Sequence) -> np.ndarray:
    if not len(slices):
        return np.zeros((0, len(FEATURE_NAMES)))
    return np.vstack([cumulant_features(s) for s in slices])


# -- models --------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifiedSignal:
    modulation: str
    scores: dict

    @property
    def confidence(self) -> float:
        return float(self.scores[self.modulation])


def _check_features(x, n_features: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[-1] != n_features:
        raise ClassifyError(f"expected {n_features} features, got {x.shape[-1]}")
    return x


@dataclass
class CentroidModel:
    classes: tuple[str, ...]
    mean: np.ndarray  # (K, F)
    std: np.ndarray  # (K, F), > 0
    counts: tuple[int, ...] = ()

    kind = "centroid"

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        self.counts = tuple(int(c) for c in self.counts)
        if self.mean.shape != self.std.shape or self.mean.shape[0] != len(self.classes):
            raise ClassifyError("mean and std must both be (classes, features)")
        if not np.all(self.std > 0):
            raise ClassifyError("class standard deviations must be positive")

    def distances(self, x) -> np.ndarray:
        """Standardized Euclidean distance of each row of ``x`` to each class."""
        x = _check_features(x, self.mean.shape[1])
        z = (x[:, None, :] - self.mean[None]) / self.std[None]
        return np.sqrt(np.sum(z * z, axis=-1))

    def scores(self, x) -> np.ndarray:
        return softmax(-self.distances(x))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION, "kind": self.kind, "feature_names": list(FEATURE_NAMES),
            "classes": {c: {"mean": self.mean[k].tolist(), "std": self.std[k].tolist(),
                            "count": self.counts[k] if self.counts else 0}
                        for k, c in enumerate(self.classes)},
            "class_order": list(self.classes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CentroidModel":
        order = d["class_order"]
        params = [d["classes"][c] for c in order]
        return cls(order, [p["mean"] for p in params], [p["std"] for p in params],
                   [p.get("count", 0) for p in params])


@dataclass
class LinearModel:
    classes: tuple[str, ...]
    weights: np.ndarray  # (K, F + 1), last column is the bias
    feature_mean: np.ndarray
    feature_std: np.ndarray
    loss_history: list = field(default_factory=list)

    kind = "linear"

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.weights = np.asarray(self.weights, dtype=float)
        self.feature_mean = np.asarray(self.feature_mean, dtype=float)
        self.feature_std = np.asarray(self.feature_std, dtype=float)
        f = self.feature_mean.size
        if self.weights.shape != (len(self.classes), f + 1) or self.feature_std.shape != (f,):
            raise ClassifyError("weights must be (classes, features + 1)")
        if not np.all(self.feature_std > 0):
            raise ClassifyError("feature standard deviations must be positive")

    def design(self, x) -> np.ndarray:
        x = _check_features(x, self.feature_mean.size)
        return _with_bias((x - self.feature_mean) / self.feature_std)

    def scores(self, x) -> np.ndarray:
        return softmax(self.design(x) @ self.weights.T)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION, "kind": self.kind, "feature_names": list(FEATURE_NAMES),
            "classes": {c: {"weights": self.weights[k].tolist()} for k, c in enumerate(self.classes)},
            "class_order": list(self.classes),
            "feature_mean": self.feature_mean.tolist(), "feature_std": self.feature_std.tolist(),
            "loss_history": [float(v) for v in self.loss_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        order = d["class_order"]
        return cls(order, [d["classes"][c]["weights"] for c in order], d["feature_mean"],
                   d["feature_std"], list(d.get("loss_history", [])))


def _with_bias(z: np.ndarray) -> np.ndarray:
    return np.hstack([z, np.ones((z.shape[0], 1))])


def _encode_labels(labels, classes: Sequence[str], min_per_class: int) -> np.ndarray:
    names = [ModulationScheme.parse(v).value for v in labels]
    counts = {c: 0 for c in classes}
    for v in names:
        if v not in counts:
            raise TrainingError(f"label {v} is not among the classes {list(classes)}")
        counts[v] += 1
    for c, n in counts.items():
        if n == 0:
            raise TrainingError(f"no training examples for class {c}")
        if n < min_per_class:
            raise TrainingError(f"class {c} has {n} examples, need at least {min_per_class}")
    index = {c: k for k, c in enumerate(classes)}
    return np.array([index[v] for v in names], dtype=int)


def _training_arrays(features, labels, classes, min_per_class):
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise TrainingError("features must be (examples, features) with one label per row")
    if not np.all(np.isfinite(x)):
        raise TrainingError("features must be finite")
    return x, _encode_labels(labels, classes, min_per_class)


def train_centroid(features, labels, classes: Sequence[str] = CLASS_NAMES,
                   min_per_class: int = MIN_PER_CLASS) -> CentroidModel:
    """Per-class feature mean and standard deviation (floored at 1e-6)."""
    classes = tuple(ModulationScheme.parse(c).value for c in classes)
    x, y = _training_arrays(features, labels, classes, min_per_class)
    mean = np.vstack([x[y == k].mean(axis=0) for k in range(len(classes))])
    std = np.vstack([x[y == k].std(axis=0) for k in range(len(classes))])
    counts = tuple(int(np.sum(y == k)) for k in range(len(classes)))
    return CentroidModel(classes, mean, np.maximum(std, STD_FLOOR), counts)


def loss_and_grad(weights: np.ndarray, design: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax regression and its gradient in ``weights``.

    ``design`` already carries the bias column; ``y`` holds class indices.
    """
    logits = design @ weights.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    n = design.shape[0]
    loss = float(np.mean(log_z - shifted[np.arange(n), y]))
    p = np.exp(shifted - log_z[:, None])
    p[np.arange(n), y] -= 1.0
    return loss, p.T @ design / n


def train_linear(features, labels, epochs: int = 500, lr: float = 0.5,
                 classes: Sequence[str] = CLASS_NAMES,
                 min_per_class: int = MIN_PER_CLASS) -> LinearModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with the training mean and deviation, which
    the model keeps. Weights start at zero, so training is deterministic.
    """
    if epochs < 0 or not lr > 0:
        raise TrainingError("epochs must be >= 0 and lr > 0")
    classes = tuple(ModulationScheme.parse(c).value for c in classes)
    x, y = _training_arrays(features, labels, classes, min_per_class)
    mu = x.mean(axis=0)
    sd = np.maximum(x.std(axis=0), STD_FLOOR)
    design = _with_bias((x - mu) / sd)
    w = np.zeros((len(classes), design.shape[1]))
    history = []
    for epoch in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = loss_and_grad(w, design, y)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}; try a smaller lr than {lr}")
        history.append(loss)
        with np.errstate(over="ignore", invalid="ignore"):
            w = w - lr * grad
    if not np.all(np.isfinite(w)):
        raise DivergenceError(f"weights became non-finite; try a smaller lr than {lr}")
    return LinearModel(classes, w, mu, sd, history)


def predict_scores(model, x) -> np.ndarray:
    """``(N, K)`` score matrix for feature rows or slices."""
    if isinstance(x, SignalSlice):
        x = cumulant_features(x)
    elif isinstance(x, (list, tuple)) and x and isinstance(x[0], SignalSlice):
        x = feature_matrix(x)
    return model.scores(x)


def predict(model, x) -> ClassifiedSignal:
    """Most likely class and the full score vector for one slice or feature row."""
    p = predict_scores(model, x)
    if p.shape[0] != 1:
        raise ClassifyError("predict takes a single slice; use predict_scores for batches")
    p = p[0]
    return ClassifiedSignal(model.classes[int(np.argmax(p))],
                            {c: float(v) for c, v in zip(model.classes, p)})


def model_from_dict(d: dict):
    if d.get("version") != MODEL_VERSION:
        raise ClassifyError(f"unsupported model version {d.get('version')!r}")
    if list(d.get("feature_names", [])) != list(FEATURE_NAMES):
        raise ClassifyError("model was trained on a different feature set")
    kinds = {"centroid": CentroidModel, "linear": LinearModel}
    if d.get("kind") not in kinds:
        raise ClassifyError(f"unknown model kind {d.get('kind')!r}")
    try:
        return kinds[d["kind"]].from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ClassifyError(f"malformed model: {exc}") from exc


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n")


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ClassifyError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(d)
