"""Hand-crafted waveform features with linear regression/classification baselines.

The regressor (SVR stand-in) minimises mean squared error plus an L2 penalty;
the classifier (SVC stand-in) minimises multiclass logistic or hinge loss plus
an L2 penalty.  Both run full-batch gradient descent on standardised features.
"""

from __future__ import annotations

import csv
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_NAMES = ("energy", "max_amplitude", "rise_time", "mean_excess_delay", "rms_delay_spread", "kurtosis")
RISE_THRESHOLD = 0.1


@dataclass(frozen=True)
class FeatureVector:
    energy: float
    max_amplitude: float
    rise_time: float
    mean_excess_delay: float
    rms_delay_spread: float
    kurtosis: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES])


def extract_features(x) -> FeatureVector:
    """Energy, peak, rise time and delay statistics of one waveform.

    Delays are in samples and measured from the first sample whose magnitude
    reaches 10 % of the peak; the power profile ``x**2 / energy`` serves as
    the delay distribution.  Kurtosis is the (non-excess) kurtosis of ``|x|``.
    """
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    mag = np.abs(x)
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        raise ValueError("cannot extract features from an all-zero waveform")
    energy = float(np.dot(x, x))
    i_peak = int(np.argmax(mag))
    i_first = int(np.argmax(mag >= RISE_THRESHOLD * peak))
    p = x * x / energy
    t = np.arange(x.size) - i_first
    mean_delay = float(np.dot(p, t))
    spread = float(np.sqrt(max(np.dot(p, (t - mean_delay) ** 2), 0.0)))
    centred = mag - mag.mean()
    var = np.mean(centred**2)
    kurt = float(np.mean(centred**4) / var**2) if var > 0 else 0.0
    return FeatureVector(energy, float(peak), float(i_peak - i_first), mean_delay, spread, kurt)


def feature_matrix(waveforms) -> np.ndarray:
    return np.stack([extract_features(w).as_array() for w in np.atleast_2d(waveforms)])


def write_feature_csv(path, features: np.ndarray, range_errors=None, labels=None) -> None:
    cols = list(FEATURE_NAMES)
    extra = []
    if range_errors is not None:
        extra.append(("range_error_m", np.asarray(range_errors)))
    if labels is not None:
        extra.append(("label", np.asarray(labels)))
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + [name for name, _ in extra])
        for i, row in enumerate(np.atleast_2d(features)):
            w.writerow([repr(float(v)) for v in row] + [repr(col[i].item()) for _, col in extra])


@dataclass(frozen=True)
class LinearConfig:
    learning_rate: float = 0.1
    epochs: int = 2000
    l2: float = 1e-3
    loss: str = "logistic"  # classifier only: "logistic" or "hinge"


DEFAULT_LINEAR = LinearConfig()


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``scores = W @ standardise(features)[kept] + b``."""

    weights: np.ndarray  # (outputs, kept features)
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    kept: np.ndarray  # boolean mask over the raw feature columns

    def standardize(self, features) -> np.ndarray:
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return (f[:, self.kept] - self.mean) / self.std

    def decision(self, features) -> np.ndarray:
        return self.standardize(features) @ self.weights.T + self.bias

    def predict_value(self, features) -> np.ndarray:
        return self.decision(features)[:, 0]

    def predict_label(self, features) -> np.ndarray:
        return np.argmax(self.decision(features), axis=1)


def _standardization(features: np.ndarray):
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[0] < 2:
        raise ValueError("need at least two training rows")
    mean = f.mean(axis=0)
    std = f.std(axis=0)
    kept = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    if not kept.all():
        dropped = [FEATURE_NAMES[i] if f.shape[1] == len(FEATURE_NAMES) else str(i) for i in np.flatnonzero(~kept)]
        warnings.warn(f"dropping constant feature columns: {dropped}", RuntimeWarning, stacklevel=3)
    if not kept.any():
        raise ValueError("every feature column is constant")
    return mean[kept], std[kept], kept


def regression_objective(model: LinearModel, features, targets, l2: float) -> float:
    resid = model.predict_value(features) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(resid**2) + l2 * np.sum(model.weights**2))


def train_svr(features, range_errors, config: LinearConfig = DEFAULT_LINEAR) -> LinearModel:
    """Ridge regression by full-batch gradient descent.

    Weights start at zero and the bias at the target mean, so zero epochs
    yields the constant mean predictor.
    """
    mean, std, kept = _standardization(features)
    y = np.asarray(range_errors, dtype=np.float64).reshape(-1)
    X = (np.atleast_2d(features)[:, kept] - mean) / std
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = float(y.mean())
    for _ in range(config.epochs):
        resid = X @ w + b - y
        grad_w = 2.0 / n * (X.T @ resid) + 2.0 * config.l2 * w
        grad_b = 2.0 / n * resid.sum()
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b
    return LinearModel(w[None, :], np.array([b]), mean, std, kept)


def classification_objective(model: LinearModel, features, labels, config: LinearConfig) -> float:
    scores = model.decision(features)
    k = np.asarray(labels, dtype=np.int64)
    n = scores.shape[0]
    if config.loss == "hinge":
        margins = scores - scores[np.arange(n), k][:, None] + 1.0
        margins[np.arange(n), k] = 0.0
        data = np.mean(np.maximum(margins, 0.0).max(axis=1))
    else:
        shifted = scores - scores.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        data = -np.mean(logp[np.arange(n), k])
    return float(data + config.l2 * np.sum(model.weights**2))


def train_svc(features, labels, config: LinearConfig = DEFAULT_LINEAR, n_classes: int | None = None) -> LinearModel:
    """Multiclass linear classifier; ``config.loss`` picks logistic or hinge."""
    if config.loss not in ("logistic", "hinge"):
        raise ValueError(f"unknown classifier loss {config.loss!r}")
    k = np.asarray(labels, dtype=np.int64).reshape(-1)
    if np.unique(k).size < 2:
        raise ValueError("classifier training set contains a single class")
    n_classes = int(k.max()) + 1 if n_classes is None else n_classes
    mean, std, kept = _standardization(features)
    X = (np.atleast_2d(features)[:, kept] - mean) / std
    n = X.shape[0]
    rows = np.arange(n)
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    for _ in range(config.epochs):
        scores = X @ W.T + b
        if config.loss == "hinge":
            # Crammer-Singer: push the true score above the strongest rival by a unit margin
            margins = scores - scores[rows, k][:, None] + 1.0
            margins[rows, k] = -np.inf
            rival = np.argmax(margins, axis=1)
            active = margins[rows, rival] > 0
            g = np.zeros_like(scores)
            g[rows[active], rival[active]] += 1.0
            g[rows[active], k[active]] -= 1.0
        else:
            shifted = scores - scores.max(axis=1, keepdims=True)
            prob = np.exp(shifted)
            prob /= prob.sum(axis=1, keepdims=True)
            g = prob
            g[rows, k] -= 1.0
        g /= n
        W -= config.learning_rate * (g.T @ X + 2.0 * config.l2 * W)
        b -= config.learning_rate * g.sum(axis=0)
    return LinearModel(W, b, mean, std, kept)


@dataclass(frozen=True, eq=False)
class BaselineModels:
    regressor: LinearModel
    classifier: LinearModel


def fit_baselines(waveforms, range_errors, labels, config: LinearConfig = DEFAULT_LINEAR,
                  n_classes: int | None = None) -> BaselineModels:
    f = feature_matrix(waveforms)
    return BaselineModels(train_svr(f, range_errors, config), train_svc(f, labels, config, n_classes))


def predict_baselines(models: BaselineModels, waveforms) -> tuple[np.ndarray, np.ndarray]:
    f = feature_matrix(waveforms)
    return models.regressor.predict_value(f), models.classifier.predict_label(f)


def permute_features(model: LinearModel, perm: Sequence[int]) -> LinearModel:
    """Express ``model`` over features reordered by ``perm`` (new column j is old ``perm[j]``)."""
    perm = np.asarray(perm)
    kept_new = model.kept[perm]
    # positions of kept old columns inside the compacted parameter arrays
    slot = np.cumsum(model.kept) - 1
    order = slot[perm[kept_new]]
    return LinearModel(model.weights[:, order], model.bias, model.mean[order], model.std[order], kept_new)
