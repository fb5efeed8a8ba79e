"""Two-latent waveform autoencoder with a range-error estimator and an environment classifier.

The encoder maps a waveform to a bottleneck whose first ``latent_range`` units
form the range code ``y`` and the remaining ``latent_env`` units the
environment code ``z``.  The estimator sees only ``y``; the classifier sees
only ``z``; the decoder reconstructs the waveform from both.  All four
networks are trained jointly on

    L = w_rec * sum ||x - x_hat||^2 + w_est * sum (dd_hat - dd)^2 + w_cls * L_cls

where ``L_cls`` is by default the squared distance between the softmax score
vector and the one-hot label.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import CheckpointError, ParamStore, Tensor
from .dataset import Dataset
from .waveform import Waveform

GROUPS = ("encoder", "decoder", "estimator", "classifier")
CLASSIFIER_LOSSES = ("squared_error", "cross_entropy")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_samples: int = 152
    n_classes: int = 2
    latent_range: int = 16
    latent_env: int = 16
    encoder_channels: tuple[int, ...] = (8, 16, 32)
    encoder_kernel: int = 5
    encoder_stride: int = 2
    # (rows, cols) folds each waveform into a grid and switches the encoder to 2-D convolutions
    input_grid: tuple[int, ...] | None = None
    grid_kernel: int = 3
    decoder_hidden: int = 64
    decoder_channels: int = 8
    estimator_hidden: int = 32
    classifier_hidden: int = 32
    w_rec: float = 1.0
    w_est: float = 1.0
    w_cls: float = 1.0
    w_kl: float = 0.0
    classifier_loss_kind: str = "squared_error"
    learning_rate: float = 1e-4
    momentum: float = 0.9
    # multiplicative learning-rate factor applied after every epoch
    lr_decay: float = 1.0
    batch_size: int = 32
    epochs: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if self.latent_range < 1 or self.latent_env < 1:
            raise ValueError("latent widths must be >= 1")
        if self.n_classes < 1 or self.n_samples < 1:
            raise ValueError("n_classes and n_samples must be >= 1")
        if min(self.w_rec, self.w_est, self.w_cls, self.w_kl) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.classifier_loss_kind not in CLASSIFIER_LOSSES:
            raise ValueError(f"classifier_loss_kind must be one of {CLASSIFIER_LOSSES}")
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.input_grid is not None:
            grid = tuple(int(g) for g in self.input_grid)
            if len(grid) != 2 or grid[0] * grid[1] != self.n_samples:
                raise ValueError(f"input_grid {grid} must be two extents whose product is n_samples")
            object.__setattr__(self, "input_grid", grid)

    @property
    def latent_dim(self) -> int:
        return self.latent_range + self.latent_env

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["encoder_channels"] = list(self.encoder_channels)
        out["input_grid"] = None if self.input_grid is None else list(self.input_grid)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "encoder_channels" in d:
            d["encoder_channels"] = tuple(d["encoder_channels"])
        if d.get("input_grid") is not None:
            d["input_grid"] = tuple(d["input_grid"])
        return cls(**d)

    def architecture(self) -> dict:
        """Fields that determine parameter shapes."""
        keys = ("n_samples", "n_classes", "latent_range", "latent_env", "encoder_channels", "encoder_kernel",
                "encoder_stride", "input_grid", "grid_kernel", "decoder_hidden", "decoder_channels",
                "estimator_hidden", "classifier_hidden")
        d = self.to_dict()
        return {k: d[k] for k in keys}


@dataclass(frozen=True, eq=False)
class LatentCodes:
    y: np.ndarray
    z: np.ndarray


class LossTerms(NamedTuple):
    total: Tensor
    rec: Tensor
    est: Tensor
    cls: Tensor


class Inference(NamedTuple):
    range_error: float
    label: int
    scores: np.ndarray
    codes: LatentCodes


@dataclass
class TrainLog:
    total: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    est: list[float] = field(default_factory=list)
    cls: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.total)

    def rows(self):
        for i in range(self.epochs):
            yield i + 1, self.total[i], self.rec[i], self.est[i], self.cls[i]

    def same_trajectory(self, other: TrainLog) -> bool:
        return list(self.rows()) == list(other.rows())

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "L", "L_rec", "L_est", "L_cls"])
            for epoch, *vals in self.rows():
                w.writerow([epoch] + [repr(v) for v in vals])

    @classmethod
    def from_csv(cls, path) -> TrainLog:
        log = cls()
        with open(Path(path), newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                log.total.append(float(row[1]))
                log.rec.append(float(row[2]))
                log.est.append(float(row[3]))
                log.cls.append(float(row[4]))
        return log


def _conv_out(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


class DgmModel:
    """Parameters plus the forward maps of encoder, decoder and both heads."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamStore()
        self._build(np.random.default_rng(config.rng_seed))

    # -- construction -------------------------------------------------

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        p = self.params
        in_ch = 1
        if c.input_grid is None:
            length = c.n_samples
            for i, ch in enumerate(c.encoder_channels):
                out_len = _conv_out(length, c.encoder_kernel, c.encoder_stride)
                if out_len < 1:
                    raise ValueError(f"encoder layer {i} leaves no samples; n_samples={c.n_samples} is too short")
                fan_in = in_ch * c.encoder_kernel
                p.add(f"enc.conv{i}.w", ad.he_uniform(rng, (ch, in_ch, c.encoder_kernel), fan_in), "encoder")
                p.add(f"enc.conv{i}.b", np.zeros((ch, 1)), "encoder")
                in_ch, length = ch, out_len
            flat = in_ch * length
        else:
            h, w = c.input_grid
            for i, ch in enumerate(c.encoder_channels):
                h, w = h - c.grid_kernel + 1, w - c.grid_kernel + 1
                if h < 1 or w < 1:
                    raise ValueError(f"2-D encoder layer {i} leaves an empty grid")
                fan_in = in_ch * c.grid_kernel**2
                p.add(f"enc.conv{i}.w", ad.he_uniform(rng, (ch, in_ch, c.grid_kernel, c.grid_kernel), fan_in),
                      "encoder")
                p.add(f"enc.conv{i}.b", np.zeros((ch, 1, 1)), "encoder")
                in_ch = ch
            flat = in_ch * h * w
        p.add("enc.fc.w", ad.he_uniform(rng, (flat, c.latent_dim), flat), "encoder")
        p.add("enc.fc.b", np.zeros(c.latent_dim), "encoder")

        # decoder: two dense layers, x2 nearest upsampling, one valid conv down to n_samples
        self._dec_len = (c.n_samples + 1) // 2 + 2
        self._dec_kernel = 2 * self._dec_len - c.n_samples + 1
        dec_flat = c.decoder_channels * self._dec_len
        p.add("dec.fc0.w", ad.he_uniform(rng, (c.latent_dim, c.decoder_hidden), c.latent_dim), "decoder")
        p.add("dec.fc0.b", np.zeros(c.decoder_hidden), "decoder")
        p.add("dec.fc1.w", ad.he_uniform(rng, (c.decoder_hidden, dec_flat), c.decoder_hidden), "decoder")
        p.add("dec.fc1.b", np.zeros(dec_flat), "decoder")
        p.add("dec.conv.w", ad.he_uniform(rng, (1, c.decoder_channels, self._dec_kernel),
                                          c.decoder_channels * self._dec_kernel), "decoder")
        p.add("dec.conv.b", np.zeros((1, 1)), "decoder")

        p.add("est.fc0.w", ad.he_uniform(rng, (c.latent_range, c.estimator_hidden), c.latent_range), "estimator")
        p.add("est.fc0.b", np.zeros(c.estimator_hidden), "estimator")
        p.add("est.fc1.w", ad.he_uniform(rng, (c.estimator_hidden, 1), c.estimator_hidden), "estimator")
        p.add("est.fc1.b", np.zeros(1), "estimator")

        p.add("cls.fc0.w", ad.he_uniform(rng, (c.latent_env, c.classifier_hidden), c.latent_env), "classifier")
        p.add("cls.fc0.b", np.zeros(c.classifier_hidden), "classifier")
        p.add("cls.fc1.w", ad.he_uniform(rng, (c.classifier_hidden, c.n_classes), c.classifier_hidden),
              "classifier")
        p.add("cls.fc1.b", np.zeros(c.n_classes), "classifier")

    def copy(self) -> DgmModel:
        other = copy.copy(self)
        other.params = ParamStore()
        for name, t in self.params.items():
            other.params.add(name, t.data.copy(), self.params.group_of(name))
        return other

    # -- forward pieces (tensor level) --------------------------------

    def encoder(self, x) -> Tensor:
        """``(B, n_samples)`` waveforms to the ``(B, D_r + D_e)`` bottleneck."""
        c, p = self.config, self.params
        x = ad.as_tensor(x)
        batch = x.shape[0]
        if c.input_grid is None:
            h = ad.reshape(x, (batch, 1, c.n_samples))
            for i in range(len(c.encoder_channels)):
                h = ad.relu(ad.add(ad.conv1d(h, p[f"enc.conv{i}.w"], c.encoder_stride), p[f"enc.conv{i}.b"]))
        else:
            h = ad.reshape(x, (batch, 1) + tuple(c.input_grid))
            for i in range(len(c.encoder_channels)):
                h = ad.relu(ad.add(ad.conv2d(h, p[f"enc.conv{i}.w"]), p[f"enc.conv{i}.b"]))
        return ad.linear(ad.flatten(h), p["enc.fc.w"], p["enc.fc.b"])

    def split_codes(self, bottleneck: Tensor) -> tuple[Tensor, Tensor]:
        c = self.config
        y = ad.take_columns(bottleneck, 0, c.latent_range)
        z = ad.take_columns(bottleneck, c.latent_range, c.latent_dim)
        return y, z

    def decoder(self, codes) -> Tensor:
        c, p = self.config, self.params
        codes = ad.as_tensor(codes)
        batch = codes.shape[0]
        h = ad.relu(ad.linear(codes, p["dec.fc0.w"], p["dec.fc0.b"]))
        h = ad.relu(ad.linear(h, p["dec.fc1.w"], p["dec.fc1.b"]))
        h = ad.upsample1d(ad.reshape(h, (batch, c.decoder_channels, self._dec_len)), 2)
        h = ad.add(ad.conv1d(h, p["dec.conv.w"]), p["dec.conv.b"])
        return ad.reshape(h, (batch, c.n_samples))

    def estimator(self, y) -> Tensor:
        """Range code ``(B, D_r)`` to range-error estimates ``(B,)``."""
        p = self.params
        h = ad.relu(ad.linear(y, p["est.fc0.w"], p["est.fc0.b"]))
        out = ad.linear(h, p["est.fc1.w"], p["est.fc1.b"])
        return ad.reshape(out, (out.shape[0],))

    def classifier_logits(self, z) -> Tensor:
        p = self.params
        h = ad.relu(ad.linear(z, p["cls.fc0.w"], p["cls.fc0.b"]))
        return ad.linear(h, p["cls.fc1.w"], p["cls.fc1.b"])


def _as_batch(model: DgmModel, waveforms) -> np.ndarray:
    if isinstance(waveforms, Waveform):
        waveforms = waveforms.samples
    x = np.asarray(waveforms, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.n_samples:
        raise ValueError(f"expected waveforms of length {model.config.n_samples}, got shape {x.shape}")
    return x


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def composite_loss(x, x_hat, range_errors, range_pred, labels, class_logits, config: ModelConfig,
                   codes=None) -> LossTerms:
    """Weighted sum of reconstruction, estimator and classifier losses.

    ``class_logits`` are the raw classifier outputs; the squared-error
    variant compares their softmax against one-hot labels.
    """
    target = one_hot(labels, config.n_classes)
    rec = ad.sum_squared_error(x_hat, ad.as_tensor(x))
    est = ad.sum_squared_error(range_pred, ad.as_tensor(np.asarray(range_errors, dtype=np.float64)))
    if config.classifier_loss_kind == "squared_error":
        cls = ad.sum_squared_error(ad.softmax(class_logits), Tensor(target))
    else:
        cls = ad.mul(ad.tensor_sum(ad.mul(ad.log_softmax(class_logits), Tensor(target))), -1.0)
    total = ad.add(ad.add(ad.mul(rec, config.w_rec), ad.mul(est, config.w_est)), ad.mul(cls, config.w_cls))
    if config.w_kl > 0 and codes is not None:
        # KL(N(code, I) || N(0, I)) up to a constant
        total = ad.add(total, ad.mul(ad.sum_squared_error(codes, Tensor(np.zeros(codes.shape))), 0.5 * config.w_kl))
    return LossTerms(total, rec, est, cls)


def loss(model: DgmModel, waveforms, range_errors, labels) -> LossTerms:
    x = _as_batch(model, waveforms)
    if len(x) == 0:
        raise ValueError("empty batch")
    labels = np.asarray(labels)
    if labels.size != len(x) or np.asarray(range_errors).size != len(x):
        raise ValueError("batch arrays differ in length")
    if labels.max() >= model.config.n_classes or labels.min() < 0:
        raise ValueError(f"label outside 0..{model.config.n_classes - 1}")
    bottleneck = model.encoder(x)
    y, z = model.split_codes(bottleneck)
    return composite_loss(x, model.decoder(bottleneck), range_errors, model.estimator(y), labels,
                          model.classifier_logits(z), model.config, codes=bottleneck)


def train(model: DgmModel, train_set: Dataset, config: ModelConfig | None = None) -> tuple[DgmModel, TrainLog]:
    """Joint minibatch SGD over all four parameter groups.

    ``model`` is left untouched; the trained copy is returned with its log.
    Optimisation settings come from ``config`` when given, otherwise from the
    model's own config.
    """
    cfg = model.config if config is None else config
    if model.config.architecture() != cfg.architecture():
        raise ValueError("training config disagrees with the model architecture")
    if train_set.n_samples_per_waveform != cfg.n_samples:
        raise ValueError(f"dataset waveforms have length {train_set.n_samples_per_waveform}, "
                         f"model expects {cfg.n_samples}")
    if train_set.n_classes > cfg.n_classes:
        raise ValueError(f"dataset has {train_set.n_classes} classes, model only {cfg.n_classes}")
    trained = model.copy()
    trained.config = cfg
    opt = ad.SGD(trained.params, cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng([cfg.rng_seed, 1])
    x_all, r_all, k_all = train_set.waveforms, train_set.range_errors, train_set.labels
    n = len(train_set)
    log = TrainLog()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = rng.permutation(n)
        sums = np.zeros(4)
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            try:
                terms = loss(trained, x_all[idx], r_all[idx], k_all[idx])
                trained.params.zero_grad()
                ad.backward(terms.total)
                trained.params.fill_missing_grads()
                opt.step()
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch + 1}, batch starting {b0}: {exc}; "
                    f"try a smaller learning rate (currently {cfg.learning_rate})"
                ) from exc
            sums += [terms.total.item(), terms.rec.item(), terms.est.item(), terms.cls.item()]
        log.total.append(float(sums[0]))
        log.rec.append(float(sums[1]))
        log.est.append(float(sums[2]))
        log.cls.append(float(sums[3]))
    log.wall_time = time.perf_counter() - start
    return trained, log


def encode(model: DgmModel, x) -> LatentCodes:
    batch = _as_batch(model, x)
    y, z = model.split_codes(model.encoder(batch))
    if batch.shape[0] == 1 and (isinstance(x, Waveform) or np.ndim(x) == 1):
        return LatentCodes(y.data[0].copy(), z.data[0].copy())
    return LatentCodes(y.data.copy(), z.data.copy())


def decode(model: DgmModel, codes: LatentCodes) -> Waveform | np.ndarray:
    c = model.config
    y, z = np.asarray(codes.y, dtype=np.float64), np.asarray(codes.z, dtype=np.float64)
    single = y.ndim == 1
    y2, z2 = np.atleast_2d(y), np.atleast_2d(z)
    if y2.shape[1] != c.latent_range or z2.shape[1] != c.latent_env or y2.shape[0] != z2.shape[0]:
        raise ValueError(f"codes must have widths ({c.latent_range}, {c.latent_env}), got "
                         f"({y2.shape[-1]}, {z2.shape[-1]})")
    out = model.decoder(np.concatenate([y2, z2], axis=1)).data
    return Waveform(out[0]) if single else out


def estimate_from_range_code(model: DgmModel, y) -> np.ndarray:
    return model.estimator(np.atleast_2d(np.asarray(y, dtype=np.float64))).data.copy()


def scores_from_env_code(model: DgmModel, z) -> np.ndarray:
    return ad.softmax(model.classifier_logits(np.atleast_2d(np.asarray(z, dtype=np.float64)))).data.copy()


def predict_from_codes(model: DgmModel, codes: LatentCodes) -> tuple[np.ndarray, np.ndarray]:
    """Range-error estimates from ``codes.y`` and class scores from ``codes.z``."""
    return estimate_from_range_code(model, codes.y), scores_from_env_code(model, codes.z)


@dataclass(frozen=True, eq=False)
class BatchInference:
    range_errors: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    y: np.ndarray
    z: np.ndarray


def infer_batch(model: DgmModel, waveforms) -> BatchInference:
    """Encode once, then run the estimator on ``y`` and the classifier on ``z``."""
    if model is None or not isinstance(model, DgmModel):
        raise TypeError("infer needs a constructed or loaded DgmModel")
    x = _as_batch(model, waveforms)
    y, z = model.split_codes(model.encoder(x))
    dd = model.estimator(y).data
    scores = ad.softmax(model.classifier_logits(z)).data
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return BatchInference(dd.copy(), np.argmax(scores, axis=1), scores.copy(), y.data.copy(), z.data.copy())


def infer(model: DgmModel, x) -> Inference:
    out = infer_batch(model, x)
    return Inference(float(out.range_errors[0]), int(out.labels[0]), out.scores[0],
                     LatentCodes(out.y[0], out.z[0]))


def save(model: DgmModel, path, extra: dict | None = None) -> None:
    """Write a checkpoint; ``extra`` is stored verbatim (must be JSON-serialisable)."""
    meta = {"kind": "uwbdgm.DgmModel", "config": model.config.to_dict(), "extra": extra or {}}
    ad.save_checkpoint(path, model.params, meta)


def load(path, config: ModelConfig | None = None) -> DgmModel:
    """Rebuild a model from a checkpoint.

    Passing ``config`` asserts the checkpoint matches that architecture.
    """
    meta, values = ad.read_checkpoint(path)
    if meta.get("kind") != "uwbdgm.DgmModel":
        raise CheckpointError(f"{path}: not a DGM checkpoint")
    stored = ModelConfig.from_dict(meta["config"])
    if config is not None and config.architecture() != stored.architecture():
        diff = {k: (v, stored.architecture()[k]) for k, v in config.architecture().items()
                if stored.architecture()[k] != v}
        raise CheckpointError(f"{path}: checkpoint architecture differs from requested config: "
                              + ", ".join(f"{k} requested {a!r} stored {b!r}" for k, (a, b) in diff.items()))
    model = DgmModel(stored)
    for name in values:
        if name not in model.params:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
    for name in model.params:
        if meta["groups"].get(name) != model.params.group_of(name):
            raise CheckpointError(f"{path}: parameter {name!r} stored in the wrong group")
    model.params.load_snapshot(values)
    return model


def checkpoint_extra(path) -> dict:
    meta, _ = ad.read_checkpoint(path)
    return meta.get("extra", {})
