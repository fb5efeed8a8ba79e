"""Labelled waveform collections: CSV interchange, relabelling, splitting, scaling.

CSV layout (UTF-8, ``.`` decimal point, one sample per line)::

    label,range_error_m,s0,s1,...,s{N-1}

The header row is optional on import and always written on export.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .waveform import Waveform


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    waveform: Waveform
    range_error: float
    env_label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of ``(waveform, range error, environment label)`` rows.

    Waveforms are stored stacked as an ``(N, N_s)`` array; :attr:`samples`
    materialises the per-row :class:`Sample` view.
    """

    waveforms: np.ndarray
    range_errors: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    sample_interval: float = 1e-9
    name: str = ""

    def __post_init__(self):
        w = np.array(self.waveforms, dtype=np.float64)
        r = np.array(self.range_errors, dtype=np.float64).reshape(-1)
        k = np.array(self.labels).reshape(-1)
        if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
            raise DatasetError("dataset must hold a non-empty (N, N_s) waveform array")
        if r.size != w.shape[0] or k.size != w.shape[0]:
            raise DatasetError("waveforms, range_errors and labels must have equal length")
        if k.size and not np.all(np.equal(np.mod(k, 1), 0)):
            raise DatasetError("labels must be integers")
        k = k.astype(np.int64)
        names = tuple(str(n) for n in self.class_names)
        if len(names) == 0 or k.min() < 0 or k.max() >= len(names):
            raise DatasetError(f"labels must lie in 0..{len(names) - 1}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(r))):
            raise DatasetError("waveforms and range errors must be finite")
        for a in (w, r, k):
            a.setflags(write=False)
        object.__setattr__(self, "waveforms", w)
        object.__setattr__(self, "range_errors", r)
        object.__setattr__(self, "labels", k)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return self.waveforms.shape[0]

    def __getitem__(self, i: int) -> Sample:
        wave = Waveform(self.waveforms[i], self.sample_interval)
        return Sample(wave, float(self.range_errors[i]), int(self.labels[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_samples_per_waveform(self) -> int:
        return self.waveforms.shape[1]

    def class_counts(self) -> dict[int, int]:
        return {k: int(np.sum(self.labels == k)) for k in range(self.n_classes)}

    def subset(self, indices: Sequence[int]) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.waveforms[idx], self.range_errors[idx], self.labels[idx],
                       self.class_names, self.sample_interval, self.name)

    def identical_to(self, other: Dataset) -> bool:
        """Bit-level equality of every stored array and the class names."""
        return (
            self.class_names == other.class_names
            and self.sample_interval == other.sample_interval
            and self.waveforms.shape == other.waveforms.shape
            and self.waveforms.tobytes() == other.waveforms.tobytes()
            and self.range_errors.tobytes() == other.range_errors.tobytes()
            and np.array_equal(self.labels, other.labels)
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], class_names: Sequence[str], name: str = "") -> Dataset:
        if not samples:
            raise DatasetError("cannot build a dataset from zero samples")
        lengths = {len(s.waveform) for s in samples}
        if len(lengths) != 1:
            raise DatasetError(f"waveforms have differing lengths {sorted(lengths)}")
        return cls(
            np.stack([s.waveform.samples for s in samples]),
            np.array([s.range_error for s in samples]),
            np.array([s.env_label for s in samples]),
            tuple(class_names),
            samples[0].waveform.sample_interval,
            name,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    rng_seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DatasetError("train_fraction must lie strictly between 0 and 1")


def _label_sort_key(names: Iterable[str]):
    names = list(names)
    try:
        [int(n) for n in names]
    except ValueError:
        return lambda n: (0, n)
    return lambda n: (int(n), n)


def _parse_float(text: str, lineno: int, column: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"line {lineno}, column {column + 1}: non-numeric value {text!r}") from None


def import_csv(path, sample_interval: float = 1e-9, name: str | None = None) -> Dataset:
    """Read a dataset file; labels are remapped to ``0..K-1`` in sorted order."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    first = rows[0]
    if len(first) >= 2:
        try:
            float(first[1])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: header but no data rows")
    width = len(rows[0])
    if width < 3:
        raise DatasetError(f"{path}: rows need a label, a range error and at least one waveform value")
    raw_labels, errors, waves = [], [], []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DatasetError(f"{path}: ragged row {lineno} has {len(row)} fields, expected {width}")
        raw_labels.append(row[0].strip())
        errors.append(_parse_float(row[1], lineno, 1))
        waves.append([_parse_float(v, lineno, j + 2) for j, v in enumerate(row[2:])])
    names = sorted(set(raw_labels), key=_label_sort_key(raw_labels))
    index = {n: i for i, n in enumerate(names)}
    return Dataset(
        np.array(waves, dtype=np.float64),
        np.array(errors, dtype=np.float64),
        np.array([index[n] for n in raw_labels], dtype=np.int64),
        tuple(names),
        sample_interval,
        path.stem if name is None else name,
    )


def export_csv(d: Dataset, path) -> None:
    """Write ``d`` using shortest round-trip float formatting."""
    header = ["label", "range_error_m"] + [f"s{i}" for i in range(d.n_samples_per_waveform)]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for wave, err, lab in zip(d.waveforms, d.range_errors, d.labels):
            writer.writerow([d.class_names[lab], repr(float(err))] + [repr(float(v)) for v in wave])


def relabel(d: Dataset, mapping: Mapping[int, int], class_names: Sequence[str] | None = None) -> Dataset:
    """Merge or rename classes.

    ``mapping`` must cover every label ``0..K-1``.  Target values are
    compacted to ``0..K'-1`` preserving their sort order.  Without explicit
    ``class_names`` each merged class is named by joining its members with
    ``+``.
    """
    missing = [k for k in range(d.n_classes) if k not in mapping]
    if missing:
        raise DatasetError(f"partial mapping: labels {missing} have no target")
    targets = sorted({int(mapping[k]) for k in range(d.n_classes)})
    compact = {t: i for i, t in enumerate(targets)}
    lut = np.array([compact[int(mapping[k])] for k in range(d.n_classes)], dtype=np.int64)
    if class_names is None:
        names = tuple("+".join(d.class_names[k] for k in range(d.n_classes) if lut[k] == i)
                      for i in range(len(targets)))
    else:
        names = tuple(class_names)
        if len(names) != len(targets):
            raise DatasetError(f"expected {len(targets)} class names, got {len(names)}")
    return Dataset(d.waveforms, d.range_errors, lut[d.labels], names, d.sample_interval, d.name)


def filter_labels(d: Dataset, keep: Iterable[int]) -> Dataset:
    """Keep only samples whose label is in ``keep``; labels are compacted."""
    keep = sorted({int(k) for k in keep})
    bad = [k for k in keep if not 0 <= k < d.n_classes]
    if bad:
        raise DatasetError(f"unknown labels {bad}")
    mask = np.isin(d.labels, keep)
    if not mask.any():
        raise DatasetError("filter removed every sample")
    lut = np.full(d.n_classes, -1, dtype=np.int64)
    lut[keep] = np.arange(len(keep))
    return Dataset(d.waveforms[mask], d.range_errors[mask], lut[d.labels[mask]],
                   tuple(d.class_names[k] for k in keep), d.sample_interval, d.name)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def split_indices(n: int, spec: SplitSpec, labels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sorted, disjoint train/test index arrays covering ``range(n)``."""
    if n < 2:
        raise DatasetError("need at least two samples to split")
    rng = np.random.default_rng(spec.rng_seed)
    if spec.stratified:
        if labels is None:
            raise DatasetError("stratified split needs labels")
        train = []
        for k in np.unique(labels):
            members = np.flatnonzero(labels == k)
            perm = rng.permutation(members)
            train.append(perm[: _round_half_up(spec.train_fraction * members.size)])
        train_idx = np.sort(np.concatenate(train))
    else:
        n_train = _round_half_up(spec.train_fraction * n)
        train_idx = np.sort(rng.permutation(n)[:n_train])
    mask = np.zeros(n, dtype=bool)
    mask[train_idx] = True
    test_idx = np.flatnonzero(~mask)
    if train_idx.size == 0 or test_idx.size == 0:
        raise DatasetError(f"split of {n} samples at fraction {spec.train_fraction} leaves an empty side")
    return train_idx, test_idx


def split(d: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(d), spec or SplitSpec(), d.labels)
    return d.subset(train_idx), d.subset(test_idx)


def peak_normalize(waveforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Divide each row by its peak absolute value; returns ``(scaled, peaks)``."""
    w = np.asarray(waveforms, dtype=np.float64)
    squeeze = w.ndim == 1
    w2 = np.atleast_2d(w)
    peaks = np.abs(w2).max(axis=1)
    if np.any(peaks == 0):
        raise DatasetError(f"cannot normalise all-zero waveform(s) at rows {np.flatnonzero(peaks == 0).tolist()}")
    scaled = w2 / peaks[:, None]
    return (scaled[0], peaks) if squeeze else (scaled, peaks)


def normalize(d: Dataset) -> tuple[Dataset, np.ndarray]:
    """Per-waveform unit-peak scaling; the second value holds the divisors."""
    scaled, peaks = peak_normalize(d.waveforms)
    return Dataset(scaled, d.range_errors, d.labels, d.class_names, d.sample_interval, d.name), peaks
