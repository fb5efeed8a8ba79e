"""Error metrics, residual CDFs, comparison tables and 2-D latent projections."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TABLE_COLUMNS = (
    "Unmitigated MAE",
    "SVR RMSE",
    "SVR MAE",
    "DGM RMSE",
    "DGM MAE",
    "SVC Accuracy",
    "DGM Accuracy",
)


def _nonempty(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{what} is empty")
    return arr


def residuals(true_errors, predicted_errors) -> np.ndarray:
    """Remaining range error after mitigation, ``(d_M - dd_hat) - d = dd - dd_hat``."""
    t = _nonempty(true_errors, "true errors")
    p = _nonempty(predicted_errors, "predicted errors")
    if t.shape != p.shape:
        raise ValueError("true and predicted errors differ in length")
    return t - p


def rmse(res) -> float:
    r = _nonempty(res, "residuals")
    scale = float(np.max(np.abs(r)))
    if scale == 0.0:
        return 0.0
    # scaling first keeps tiny or huge residuals from under/overflowing when squared
    return scale * float(np.sqrt(np.mean((r / scale) ** 2)))


def mae(res) -> float:
    r = _nonempty(res, "residuals")
    return float(np.mean(np.abs(r)))


def accuracy(pred, true) -> float:
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(true).reshape(-1)
    if p.size == 0:
        raise ValueError("no predictions")
    if p.shape != t.shape:
        raise ValueError("prediction and label arrays differ in length")
    return float(np.mean(p == t))


def per_class_accuracy(pred, true, n_classes: int) -> list[float | None]:
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(true).reshape(-1)
    out: list[float | None] = []
    for k in range(n_classes):
        mask = t == k
        out.append(float(np.mean(p[mask] == k)) if mask.any() else None)
    return out


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Empirical CDF of absolute residuals: ``fractions[i] = P(|r| <= values[i])``."""

    values: np.ndarray
    fractions: np.ndarray

    def __call__(self, t: float) -> float:
        n_le = np.searchsorted(self.values, t, side="right")
        return float(self.fractions[n_le - 1]) if n_le > 0 else 0.0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "fraction"])
            for v, f in zip(self.values, self.fractions):
                w.writerow([repr(float(v)), repr(float(f))])


def cdf(res) -> CdfTable:
    a = np.sort(np.abs(_nonempty(res, "residuals")))
    n = a.size
    # collapse ties so each distinct value appears once with its full step
    last = np.r_[a[1:] != a[:-1], True]
    values = a[last]
    fractions = (np.flatnonzero(last) + 1) / n
    return CdfTable(values, fractions)


@dataclass(frozen=True, eq=False)
class Projection2D:
    coords: np.ndarray  # (n, 2)
    labels: np.ndarray
    explained: np.ndarray  # fraction of total variance on each axis
    components: np.ndarray  # (2, D) principal directions
    center: np.ndarray

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "v", "label"])
            for (u, v), k in zip(self.coords, self.labels):
                w.writerow([repr(float(u)), repr(float(v)), int(k)])


def project_latent(codes, labels) -> Projection2D:
    """Project codes onto their two leading principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    z = np.asarray(codes, dtype=np.float64)
    k = np.asarray(labels).reshape(-1)
    if z.ndim != 2 or z.shape[0] < 3:
        raise ValueError("need at least three codes as an (n, D) array")
    if z.shape[1] < 2:
        raise ValueError("codes must have at least two dimensions")
    if k.size != z.shape[0]:
        raise ValueError("labels and codes differ in length")
    center = z.mean(axis=0)
    zc = z - center
    cov = zc.T @ zc / (z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    total = float(np.sum(np.clip(evals, 0.0, None)))
    if total <= 0.0:
        raise ValueError("codes have zero variance (rank 0); nothing to project")
    order = np.argsort(evals)[::-1][:2]
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    explained = np.clip(evals[order], 0.0, None) / total
    return Projection2D(zc @ comps.T, k, explained, comps, center)


def class_separation(proj: Projection2D) -> tuple[float, float]:
    """``(min centroid distance, mean distance of points to their class centroid)``."""
    classes = np.unique(proj.labels)
    cents = {c: proj.coords[proj.labels == c].mean(axis=0) for c in classes}
    spread = float(np.mean([np.linalg.norm(proj.coords[proj.labels == c] - cents[c], axis=1).mean()
                            for c in classes]))
    dists = [np.linalg.norm(cents[a] - cents[b]) for i, a in enumerate(classes) for b in classes[i + 1:]]
    return float(min(dists)) if dists else 0.0, spread


@dataclass
class MethodMetrics:
    rmse: float | None = None
    mae: float | None = None
    accuracy: float | None = None
    per_class_accuracy: list | None = None


@dataclass
class EvalReport:
    dataset: str
    n_samples: int
    unmitigated_mae: float | None = None
    methods: dict[str, MethodMetrics] = field(default_factory=dict)

    def row(self) -> list[float | None]:
        def get(method, attr):
            m = self.methods.get(method)
            return None if m is None else getattr(m, attr)

        return [self.unmitigated_mae, get("SVR", "rmse"), get("SVR", "mae"), get("DGM", "rmse"),
                get("DGM", "mae"), get("SVC", "accuracy"), get("DGM", "accuracy")]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_samples": self.n_samples,
            "unmitigated_mae": self.unmitigated_mae,
            "methods": {k: vars(v) for k, v in self.methods.items()},
        }


def regression_metrics(true_errors, predicted) -> MethodMetrics:
    r = residuals(true_errors, predicted)
    return MethodMetrics(rmse=rmse(r), mae=mae(r))


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.4f}"


def compare(reports: Iterable[EvalReport]) -> str:
    """Render one row per scenario in the comparison-table column order.

    Missing metrics are left blank; cells are separated by ``|``.
    """
    reports = list(reports)
    names = [r.dataset for r in reports]
    name_w = max([len("Scenario")] + [len(n) for n in names])
    col_w = [max(len(c), 6) for c in TABLE_COLUMNS]
    header = " | ".join(["Scenario".ljust(name_w)] + [c.rjust(w) for c, w in zip(TABLE_COLUMNS, col_w)])
    lines = [header, "-" * len(header)]
    for r in reports:
        cells = [_fmt(v).rjust(w) for v, w in zip(r.row(), col_w)]
        lines.append(" | ".join([r.dataset.ljust(name_w)] + cells))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[tuple[str, list[float | None]]]:
    """Inverse of :func:`compare` (to the printed 4-decimal precision)."""
    rows = []
    for line in text.splitlines()[2:]:
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split("|")]
        rows.append((cells[0], [float(c) if c else None for c in cells[1:]]))
    return rows


def write_report_csv(reports: Sequence[EvalReport], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "n_samples"] + [c.lower().replace(" ", "_") for c in TABLE_COLUMNS])
        for r in reports:
            w.writerow([r.dataset, r.n_samples] + ["" if v is None else repr(float(v)) for v in r.row()])


def table_fixture_room_full() -> EvalReport:
    """Published Room Full figures, used to check table rendering."""
    return EvalReport(
        dataset="Room Full",
        n_samples=0,
        unmitigated_mae=0.1084,
        methods={
            "SVR": MethodMetrics(rmse=0.1553, mae=0.0895),
            "DGM": MethodMetrics(rmse=0.0568, mae=0.0163, accuracy=0.6203),
            "SVC": MethodMetrics(accuracy=0.4859),
        },
    )
