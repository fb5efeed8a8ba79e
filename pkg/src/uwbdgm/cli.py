"""Command-line workbench: ``uwbdgm {generate,train,evaluate,infer,project}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import evaluation as ev
from . import model as dgm
from .autodiff import CheckpointError
from .config import ConfigError, RunConfig, VariantConfig, load_config, write_config
from .dataset import (
    Dataset,
    DatasetError,
    SplitSpec,
    export_csv,
    filter_labels,
    import_csv,
    peak_normalize,
    relabel,
    split_indices,
)
from .signal_sim import gaussian_monocycle, generate_dataset


class CliError(RuntimeError):
    pass


def _resolve_config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path.parent}: {exc}") from exc


def apply_variant(d: Dataset, variant: VariantConfig) -> Dataset:
    """Filter to ``variant.keep`` class names, then merge per ``variant.merge``."""
    if variant.keep:
        unknown = [n for n in variant.keep if n not in d.class_names]
        if unknown:
            raise DatasetError(f"variant keeps unknown classes {unknown}")
        d = filter_labels(d, [d.class_names.index(n) for n in variant.keep])
    if variant.merge:
        pairs = dict(p.split(":", 1) for p in variant.merge)
        unknown = [n for n in pairs if n not in d.class_names]
        if unknown:
            raise DatasetError(f"variant merges unknown classes {unknown}")
        groups = [pairs.get(n, n) for n in d.class_names]
        names = sorted(set(groups))
        mapping = {k: names.index(g) for k, g in enumerate(groups)}
        d = relabel(d, mapping, names)
    return d


# -- generate ---------------------------------------------------------------

def cmd_generate(cfg: RunConfig, out: Path) -> Dataset:
    g = cfg.generate
    pulse = gaussian_monocycle(g.pulse_width, g.sample_interval)
    d = generate_dataset(cfg.profiles, g.per_class, (g.distance_min, g.distance_max), pulse, g.n_samples,
                         g.seed, g.name)
    _ensure_parent(out)
    try:
        export_csv(d, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from exc
    write_config(cfg, _sidecar(out, ".config.ini"))
    for k, count in d.class_counts().items():
        print(f"{d.class_names[k]:>12s} {count:6d}")
    return d


# -- train ------------------------------------------------------------------

def _model_config_for(cfg: RunConfig, d: Dataset) -> dgm.ModelConfig:
    m = cfg.model
    default = dgm.ModelConfig()
    if m.n_samples != default.n_samples and m.n_samples != d.n_samples_per_waveform:
        raise CliError(f"config n_samples={m.n_samples} but data waveforms have {d.n_samples_per_waveform}")
    if m.n_classes != default.n_classes and m.n_classes != d.n_classes:
        raise CliError(f"config n_classes={m.n_classes} but data has {d.n_classes} classes")
    return dataclasses.replace(m, n_samples=d.n_samples_per_waveform, n_classes=d.n_classes)


def _load_data(path: Path, variant: VariantConfig) -> Dataset:
    if not path.exists():
        raise CliError(f"data file {path} does not exist")
    return apply_variant(import_csv(path), variant)


def cmd_train(cfg: RunConfig, data_path: Path, out: Path) -> tuple[dgm.DgmModel, dgm.TrainLog]:
    d = _load_data(data_path, cfg.variant)
    mcfg = _model_config_for(cfg, d)
    cfg = dataclasses.replace(cfg, model=mcfg)
    train_idx, _ = split_indices(len(d), cfg.split, d.labels)
    train_x, _ = peak_normalize(d.waveforms[train_idx])
    train_set = Dataset(train_x, d.range_errors[train_idx], d.labels[train_idx], d.class_names, d.sample_interval)
    model, log = dgm.train(dgm.DgmModel(mcfg), train_set)
    _ensure_parent(out)
    extra = {
        "split": dataclasses.asdict(cfg.split),
        "variant": {k: list(v) for k, v in dataclasses.asdict(cfg.variant).items()},
        "class_names": list(d.class_names),
        "baseline": dataclasses.asdict(cfg.baseline),
    }
    dgm.save(model, out, extra)
    log.to_csv(_sidecar(out, ".log.csv"))
    write_config(cfg, _sidecar(out, ".config.ini"))
    print(f"trained {log.epochs} epochs on {len(train_set)} samples: L {log.total[0]:.6g} -> {log.total[-1]:.6g}")
    return model, log


# -- evaluate ---------------------------------------------------------------

@dataclass
class Evaluation:
    report: ev.EvalReport
    test_indices: np.ndarray
    dgm_indices: np.ndarray
    baseline_indices: np.ndarray
    cdfs: dict[str, ev.CdfTable]


def _stored_split(extra: dict) -> SplitSpec:
    try:
        return SplitSpec(**extra["split"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError("checkpoint carries no split specification") from exc


def _stored_variant(extra: dict) -> VariantConfig:
    v = extra.get("variant", {})
    return VariantConfig(keep=tuple(v.get("keep", ())), merge=tuple(v.get("merge", ())))


def evaluate_split(model: dgm.DgmModel, d: Dataset, spec: SplitSpec, baseline_cfg: bl.LinearConfig,
                   name: str = "") -> Evaluation:
    """Fit the baselines on the train part and score every method on the same test part."""
    train_idx, test_idx = split_indices(len(d), spec, d.labels)
    dgm_idx = test_idx.copy()
    base_idx = test_idx.copy()

    test_x, _ = peak_normalize(d.waveforms[dgm_idx])
    out = dgm.infer_batch(model, test_x)

    models = bl.fit_baselines(d.waveforms[train_idx], d.range_errors[train_idx], d.labels[train_idx],
                              baseline_cfg, d.n_classes)
    svr_pred, svc_pred = bl.predict_baselines(models, d.waveforms[base_idx])

    if not np.array_equal(dgm_idx, base_idx):
        raise AssertionError("DGM and baseline test index sets differ")
    truth = d.range_errors[test_idx]
    labels = d.labels[test_idx]
    dgm_m = ev.regression_metrics(truth, out.range_errors)
    dgm_m.accuracy = ev.accuracy(out.labels, labels)
    dgm_m.per_class_accuracy = ev.per_class_accuracy(out.labels, labels, d.n_classes)
    svr_m = ev.regression_metrics(truth, svr_pred)
    svc_m = ev.MethodMetrics(accuracy=ev.accuracy(svc_pred, labels),
                             per_class_accuracy=ev.per_class_accuracy(svc_pred, labels, d.n_classes))
    report = ev.EvalReport(name or d.name, int(test_idx.size), ev.mae(truth),
                           {"SVR": svr_m, "DGM": dgm_m, "SVC": svc_m})
    cdfs = {
        "unmitigated": ev.cdf(truth),
        "svr": ev.cdf(ev.residuals(truth, svr_pred)),
        "dgm": ev.cdf(ev.residuals(truth, out.range_errors)),
    }
    return Evaluation(report, test_idx, dgm_idx, base_idx, cdfs)


def cmd_evaluate(cfg: RunConfig | None, model_path: Path, data_path: Path, out_dir: Path) -> Evaluation:
    model = dgm.load(model_path)
    extra = dgm.checkpoint_extra(model_path)
    spec = _stored_split(extra)
    if cfg is not None and cfg.split != spec:
        warnings.warn(f"config split {cfg.split} differs from the split stored with the model ({spec}); "
                      "using the stored split", stacklevel=2)
    baseline_cfg = bl.LinearConfig(**extra["baseline"]) if "baseline" in extra else bl.LinearConfig()
    if cfg is not None:
        baseline_cfg = cfg.baseline
    d = _load_data(data_path, _stored_variant(extra))
    if d.n_samples_per_waveform != model.config.n_samples:
        raise CliError(f"data waveforms have {d.n_samples_per_waveform} samples, model expects "
                       f"{model.config.n_samples}")
    result = evaluate_split(model, d, spec, baseline_cfg, name=data_path.stem)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc}") from exc
    table = ev.compare([result.report])
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    ev.write_report_csv([result.report], out_dir / "report.csv")
    payload = result.report.to_dict()
    payload["class_names"] = list(d.class_names)
    payload["test_indices"] = result.test_indices.tolist()
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    for name, table_ in result.cdfs.items():
        table_.to_csv(out_dir / f"cdf_{name}.csv")
    print(table, end="")
    return result


# -- infer ------------------------------------------------------------------

def read_waveform_csv(path: Path, n_samples: int) -> np.ndarray:
    """Rows of ``n_samples`` values, or a dataset file (label and range error columns are skipped)."""
    if not path.exists():
        raise CliError(f"waveform file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][:2] == ["label", "range_error_m"]:
        rows = [r[2:] for r in rows[1:]]
    elif rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise CliError(f"{path}: no waveform rows")
    waves = []
    for i, r in enumerate(rows, start=1):
        if len(r) != n_samples:
            raise CliError(f"{path}: row {i} has {len(r)} values, model expects {n_samples}")
        try:
            waves.append([float(v) for v in r])
        except ValueError as exc:
            raise CliError(f"{path}: row {i}: {exc}") from None
    return np.array(waves)


def cmd_infer(model_path: Path, waveform_path: Path, out: Path) -> dgm.BatchInference:
    model = dgm.load(model_path)
    c = model.config
    x, _ = peak_normalize(read_waveform_csv(waveform_path, c.n_samples))
    # one row at a time: batched BLAS kernels may round differently with batch size,
    # and a row's prediction must not depend on its neighbours in the file
    rows = [dgm.infer_batch(model, row[None, :]) for row in x]
    res = dgm.BatchInference(*(np.concatenate([getattr(r, f) for r in rows])
                               for f in ("range_errors", "labels", "scores", "y", "z")))
    _ensure_parent(out)
    header = (["range_error_hat", "label_hat"] + [f"score{k}" for k in range(c.n_classes)]
              + [f"y{i}" for i in range(c.latent_range)] + [f"z{i}" for i in range(c.latent_env)])
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(x)):
            w.writerow([repr(float(res.range_errors[i])), int(res.labels[i])]
                       + [repr(float(v)) for v in res.scores[i]]
                       + [repr(float(v)) for v in res.y[i]] + [repr(float(v)) for v in res.z[i]])
    return res


# -- project ----------------------------------------------------------------

def cmd_project(model_path: Path, data_path: Path, out: Path) -> ev.Projection2D:
    model = dgm.load(model_path)
    extra = dgm.checkpoint_extra(model_path)
    d = _load_data(data_path, _stored_variant(extra))
    _, test_idx = split_indices(len(d), _stored_split(extra), d.labels)
    if test_idx.size < 3:
        raise CliError(f"projection needs at least 3 test samples, have {test_idx.size}")
    x, _ = peak_normalize(d.waveforms[test_idx])
    codes = dgm.encode(model, x)
    proj = ev.project_latent(codes.z, d.labels[test_idx])
    _ensure_parent(out)
    proj.to_csv(out)
    print(f"explained variance: u {proj.explained[0]:.4f}, v {proj.explained[1]:.4f}")
    return proj


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbdgm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", type=Path, help="INI run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, required=True, help=out_help)

    p = sub.add_parser("generate", help="synthesise a labelled waveform dataset")
    common(p, "dataset CSV to write")
    p = sub.add_parser("train", help="split, normalise and train the model")
    common(p, "checkpoint file to write")
    p.add_argument("--data", type=Path, required=True)
    p = sub.add_parser("evaluate", help="score the model and the baselines on the held-out split")
    common(p, "directory for report and CDF files")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p = sub.add_parser("infer", help="predict range error, class and codes per waveform")
    common(p, "predictions CSV to write")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="waveform CSV")
    p = sub.add_parser("project", help="2-D projection of test-set environment codes")
    common(p, "projection CSV to write")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "generate":
            if args.seed is not None:
                cfg = dataclasses.replace(cfg, generate=dataclasses.replace(cfg.generate, seed=args.seed))
            cmd_generate(cfg, args.out)
        elif args.command == "train":
            if args.seed is not None:
                cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, rng_seed=args.seed))
            cmd_train(cfg, args.data, args.out)
        elif args.command == "evaluate":
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                cmd_evaluate(cfg if args.config else None, args.model, args.data, args.out)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
        elif args.command == "infer":
            cmd_infer(args.model, args.data, args.out)
        elif args.command == "project":
            cmd_project(args.model, args.data, args.out)
    except (CliError, ConfigError, DatasetError, CheckpointError, dgm.TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
