"""Dataset ingestion, dirty-sample injection, deletion-rate sweeps and
report rendering: the operator surface for benchmarking the update methods
against retraining.
"""

from __future__ import annotations

import csv
import json
import math
import time

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .baselines import closed_form_linear, infl_update, retrain
from .capture import DENSE_FULL, SPARSE_LINEARIZED, capture
from .core import (BINARY_LOGISTIC, LINEAR, MODEL_KINDS, DeletionRequest,
                   Hyperparams, TrainingDataset, build_schedule)
from .errors import ConfigError, DataError, DelpropError
from .linearizer import InterpolationTable, extract_coeffs
from .metrics import cosine_sim, l2_dist, mse, validation_accuracy
from .opt import build_eigen_cache_linear, opt_linear, opt_logistic
from .trainer import train
from .update import priu_linear, priu_logistic, priu_sparse_logistic

REPORT_SCHEMA_VERSION = 1
DEFAULT_RATES = (0.0001, 0.001, 0.01, 0.1, 0.2)
ALL_METHODS = ("priu", "priu-opt", "basel", "closed-form", "infl")


# ---------------------------------------------------------------------------
# Ingestion

def _open_data(path: str, newline=None):
    try:
        return open(path, newline=newline)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}")


def _parse_float(token: str, path: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse {token!r} as a number")


def _map_labels(raw: np.ndarray, model_kind: str, path: str) -> tuple[np.ndarray, int]:
    distinct = np.unique(raw)
    if model_kind == LINEAR:
        return raw, 1
    if model_kind == BINARY_LOGISTIC:
        if len(distinct) != 2:
            raise DataError(
                f"{path}: binary model needs exactly 2 distinct labels, found {len(distinct)}")
        return raw, 1
    q = len(distinct)
    if q < 2:
        raise DataError(f"{path}: multinomial model needs at least 2 classes")
    lut = {v: i for i, v in enumerate(distinct.tolist())}
    return np.array([lut[v] for v in raw.tolist()], dtype=np.float64), q


def ingest(path: str, format: str = "csv", label_spec: Optional[dict] = None) -> TrainingDataset:
    """Load a CSV (dense) or LIBSVM (sparse) file into a dataset.

    ``label_spec`` keys: ``column`` (CSV label column index, default -1),
    ``model`` (model kind, default linear), ``standardize`` (dense only).
    Multinomial labels are remapped onto 0..q-1 by sorted value; binary {0,1}
    is remapped to -1/+1 at dataset construction.
    """
    spec = dict(label_spec or {})
    model_kind = spec.get("model", LINEAR)
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model_kind!r}")
    if format == "csv":
        return _ingest_csv(path, spec, model_kind)
    if format == "libsvm":
        return _ingest_libsvm(path, spec, model_kind)
    raise ConfigError(f"unknown dataset format {format!r}")


def _ingest_csv(path: str, spec: dict, model_kind: str) -> TrainingDataset:
    label_col = spec.get("column", -1)
    rows = []
    with _open_data(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and any(_non_numeric(c) for c in row)):
                continue  # skip header / blank lines
            rows.append([_parse_float(c, path, lineno) for c in row])
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {k + 1} has {len(row)} fields, expected {width}")
    data = np.asarray(rows, dtype=np.float64)
    label_col = label_col % width
    y = data[:, label_col]
    X = np.delete(data, label_col, axis=1)
    if spec.get("standardize"):
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    y, q = _map_labels(y, model_kind, path)
    return TrainingDataset(X, y, np.arange(len(y)), model_kind, num_classes=q)


def _non_numeric(token: str) -> bool:
    try:
        float(token)
        return False
    except ValueError:
        return True


def _ingest_libsvm(path: str, spec: dict, model_kind: str) -> TrainingDataset:
    if spec.get("standardize"):
        raise ConfigError("standardization is supported for dense CSV data only")
    labels = []
    rows, cols, vals = [], [], []
    max_col = 0
    with _open_data(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            labels.append(_parse_float(parts[0], path, lineno))
            for item in parts[1:]:
                if ":" not in item:
                    raise DataError(f"{path}:{lineno}: malformed feature {item!r}")
                idx, val = item.split(":", 1)
                try:
                    col = int(idx)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad feature index {idx!r}")
                if col < 1:
                    raise DataError(f"{path}:{lineno}: feature indices are 1-based")
                rows.append(len(labels) - 1)
                cols.append(col - 1)
                vals.append(_parse_float(val, path, lineno))
                max_col = max(max_col, col)
    if not labels:
        raise DataError(f"{path}: no data rows")
    n = len(labels)
    m = spec.get("num_features", max_col)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
    y, q = _map_labels(np.asarray(labels), model_kind, path)
    return TrainingDataset(X, y, np.arange(n), model_kind, num_classes=q)


def split_dataset(ds: TrainingDataset, fraction: float, seed: int
                  ) -> tuple[TrainingDataset, TrainingDataset]:
    """Seeded shuffle-split into training and validation parts."""
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must be in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    cut = max(1, int(round(fraction * ds.n)))
    cut = min(cut, ds.n - 1)
    tr, va = perm[:cut], perm[cut:]

    def take(idx):
        X = ds.features[idx]
        return TrainingDataset(X, ds.labels[idx], ds.tokens[idx],
                               ds.model_kind, ds.num_classes)
    return take(np.sort(tr)), take(np.sort(va))


def inject_errors(ds: TrainingDataset, rate: float, factor: float = 10.0,
                  seed: int = 0) -> tuple[TrainingDataset, np.ndarray]:
    """Rescale ceil(rate * n) uniformly chosen feature rows by ``factor``;
    the returned indices are the deletion set for the cleaning scenario."""
    if not 0 < rate < 1:
        raise ConfigError(f"error rate must be in (0,1), got {rate}")
    k = math.ceil(rate * ds.n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(ds.n, size=k, replace=False))
    if sp.issparse(ds.features):
        X = ds.features.tolil(copy=True)
        X[idx] = X[idx] * factor
        X = X.tocsr()
    else:
        X = np.array(ds.features, copy=True)
        X[idx] *= factor
    dirty = TrainingDataset(X, ds.labels, ds.tokens, ds.model_kind, ds.num_classes)
    return dirty, idx


# ---------------------------------------------------------------------------
# Sweep

@dataclass
class ExperimentConfig:
    data_path: str
    data_format: str = "csv"
    label_column: int = -1
    model_kind: str = LINEAR
    standardize: bool = False
    split: float = 0.9
    eta: Optional[float] = None
    lam: float = 0.01
    batch_size: int = 50
    iterations: int = 200
    seed: int = 0
    rates: tuple = DEFAULT_RATES
    methods: tuple = ALL_METHODS
    repeats: int = 0              # > 0 switches to the repeated-removal scenario
    repeat_rate: float = 0.001
    error_factor: float = 10.0
    cache_mode: str = DENSE_FULL
    epsilon: float = 0.01
    ts_fraction: float = 0.7
    output: str = "sweep-report"

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ConfigError(f"split must be in (0,1), got {self.split}")
        for r in self.rates:
            if not 0 < r < 1:
                raise ConfigError(f"deletion rates must be in (0,1), got {r}")
        bad = set(self.methods) - set(ALL_METHODS)
        if bad:
            raise ConfigError(f"unknown methods: {sorted(bad)}")

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        p = Path(path)
        if p.suffix == ".toml":
            raw = tomllib.loads(p.read_text())
        else:
            raw = json.loads(p.read_text())
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for key in ("rates", "methods"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ExperimentConfig(**raw)


def _method_applicable(method: str, ds: TrainingDataset) -> bool:
    if method == "closed-form":
        return ds.model_kind == LINEAR
    if method in ("priu-opt", "infl"):
        return ds.storage_kind == "dense"
    return True


def _run_method(method: str, ds, cache, sched, run, req, ecache_linear,
                cfg: ExperimentConfig):
    """Returns (w, seconds). Timing covers only the update computation."""
    if method == "basel":
        t0 = time.perf_counter()
        w, _ = retrain(ds, run.hp, sched, req)
        return w, time.perf_counter() - t0
    if method == "closed-form":
        t0 = time.perf_counter()
        w = closed_form_linear(ds, run.hp.lam, req)
        return w, time.perf_counter() - t0
    if method == "infl":
        t0 = time.perf_counter()
        w = infl_update(ds, run.hp, run.final, req)
        return w, time.perf_counter() - t0
    if method == "priu":
        if ds.model_kind == LINEAR:
            w, rep = priu_linear(ds, cache, req)
        elif cache.mode == SPARSE_LINEARIZED:
            w, rep = priu_sparse_logistic(ds, cache, req)
        else:
            w, rep = priu_logistic(ds, cache, req)
        return w, rep.update_seconds
    if method == "priu-opt":
        if ds.model_kind == LINEAR:
            w, rep = opt_linear(ds, ecache_linear, run.hp, req)
        else:
            w, rep = opt_logistic(ds, cache, None, req)
        return w, rep.update_seconds
    raise ConfigError(f"unknown method {method!r}")


def _quality(ds_val, w, model_kind):
    if model_kind == LINEAR:
        return {"mse": mse(ds_val, w)}
    return {"accuracy": validation_accuracy(ds_val, w)}


def _cell(cfg, method, ds, ds_val, cache, sched, run, req, ecache, w_base):
    record = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "method": method,
        "removed": int(req.count),
        "rate": req.count / ds.n,
    }
    try:
        w, seconds = _run_method(method, ds, cache, sched, run, req, ecache, cfg)
        record["update_seconds"] = seconds
        record.update(_quality(ds_val, w.w, ds.model_kind))
        if w_base is not None:
            record["l2_dist_to_basel"] = l2_dist(w.w, w_base.w)
            if ds.model_kind != LINEAR:
                record["cosine_to_basel"] = cosine_sim(w.w, w_base.w)
        return record, w
    except DelpropError as exc:
        record["error"] = str(exc)
        return record, None


def _prepare(cfg: ExperimentConfig, ds_train: TrainingDataset):
    hp = Hyperparams(cfg.eta, cfg.lam, cfg.batch_size, cfg.iterations,
                     cfg.seed, ds_train.model_kind)
    sched = build_schedule(ds_train.n, hp)
    run = train(ds_train, hp, sched)
    coeffs = None
    t_s = None
    if ds_train.model_kind != LINEAR:
        coeffs = extract_coeffs(ds_train, run, InterpolationTable())
        if "priu-opt" in cfg.methods:
            t_s = int(cfg.ts_fraction * cfg.iterations)
    mode = cfg.cache_mode
    if ds_train.storage_kind == "sparse" and ds_train.model_kind != LINEAR:
        mode = SPARSE_LINEARIZED
    cache = capture(ds_train, run, coeffs=coeffs, mode=mode,
                    epsilon=cfg.epsilon, t_s=t_s)
    ecache = None
    if "priu-opt" in cfg.methods and ds_train.model_kind == LINEAR \
            and ds_train.storage_kind == "dense":
        ecache = build_eigen_cache_linear(ds_train)
    return run, sched, cache, ecache


def run_sweep(cfg: ExperimentConfig) -> list:
    """Execute the configured sweep; writes <output>.jsonl and <output>.csv
    and returns the records."""
    full = ingest(cfg.data_path, cfg.data_format,
                  {"column": cfg.label_column, "model": cfg.model_kind,
                   "standardize": cfg.standardize})
    ds_clean, ds_val = split_dataset(full, cfg.split, cfg.seed)
    methods = [m for m in cfg.methods if _method_applicable(m, ds_clean)]
    records = []

    if cfg.repeats > 0:
        run, sched, cache, ecache = _prepare(cfg, ds_clean)
        totals = {m: 0.0 for m in methods}
        rng = np.random.default_rng(cfg.seed + 1)
        k = max(1, int(round(cfg.repeat_rate * ds_clean.n)))
        for rep_idx in range(cfg.repeats):
            req = DeletionRequest(rng.choice(ds_clean.n, size=k, replace=False),
                                  label=f"subset-{rep_idx}")
            w_base, _ = retrain(ds_clean, run.hp, sched, req)
            for method in methods:
                record, _ = _cell(cfg, method, ds_clean, ds_val, cache, sched,
                                  run, req, ecache, w_base)
                record["subset"] = rep_idx
                if "update_seconds" in record:
                    totals[method] += record["update_seconds"]
                records.append(record)
        for method, total in totals.items():
            records.append({"schema_version": REPORT_SCHEMA_VERSION,
                            "method": method, "aggregate": "sum",
                            "subsets": cfg.repeats,
                            "total_update_seconds": total})
    else:
        for rate_idx, rate in enumerate(cfg.rates):
            dirty, injected = inject_errors(ds_clean, rate, cfg.error_factor,
                                            seed=cfg.seed + 1000 + rate_idx)
            run, sched, cache, ecache = _prepare(cfg, dirty)
            req = DeletionRequest(injected, label=f"rate-{rate}")
            w_base, base_seconds = None, None
            if "basel" in methods:
                t0 = time.perf_counter()
                w_base, _ = retrain(dirty, run.hp, sched, req)
                base_seconds = time.perf_counter() - t0
            for method in methods:
                if method == "basel" and w_base is not None:
                    record = {"schema_version": REPORT_SCHEMA_VERSION,
                              "method": "basel", "removed": int(req.count),
                              "rate": rate, "update_seconds": base_seconds}
                    record.update(_quality(ds_val, w_base.w, dirty.model_kind))
                    record["l2_dist_to_basel"] = 0.0
                    if dirty.model_kind != LINEAR:
                        record["cosine_to_basel"] = 1.0
                else:
                    record, _ = _cell(cfg, method, dirty, ds_val, cache, sched,
                                      run, req, ecache, w_base)
                    record["rate"] = rate
                records.append(record)

    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{out}.jsonl", "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _write_csv(records, f"{out}.csv")
    return records


def _write_csv(records: list, path: str) -> None:
    keys = sorted({k for r in records for k in r})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in records:
            writer.writerow(r)


# ---------------------------------------------------------------------------
# Rendering

_SVG_W, _SVG_H, _MARGIN = 640, 400, 60
_COLORS = {"priu": "#1f77b4", "priu-opt": "#2ca02c", "basel": "#d62728",
           "closed-form": "#9467bd", "infl": "#ff7f0e"}


def _svg_line_plot(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Deterministic hand-rolled SVG: one polyline per series over log-x."""
    pts = [(x, y) for vals in series.values() for x, y in vals]
    if not pts:
        return ("<svg xmlns='http://www.w3.org/2000/svg' width='640' height='400'>"
                f"<text x='20' y='30'>{title}: no data</text></svg>")
    xs = [math.log10(p[0]) for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs) or 1e-9
    y0, y1 = 0.0, max(ys) or 1e-9
    if x1 == x0:
        x1 = x0 + 1.0

    def sx(x):
        return _MARGIN + (math.log10(x) - x0) / (x1 - x0) * (_SVG_W - 2 * _MARGIN)

    def sy(y):
        return _SVG_H - _MARGIN - (y - y0) / (y1 - y0) * (_SVG_H - 2 * _MARGIN)

    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{_SVG_W}' height='{_SVG_H}'>",
             f"<text x='{_SVG_W // 2}' y='24' text-anchor='middle' font-size='16'>{title}</text>",
             f"<line x1='{_MARGIN}' y1='{_SVG_H - _MARGIN}' x2='{_SVG_W - _MARGIN}' "
             f"y2='{_SVG_H - _MARGIN}' stroke='black'/>",
             f"<line x1='{_MARGIN}' y1='{_MARGIN}' x2='{_MARGIN}' "
             f"y2='{_SVG_H - _MARGIN}' stroke='black'/>",
             f"<text x='{_SVG_W // 2}' y='{_SVG_H - 16}' text-anchor='middle' "
             f"font-size='12'>{xlabel}</text>",
             f"<text x='16' y='{_SVG_H // 2}' font-size='12' "
             f"transform='rotate(-90 16 {_SVG_H // 2})'>{ylabel}</text>"]
    for li, (name, vals) in enumerate(sorted(series.items())):
        color = _COLORS.get(name, "#333333")
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(vals))
        parts.append(f"<polyline fill='none' stroke='{color}' stroke-width='2' "
                     f"points='{coords}'/>")
        for x, y in vals:
            parts.append(f"<circle cx='{sx(x):.2f}' cy='{sy(y):.2f}' r='3' "
                         f"fill='{color}'/>")
        parts.append(f"<text x='{_SVG_W - _MARGIN + 4}' y='{_MARGIN + 16 * li}' "
                     f"font-size='12' fill='{color}'>{name}</text>")
    parts.append("</svg>")
    return "\n".join(parts)


def report_render(report_path: str, out_dir: str) -> list:
    """Render update-time plots and a metric table from a JSONL report.
    Returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with _open_data(report_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{report_path}:{lineno}: malformed record: {exc}")
    paths = []
    times: dict = {}
    for r in records:
        if "rate" in r and "update_seconds" in r and "method" in r:
            times.setdefault(r["method"], []).append((r["rate"], r["update_seconds"]))
    svg = _svg_line_plot(times, "Update time by deletion rate",
                         "deletion rate (log scale)", "seconds")
    svg_path = out / "update_time_vs_rate.svg"
    svg_path.write_text(svg)
    paths.append(str(svg_path))

    table_path = out / "metrics.txt"
    cols = ("method", "rate", "update_seconds", "l2_dist_to_basel",
            "cosine_to_basel", "mse", "accuracy", "error")
    lines = ["\t".join(cols)]
    for r in records:
        if "aggregate" in r:
            continue
        lines.append("\t".join(_fmt_cell(r.get(c)) for c in cols))
    table_path.write_text("\n".join(lines) + "\n")
    paths.append(str(table_path))
    return paths


def _fmt_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)
