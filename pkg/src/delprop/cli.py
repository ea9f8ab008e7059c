"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .baselines import closed_form_linear, infl_update, retrain
from .bench import (ExperimentConfig, ingest, inject_errors, report_render,
                    run_sweep)
from .capture import (DENSE_FULL, MODES, SPARSE_LINEARIZED, capture,
                      cache_stats, load_cache, save_cache)
from .core import (DeletionRequest, Hyperparams, LINEAR, MODEL_KINDS,
                   build_schedule)
from .errors import ConfigError, DataError, DelpropError, NumericError
from .linearizer import InterpolationTable, extract_coeffs
from .opt import build_eigen_cache_linear, opt_linear, opt_logistic
from .trainer import train
from .update import priu_linear, priu_logistic, priu_sparse_logistic


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--format", default="csv", choices=("csv", "libsvm"))
    p.add_argument("--label-col", type=int, default=-1,
                   help="CSV label column (default: last)")
    p.add_argument("--model", default=LINEAR, choices=MODEL_KINDS)
    p.add_argument("--standardize", action="store_true")


def _hp_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float, default=None,
                   help="learning rate (default: 0.9 / estimated L)")
    p.add_argument("--lam", type=float, default=0.01, help="L2 rate")
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)


def _load(args):
    return ingest(args.data, args.format,
                  {"column": args.label_col, "model": args.model,
                   "standardize": args.standardize})


def _hp(args, model_kind):
    return Hyperparams(args.eta, args.lam, args.batch_size, args.iterations,
                       args.seed, model_kind)


def _train_run(ds, hp):
    sched = build_schedule(ds.n, hp)
    return train(ds, hp, sched), sched


def cmd_train(args) -> int:
    ds = _load(args)
    run, _ = _train_run(ds, _hp(args, ds.model_kind))
    payload = {
        "w": run.final.w.tolist(),
        "eta": run.hp.eta,
        "lam": run.hp.lam,
        "batch_size": run.hp.batch_size,
        "iterations": run.hp.iterations,
        "seed": run.hp.seed,
        "model_kind": ds.model_kind,
        "final_objective": run.objective_trace[-1],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"trained {ds.model_kind} model on {ds.n}x{ds.m}; "
          f"objective {run.objective_trace[-1]:.6g} -> {args.out}")
    return 0


def cmd_capture(args) -> int:
    ds = _load(args)
    hp = _hp(args, ds.model_kind)
    run, _ = _train_run(ds, hp)
    coeffs = None
    if ds.model_kind != LINEAR:
        coeffs = extract_coeffs(ds, run, InterpolationTable())
    mode = args.mode
    if mode is None:
        mode = SPARSE_LINEARIZED if (ds.storage_kind == "sparse"
                                     and ds.model_kind != LINEAR) else DENSE_FULL
    t_s = None
    if args.ts_fraction is not None:
        t_s = int(args.ts_fraction * hp.iterations)
    cache = capture(ds, run, coeffs=coeffs, mode=mode, epsilon=args.epsilon,
                    t_s=t_s)
    save_cache(cache, args.out)
    stats = cache_stats(cache)
    print(f"captured {mode} cache ({stats['total_bytes']} bytes, "
          f"avg rank {stats['average_rank']}) -> {args.out}")
    return 0


def _parse_removal(args, ds) -> DeletionRequest:
    if args.remove.startswith("rate:"):
        rate = float(args.remove.split(":", 1)[1])
        if not 0 < rate < 1:
            raise ConfigError(f"removal rate must be in (0,1), got {rate}")
        k = max(1, int(round(rate * ds.n)))
        rng = np.random.default_rng(args.remove_seed)
        return DeletionRequest(rng.choice(ds.n, size=k, replace=False),
                               label=args.remove)
    with open(args.remove) as fh:
        ids = [int(tok) for tok in fh.read().split()]
    return DeletionRequest(ids, label=args.remove)


def cmd_update(args) -> int:
    ds = _load(args)
    cache = load_cache(args.cache)
    req = _parse_removal(args, ds)
    hp = cache.hp
    method = args.method
    if method == "basel":
        sched = build_schedule(ds.n, hp)
        w, rep = retrain(ds, hp, sched, req, w0=cache.w0)
        seconds = rep.update_seconds
    elif method == "closed-form":
        if cache.model_kind != LINEAR:
            raise ConfigError("closed-form applies to the linear model only")
        import time
        t0 = time.perf_counter()
        w = closed_form_linear(ds, hp.lam, req)
        seconds = time.perf_counter() - t0
    elif method == "infl":
        # the no-deletion replay reproduces the trained parameters
        empty = DeletionRequest([])
        if cache.model_kind == LINEAR:
            w_full, _ = priu_linear(ds, cache, empty)
        elif cache.mode == SPARSE_LINEARIZED:
            w_full, _ = priu_sparse_logistic(ds, cache, empty)
        else:
            w_full, _ = priu_logistic(ds, cache, empty)
        import time
        t0 = time.perf_counter()
        w = infl_update(ds, hp, w_full, req)
        seconds = time.perf_counter() - t0
    elif method == "priu":
        if cache.model_kind == LINEAR:
            w, rep = priu_linear(ds, cache, req)
        elif cache.mode == SPARSE_LINEARIZED:
            w, rep = priu_sparse_logistic(ds, cache, req)
        else:
            w, rep = priu_logistic(ds, cache, req)
        seconds = rep.update_seconds
    elif method == "priu-opt":
        if cache.model_kind == LINEAR:
            ec = build_eigen_cache_linear(ds)
            w, rep = opt_linear(ds, ec, hp, req, w0=cache.w0)
        else:
            w, rep = opt_logistic(ds, cache, None, req)
        seconds = rep.update_seconds
    else:
        raise ConfigError(f"unknown method {method!r}")

    payload = {"method": method, "removed": int(req.count),
               "update_seconds": seconds, "w": w.w.tolist()}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    print(f"{method}: removed {req.count} samples in {seconds:.6f}s"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def cmd_inject_errors(args) -> int:
    ds = _load(args)
    dirty, idx = inject_errors(ds, args.rate, args.factor, args.seed)
    X = dirty.features
    if dirty.storage_kind == "sparse":
        with open(args.out_data, "w") as fh:
            for i in range(dirty.n):
                row = X.getrow(i)
                feats = " ".join(f"{c + 1}:{v!r}" for c, v in
                                 zip(row.indices.tolist(), row.data.tolist()))
                fh.write(f"{dirty.labels[i]!r} {feats}\n")
    else:
        with open(args.out_data, "w") as fh:
            for i in range(dirty.n):
                cells = [repr(v) for v in X[i].tolist()] + [repr(float(dirty.labels[i]))]
                fh.write(",".join(cells) + "\n")
    with open(args.out_indices, "w") as fh:
        fh.write("\n".join(str(i) for i in idx.tolist()) + "\n")
    print(f"rescaled {len(idx)} rows by {args.factor} -> {args.out_data}; "
          f"indices -> {args.out_indices}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        cfg.output = args.out
    records = run_sweep(cfg)
    errors = sum(1 for r in records if "error" in r)
    print(f"wrote {len(records)} records ({errors} cell errors) -> "
          f"{cfg.output}.jsonl / {cfg.output}.csv")
    return 0


def cmd_render(args) -> int:
    paths = report_render(args.report, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    ds = _load(args)
    cache = load_cache(args.cache)
    ds_val = None
    if args.val_data:
        ds_val = ingest(args.val_data, args.format,
                        {"column": args.label_col, "model": args.model,
                         "standardize": args.standardize})
    app = create_app(ds, cache, ds_val)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delprop",
                                 description="train, capture and incrementally "
                                             "update models under sample deletion")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    _hp_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("capture", help="train and persist the update cache")
    _data_args(p)
    _hp_args(p)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--ts-fraction", type=float, default=None,
                   help="freeze coefficients at this fraction of tau")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("update", help="apply a deletion to a cached model")
    _data_args(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--method", required=True,
                   choices=("priu", "priu-opt", "basel", "closed-form", "infl"))
    p.add_argument("--remove", required=True,
                   help="file of row ids, or rate:<fraction>")
    p.add_argument("--remove-seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("inject-errors", help="rescale a random subset of rows")
    _data_args(p)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--factor", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-data", required=True)
    p.add_argument("--out-indices", required=True)
    p.set_defaults(func=cmd_inject_errors)

    p = sub.add_parser("sweep", help="run the configured deletion-rate sweep")
    p.add_argument("--config", required=True, help="JSON or TOML config")
    p.add_argument("--out", default=None, help="override output prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="render plots/tables from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="start the what-if HTTP service")
    _data_args(p)
    p.add_argument("--cache", required=True)
    p.add_argument("--val-data", default=None,
                   help="separate validation file for accuracy/MSE fields")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8100)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except DelpropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
