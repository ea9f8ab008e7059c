"""HTTP facade over a loaded (dataset, cache) pair for interactive what-if
removal exploration.

Responses are memoized per (method, removal set), so identical requests
return byte-identical payloads; the exact-retrain comparison is computed
lazily once per removal set. Every numeric field also carries a
server-formatted display string so clients never do numeric work.
"""

from __future__ import annotations

import hashlib
import os
import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .baselines import retrain
from .capture import SPARSE_LINEARIZED, ProvenanceCache
from .core import LINEAR, DeletionRequest, TrainingDataset, build_schedule
from .errors import DelpropError
from .metrics import cosine_sim, l2_dist, mse, sign_flip_report, validation_accuracy
from .opt import build_eigen_cache_linear, build_eigen_cache_logistic, opt_linear, opt_logistic
from .update import priu_linear, priu_logistic, priu_sparse_logistic

PREVIEW_ROWS = 5


def fmt17(x: Optional[float]) -> Optional[str]:
    return None if x is None else format(float(x), ".17g")


class UpdateBody(BaseModel):
    method: str = "priu"
    removed: Optional[list[int]] = None
    rate: Optional[float] = None
    seed: int = 0


class WhatIfSession:
    """All mutable service state; history is append-only and guarded by a
    single writer lock."""

    def __init__(self, ds: TrainingDataset, cache: ProvenanceCache,
                 ds_val: Optional[TrainingDataset]):
        self.ds = ds
        self.cache = cache
        self.ds_val = ds_val
        self.loaded = False
        self.lock = threading.Lock()
        self.history: list = []
        self.responses: dict = {}
        self.models: dict = {}
        self.base_models: dict = {}
        self.schedule = None
        self.ecache = None

    def load(self):
        self.cache.check_dataset(self.ds)
        self.schedule = build_schedule(self.ds.n, self.cache.hp)
        self.loaded = True

    # -- methods ----------------------------------------------------------
    def available_methods(self) -> list:
        methods = ["priu", "basel"]
        if self.cache.model_kind == LINEAR and self.ds.storage_kind == "dense":
            methods.append("priu-opt")
        if self.cache.model_kind != LINEAR and self.cache.t_s is not None \
                and self.cache.entries is not None:
            methods.append("priu-opt")
        return methods

    def _run(self, method: str, req: DeletionRequest):
        if method == "basel":
            w, rep = retrain(self.ds, self.cache.hp, self.schedule, req,
                             w0=self.cache.w0)
            return w.w, rep.update_seconds
        if method == "priu":
            if self.cache.model_kind == LINEAR:
                w, rep = priu_linear(self.ds, self.cache, req)
            elif self.cache.mode == SPARSE_LINEARIZED:
                w, rep = priu_sparse_logistic(self.ds, self.cache, req)
            else:
                w, rep = priu_logistic(self.ds, self.cache, req)
            return w.w, rep.update_seconds
        if method == "priu-opt":
            if self.cache.model_kind == LINEAR:
                if self.ecache is None:
                    self.ecache = build_eigen_cache_linear(self.ds)
                w, rep = opt_linear(self.ds, self.ecache, self.cache.hp, req,
                                    w0=self.cache.w0)
            else:
                if self.ecache is None:
                    self.ecache = build_eigen_cache_logistic(self.cache)
                w, rep = opt_logistic(self.ds, self.cache, self.ecache, req)
            return w.w, rep.update_seconds
        raise HTTPException(422, f"method {method!r} not available for this model")

    def base_model(self, key: tuple, req: DeletionRequest) -> np.ndarray:
        if key not in self.base_models:
            w, _ = retrain(self.ds, self.cache.hp, self.schedule, req,
                           w0=self.cache.w0)
            self.base_models[key] = w.w
        return self.base_models[key]

    def update(self, body: UpdateBody) -> dict:
        if body.removed is not None:
            ids = body.removed
        elif body.rate is not None:
            if not 0 < body.rate < 1:
                raise HTTPException(400, f"rate must be in (0,1), got {body.rate}")
            k = max(1, int(round(body.rate * self.ds.n)))
            rng = np.random.default_rng(body.seed)
            ids = rng.choice(self.ds.n, size=k, replace=False).tolist()
        else:
            raise HTTPException(400, "provide either 'removed' ids or a 'rate'")
        ids = sorted(set(int(i) for i in ids))
        if ids and (ids[0] < 0 or ids[-1] >= self.ds.n):
            raise HTTPException(400, f"row ids must lie in [0, {self.ds.n})")
        if len(ids) >= self.ds.n:
            raise HTTPException(400, "cannot remove every training sample")
        method = body.method
        if method not in self.available_methods():
            raise HTTPException(422, f"method {method!r} not available; "
                                     f"choose from {self.available_methods()}")
        key = (method, tuple(ids))
        if key in self.responses:
            return self.responses[key]

        req = DeletionRequest(np.asarray(ids, dtype=np.int64))
        try:
            w, seconds = self._run(method, req)
        except DelpropError as exc:
            raise HTTPException(422, str(exc))
        request_id = hashlib.sha1(repr(key).encode()).hexdigest()[:16]

        if ids:
            base = self.base_model(tuple(ids), req)
            dist = l2_dist(w, base)
            cos = cosine_sim(w, base) if self.cache.model_kind != LINEAR else None
        else:
            # removing nothing: the exact retrain is this very model
            dist = 0.0
            cos = 1.0 if self.cache.model_kind != LINEAR else None
        quality = None
        if self.ds_val is not None:
            quality = mse(self.ds_val, w) if self.cache.model_kind == LINEAR \
                else validation_accuracy(self.ds_val, w)
        update_ms = seconds * 1000.0
        payload = {
            "request_id": request_id,
            "method": method,
            "removed_count": len(ids),
            "w_summary": {"l2_norm": float(np.linalg.norm(w)),
                          "head": [float(v) for v in w[:8]]},
            "l2_dist_to_base": dist,
            "cosine": cos,
            "accuracy_or_mse": quality,
            "update_ms": update_ms,
            "display": {
                "l2_dist_to_base": fmt17(dist),
                "cosine": None if cos is None else format(cos, ".3f"),
                "accuracy_or_mse": fmt17(quality),
                "update_ms": fmt17(update_ms),
            },
        }
        with self.lock:
            if key not in self.responses:
                self.responses[key] = payload
                self.models[request_id] = w
                self.history.append({"request_id": request_id, "method": method,
                                     "removed_count": len(ids)})
        return self.responses[key]

    def compare(self, a: str, b: str) -> dict:
        for rid in (a, b):
            if rid not in self.models:
                raise HTTPException(404, f"unknown request id {rid!r}")
        wa, wb = self.models[a], self.models[b]
        dist = l2_dist(wa, wb)
        cos = cosine_sim(wa, wb) if self.cache.model_kind != LINEAR else None
        flips, max_change = sign_flip_report(wa, wb)
        return {
            "a": a, "b": b,
            "l2_dist": dist,
            "cosine": cos,
            "sign_flips": flips,
            "max_magnitude_change": max_change,
            "display": {
                "l2_dist": fmt17(dist),
                "cosine": None if cos is None else format(cos, ".3f"),
                "sign_flips": str(flips),
                "max_magnitude_change": fmt17(max_change),
            },
        }

    def describe(self) -> dict:
        X = self.ds.features
        previews = []
        for i in range(min(PREVIEW_ROWS, self.ds.n)):
            row = X[i]
            row = np.asarray(row.todense()).ravel() if self.ds.storage_kind == "sparse" \
                else np.asarray(row)
            previews.append({"row": int(i),
                             "features": [float(v) for v in row[:12]],
                             "label": float(self.ds.labels[i])})
        hp = self.cache.hp
        return {
            "n": self.ds.n, "m": self.ds.m, "q": self.cache.q,
            "model_kind": self.cache.model_kind,
            "storage_kind": self.ds.storage_kind,
            "cache_mode": self.cache.mode,
            "hp": {"eta": hp.eta, "lam": hp.lam, "batch_size": hp.batch_size,
                   "iterations": hp.iterations, "seed": hp.seed},
            "methods": self.available_methods(),
            "sample_previews": previews,
            "prior_requests": list(self.history),
        }


def create_app(ds: TrainingDataset, cache: ProvenanceCache,
               ds_val: Optional[TrainingDataset] = None,
               defer_load: bool = False) -> FastAPI:
    app = FastAPI(title="delprop what-if service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[os.environ.get("DELPROP_UI_ORIGIN", "*")],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    session = WhatIfSession(ds, cache, ds_val)
    app.state.session = session
    if not defer_load:
        session.load()

    def ready() -> WhatIfSession:
        if not session.loaded:
            raise HTTPException(503, "dataset and cache still loading")
        return session

    @app.get("/session")
    def get_session():
        return ready().describe()

    @app.post("/update")
    def post_update(body: UpdateBody):
        return ready().update(body)

    @app.get("/compare")
    def get_compare(a: str, b: str):
        return ready().compare(a, b)

    return app
