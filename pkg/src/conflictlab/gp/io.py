"""Model (de)serialisation as a single JSON document.

Floats go through Python's shortest round-trip repr, so every stored value
reloads bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..context import FeatureStats
from .exact import ExactState, GPModel
from .kernel import KernelParams
from .sparse import SparseState

FILE_SCHEMA_VERSION = "1"


def save_model(model: GPModel, path: str | Path) -> None:
    doc = {
        "file_schema_version": FILE_SCHEMA_VERSION,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "feature_schema_hash": model.feature_schema_hash,
        "mean_const": model.mean_const,
        "kernel": {
            "lengthscales": model.kernel.lengthscales.tolist(),
            "signal_variance": model.kernel.signal_variance,
            "noise_variance": model.kernel.noise_variance,
        },
        "feature_stats": {
            "mean": model.feature_stats.mean.tolist(),
            "std": model.feature_stats.std.tolist(),
            "zero_variance": model.feature_stats.zero_variance.tolist(),
        },
    }
    if model.kind == "exact":
        state = model.exact
        doc["exact"] = {
            "X": state.X.tolist(),
            "y": state.y.tolist(),
            "chol": state.chol.tolist(),
            "alpha": state.alpha.tolist(),
            "jitter": state.jitter,
        }
    else:
        state = model.sparse
        doc["sparse"] = {
            "inducing": state.inducing.tolist(),
            "q_mean": state.q_mean.tolist(),
            "q_chol": state.q_chol.tolist(),
            "beta": state.beta,
        }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> GPModel:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("file_schema_version") != FILE_SCHEMA_VERSION:
        raise ValueError(f"{path.name}: unsupported model file schema")
    kernel = KernelParams(
        lengthscales=np.array(doc["kernel"]["lengthscales"], dtype=float),
        signal_variance=doc["kernel"]["signal_variance"],
        noise_variance=doc["kernel"]["noise_variance"],
    )
    stats = FeatureStats(
        mean=np.array(doc["feature_stats"]["mean"], dtype=float),
        std=np.array(doc["feature_stats"]["std"], dtype=float),
        zero_variance=np.array(doc["feature_stats"]["zero_variance"], dtype=bool),
    )
    exact = sparse = None
    if doc["kind"] == "exact":
        e = doc["exact"]
        exact = ExactState(
            X=np.array(e["X"], dtype=float),
            y=np.array(e["y"], dtype=float),
            chol=np.array(e["chol"], dtype=float),
            alpha=np.array(e["alpha"], dtype=float),
            jitter=e["jitter"],
        )
    else:
        s = doc["sparse"]
        sparse = SparseState(
            inducing=np.array(s["inducing"], dtype=float),
            q_mean=np.array(s["q_mean"], dtype=float),
            q_chol=np.array(s["q_chol"], dtype=float),
            beta=s["beta"],
        )
    return GPModel(
        kind=doc["kind"],
        kernel=kernel,
        mean_const=doc["mean_const"],
        feature_stats=stats,
        feature_names=tuple(doc["feature_names"]),
        feature_schema_hash=doc["feature_schema_hash"],
        exact=exact,
        sparse=sparse,
    )
