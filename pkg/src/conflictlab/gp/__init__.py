"""Gaussian-process inference from interaction context to ln(s)."""

from __future__ import annotations

import numpy as np

from ..context import ContextVector, schema_hash
from ..proximity import LognormalParams
from .exact import ExactState, GPModel, exact_predict, fit_exact, log_marginal_likelihood
from .io import load_model, save_model
from .kernel import GPFitError, KernelParams
from .sparse import (
    SparseFitConfig,
    SparseState,
    TrainingHistory,
    fit_sparse,
    kl_divergence,
    objective_and_grads,
    sparse_predict,
)


class SchemaMismatchError(ValueError):
    """Raised when a context does not match the model's feature schema."""


def _theta_matrix(model: GPModel, theta) -> np.ndarray:
    if isinstance(theta, ContextVector):
        if model.feature_schema_hash != schema_hash():
            raise SchemaMismatchError(
                "model was trained on a different feature schema than ContextVector"
            )
        return theta.as_array()[None, :]
    arr = np.atleast_2d(np.asarray(theta, dtype=float))
    if arr.shape[1] != len(model.feature_names):
        raise SchemaMismatchError(
            f"expected {len(model.feature_names)} features, got {arr.shape[1]}"
        )
    return arr


def predict(model: GPModel, theta) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and total variance of ln(s) for one or more contexts."""
    arr = _theta_matrix(model, theta)
    if model.kind == "exact":
        return exact_predict(model, arr)
    return sparse_predict(model, arr)


def predict_lognormal_params(model: GPModel, theta) -> LognormalParams:
    """Proximity-distribution parameters for a single context.

    sigma is the total predictive standard deviation of an observed ln(s),
    i.e. latent variance plus observation noise.
    """
    mean, var = predict(model, theta)
    return LognormalParams(mu=float(mean[0]), sigma=float(np.sqrt(var[0])))


def evaluate_nll(model: GPModel, samples) -> float:
    """Mean negative predictive log-density of ln(s), in nats per sample."""
    from ..context import samples_to_arrays

    X, y = samples_to_arrays(samples)
    mean, var = predict(model, X)
    return float(np.mean(0.5 * np.log(2.0 * np.pi * var) + (y - mean) ** 2 / (2.0 * var)))


def select_model(candidates: dict, samples) -> tuple[str, GPModel]:
    """Pick the candidate with the lowest held-out loss.

    ``candidates`` maps a label to (model, history); the held-out loss is
    the per-sample objective (NLL plus the beta-weighted KL for sparse
    models) on ``samples``.
    """
    from ..context import samples_to_arrays

    from .sparse import state_kl

    best_label, best_model, best_loss = None, None, np.inf
    _, y = samples_to_arrays(samples)
    for label, model in candidates.items():
        loss = evaluate_nll(model, samples)
        if model.kind == "sparse":
            loss += model.sparse.beta * state_kl(model) / len(y)
        if loss < best_loss:
            best_label, best_model, best_loss = label, model, loss
    return best_label, best_model


__all__ = [
    "ExactState",
    "GPFitError",
    "GPModel",
    "KernelParams",
    "SchemaMismatchError",
    "SparseFitConfig",
    "SparseState",
    "TrainingHistory",
    "evaluate_nll",
    "fit_exact",
    "fit_sparse",
    "kl_divergence",
    "load_model",
    "log_marginal_likelihood",
    "objective_and_grads",
    "predict",
    "predict_lognormal_params",
    "save_model",
    "select_model",
]
