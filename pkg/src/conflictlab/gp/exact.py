"""Exact GP regression on ln(s) with analytic marginal-likelihood gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from ..context import FeatureStats, apply_stats, samples_to_arrays, standardize
from .kernel import GPFitError, KernelParams, chol_with_jitter, rbf, sq_dists_per_dim

# Keeps predictive variance away from exact zero at noiseless training inputs.
VARIANCE_FLOOR = 1e-12

_LOG_BOUNDS = {
    "lengthscale": (np.log(1e-3), np.log(1e3)),
    "signal": (np.log(1e-6), np.log(1e6)),
    "noise": (np.log(1e-9), np.log(1e2)),
}


@dataclass(frozen=True)
class ExactState:
    X: np.ndarray          # standardized training inputs (N, d)
    y: np.ndarray          # ln(s) targets (N,)
    chol: np.ndarray       # lower Cholesky of K + noise*I (+ jitter)
    alpha: np.ndarray      # (K + noise*I)^-1 (y - mean_const)
    jitter: float


def log_marginal_likelihood(
    log_params: np.ndarray, X: np.ndarray, y: np.ndarray, mean_const: float
) -> tuple[float, np.ndarray]:
    """Marginal log-likelihood and its gradient w.r.t. log kernel parameters.

    Parameter order: log lengthscales (one per feature), log signal
    variance, log noise variance.
    """
    params = KernelParams.from_log_vector(log_params)
    n = len(y)
    Kf = rbf(X, X, params.lengthscales, params.signal_variance)
    K = Kf + params.noise_variance * np.eye(n)
    L, _ = chol_with_jitter(K)
    resid = y - mean_const
    alpha = cho_solve((L, True), resid)
    lml = -0.5 * float(resid @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * np.log(2.0 * np.pi)

    Kinv = cho_solve((L, True), np.eye(n))
    G = np.outer(alpha, alpha) - Kinv
    d2 = sq_dists_per_dim(X, X)
    grad = np.empty_like(log_params)
    for j in range(params.dim):
        dK = Kf * d2[j] / params.lengthscales[j] ** 2
        grad[j] = 0.5 * float(np.sum(G * dK))
    grad[-2] = 0.5 * float(np.sum(G * Kf))
    grad[-1] = 0.5 * params.noise_variance * float(np.trace(G))
    return lml, grad


@dataclass(frozen=True)
class GPModel:
    """Trained regressor from context features to a Gaussian over ln(s)."""

    kind: str  # "exact" or "sparse"
    kernel: KernelParams
    mean_const: float
    feature_stats: FeatureStats
    feature_names: tuple[str, ...]
    feature_schema_hash: str
    exact: "ExactState | None" = None
    sparse: "object | None" = None

    def __post_init__(self):
        if self.kind not in ("exact", "sparse"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if (self.kind == "exact") != (self.exact is not None):
            raise ValueError("exact models must carry an ExactState payload")
        if (self.kind == "sparse") != (self.sparse is not None):
            raise ValueError("sparse models must carry a SparseState payload")


def fit_exact(
    samples,
    feature_names: tuple[str, ...] | None = None,
    n_restarts: int = 2,
    seed: int = 0,
    max_iter: int = 120,
) -> GPModel:
    """Maximise the exact marginal likelihood over kernel hyperparameters.

    Uses L-BFGS from a data-driven start plus ``n_restarts`` perturbed
    restarts; features are standardised internally and the stats stored
    with the model.
    """
    X_raw, y = samples_to_arrays(samples)
    if len(y) < 20:
        raise ValueError("fit_exact needs at least 20 samples")
    names, sch_hash = _schema_for(samples, feature_names, X_raw.shape[1])
    X, stats = standardize(X_raw)
    mean_const = float(np.mean(y))

    d = X.shape[1]
    bounds = [_LOG_BOUNDS["lengthscale"]] * d + [_LOG_BOUNDS["signal"], _LOG_BOUNDS["noise"]]
    var_y = max(float(np.var(y)), 1e-6)
    start = np.concatenate([np.zeros(d), [np.log(var_y), np.log(0.1 * var_y)]])
    rng = np.random.Generator(np.random.Philox(seed))

    def objective(vec):
        lml, grad = log_marginal_likelihood(vec, X, y, mean_const)
        return -lml, -grad

    best = None
    for attempt in range(1 + n_restarts):
        vec0 = start if attempt == 0 else start + rng.normal(scale=0.7, size=len(start))
        vec0 = np.clip(vec0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(objective, vec0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": max_iter})
        except GPFitError:
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise GPFitError("all optimisation starts failed")

    params = KernelParams.from_log_vector(best.x)
    Kf = rbf(X, X, params.lengthscales, params.signal_variance)
    L, jitter = chol_with_jitter(Kf + params.noise_variance * np.eye(len(y)))
    alpha = cho_solve((L, True), y - mean_const)
    return GPModel(
        kind="exact",
        kernel=params,
        mean_const=mean_const,
        feature_stats=stats,
        feature_names=names,
        feature_schema_hash=sch_hash,
        exact=ExactState(X=X, y=y, chol=L, alpha=alpha, jitter=jitter),
    )


def exact_predict(model: GPModel, X_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and total variance (latent + noise) of ln(s)."""
    state = model.exact
    Xz = apply_stats(np.atleast_2d(X_raw), model.feature_stats)
    k_star = rbf(state.X, Xz, model.kernel.lengthscales, model.kernel.signal_variance)
    mean = model.mean_const + k_star.T @ state.alpha
    v = solve_triangular(state.chol, k_star, lower=True)
    latent = np.maximum(model.kernel.signal_variance - np.sum(v**2, axis=0), VARIANCE_FLOOR)
    return mean, latent + model.kernel.noise_variance


def _schema_for(samples, feature_names, dim):
    from ..context import FEATURE_NAMES, ContextVector, schema_hash

    if feature_names is None:
        if samples and isinstance(samples[0].theta, ContextVector):
            feature_names = FEATURE_NAMES
        else:
            feature_names = tuple(f"theta{j + 1}" for j in range(dim))
    feature_names = tuple(feature_names)
    if len(feature_names) != dim:
        raise ValueError("feature_names length does not match feature dimension")
    return feature_names, schema_hash(feature_names)
