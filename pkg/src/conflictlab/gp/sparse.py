"""Sparse variational GP trained by maximising a predictive log-likelihood.

The latent mapping from context to ln(s) is summarised by M inducing
variables u with variational distribution q(u) = N(q_mean, S). Because the
observation model is Gaussian, the per-sample expected predictive density
under q(u) is itself Gaussian, so the objective

    sum_i ln N(y_i | mu_i, v_i)  -  beta * KL[q(u) || p(u)]

has a closed form: mu_i is the usual inducing-point predictive mean and
v_i adds the latent variance (including the q(u) contribution) to the
noise variance. All gradients below are hand-derived and verified against
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular, LinAlgError
from threadpoolctl import threadpool_limits

from ..context import apply_stats, samples_to_arrays, standardize
from .exact import GPModel, VARIANCE_FLOOR, _schema_for
from .kernel import GPFitError, KernelParams, chol_with_jitter, rbf, sq_dists_per_dim

DEFAULT_JITTER = 1e-6


@dataclass(frozen=True)
class SparseState:
    """Inducing summary: locations, variational mean and covariance factor."""

    inducing: np.ndarray    # (M, d) standardized inducing locations
    q_mean: np.ndarray      # (M,)
    q_chol: np.ndarray      # (M, M) lower Cholesky factor of q covariance
    beta: float

    @property
    def q_cov(self) -> np.ndarray:
        return self.q_chol @ self.q_chol.T


@dataclass
class TrainingHistory:
    """Per-epoch loss records (negative per-sample objective) and NLL."""

    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float, val_nll: float) -> None:
        self.rows.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_nll": val_nll}
        )

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_loss,val_nll\n")
            for row in self.rows:
                fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},{row['val_nll']!r}\n")


def kl_divergence(q_mean, q_cov, p_mean, p_cov) -> float:
    """Closed-form KL divergence between two Gaussians of equal dimension."""
    q_mean = np.asarray(q_mean, dtype=float)
    p_mean = np.asarray(p_mean, dtype=float)
    q_cov = np.asarray(q_cov, dtype=float)
    p_cov = np.asarray(p_cov, dtype=float)
    m = len(q_mean)
    try:
        Lq = cholesky(q_cov, lower=True)
        Lp = cholesky(p_cov, lower=True)
    except LinAlgError as exc:
        raise ValueError("KL divergence requires positive-definite covariances") from exc
    tr = float(np.sum(solve_triangular(Lp, Lq, lower=True) ** 2))
    diff = solve_triangular(Lp, p_mean - q_mean, lower=True)
    maha = float(diff @ diff)
    logdet = 2.0 * float(np.sum(np.log(np.diag(Lp))) - np.sum(np.log(np.diag(Lq))))
    return 0.5 * (tr + maha - m + logdet)


# -- parameter packing ------------------------------------------------------

def _pack(log_kernel, Z, q_mean, Lq) -> np.ndarray:
    m = len(q_mean)
    il = np.tril_indices(m)
    tril = Lq[il].copy()
    diag_pos = np.where(il[0] == il[1])[0]
    tril[diag_pos] = np.log(np.diag(Lq))
    return np.concatenate([log_kernel, Z.ravel(), q_mean, tril])


def _unpack(vec, d, m):
    log_kernel = vec[: d + 2]
    ofs = d + 2
    Z = vec[ofs : ofs + m * d].reshape(m, d)
    ofs += m * d
    q_mean = vec[ofs : ofs + m]
    ofs += m
    il = np.tril_indices(m)
    Lq = np.zeros((m, m))
    Lq[il] = vec[ofs:]
    np.fill_diagonal(Lq, np.exp(np.diag(Lq)))
    return log_kernel, Z, q_mean, Lq


def objective_and_grads(
    vec: np.ndarray,
    Xb: np.ndarray,
    yb: np.ndarray,
    n_total: int,
    mean_const: float,
    beta: float,
    jitter: float = DEFAULT_JITTER,
) -> tuple[float, np.ndarray]:
    """Full-data-scale objective on one batch, with its parameter gradient."""
    d = Xb.shape[1]
    b = len(yb)
    m = _infer_m(len(vec), d)
    log_kernel, Z, q_mean, Lq = _unpack(vec, d, m)
    params = KernelParams.from_log_vector(log_kernel)
    ell2 = params.lengthscales**2
    noise = params.noise_variance

    Kmm_f = rbf(Z, Z, params.lengthscales, params.signal_variance)
    Kmm = Kmm_f + jitter * np.eye(m)
    Lm, _ = chol_with_jitter(Kmm)
    Kmb = rbf(Z, Xb, params.lengthscales, params.signal_variance)
    kdiag = np.full(b, params.signal_variance)

    A = cho_solve((Lm, True), Kmb)
    delta = q_mean - mean_const
    c = cho_solve((Lm, True), delta)
    mu = mean_const + A.T @ delta
    S = Lq @ Lq.T
    SA = S @ A
    t = np.maximum(kdiag - np.sum(Kmb * A, axis=0), 0.0)
    u = np.sum(A * SA, axis=0)
    v = t + u + noise
    resid = yb - mu

    scale = n_total / b
    data = float(np.sum(-0.5 * np.log(2.0 * np.pi * v) - resid**2 / (2.0 * v)))

    P = cho_solve((Lm, True), np.eye(m))
    PS = P @ S
    kl = 0.5 * (
        float(np.trace(PS))
        + float(delta @ c)
        - m
        + 2.0 * float(np.sum(np.log(np.diag(Lm))))
        - 2.0 * float(np.sum(np.log(np.diag(Lq))))
    )
    objective = scale * data - beta * kl

    # Data-term adjoints, at full-data scale.
    r = scale * resid / v
    w = scale * 0.5 * (resid**2 / v**2 - 1.0 / v)
    PSA = cho_solve((Lm, True), SA)

    g_qmean = A @ r - beta * c
    g_S = (A * w) @ A.T - beta * 0.5 * (P - cho_solve((Lq, True), np.eye(m)))
    g_Kmb = np.outer(c, r) + 2.0 * (PSA - A) * w
    g_kdiag = w

    Kmb_r = Kmb @ r
    Kmb_w = Kmb * w
    g_P = (
        np.outer(Kmb_r, delta)
        - Kmb_w @ Kmb.T
        + Kmb_w @ SA.T
        + (SA * w) @ Kmb.T
    )
    g_Kmm = -P @ g_P @ P - beta * 0.5 * (P - P @ S @ P - np.outer(c, c))

    # Chain rule into kernel hyperparameters, inducing locations and Lq.
    grad_log_kernel = np.empty(d + 2)
    d2_mm = sq_dists_per_dim(Z, Z)
    d2_mb = sq_dists_per_dim(Z, Xb)
    for j in range(d):
        grad_log_kernel[j] = (
            float(np.sum(g_Kmm * Kmm_f * d2_mm[j])) + float(np.sum(g_Kmb * Kmb * d2_mb[j]))
        ) / ell2[j]
    grad_log_kernel[d] = (
        float(np.sum(g_Kmm * Kmm_f))
        + float(np.sum(g_Kmb * Kmb))
        + float(np.sum(g_kdiag)) * params.signal_variance
    )
    grad_log_kernel[d + 1] = float(np.sum(w)) * noise

    E_mm = (g_Kmm + g_Kmm.T) * Kmm_f
    E_mb = g_Kmb * Kmb
    gZ = np.empty_like(Z)
    for j in range(d):
        gZ[:, j] = (
            E_mm @ Z[:, j]
            - E_mm.sum(axis=1) * Z[:, j]
            + E_mb @ Xb[:, j]
            - E_mb.sum(axis=1) * Z[:, j]
        ) / ell2[j]

    g_Lq = (g_S + g_S.T) @ Lq
    il = np.tril_indices(m)
    g_tril = g_Lq[il]
    diag_pos = np.where(il[0] == il[1])[0]
    g_tril[diag_pos] = np.diag(g_Lq) * np.diag(Lq)

    grad = np.concatenate([grad_log_kernel, gZ.ravel(), g_qmean, g_tril])
    return objective, grad


def _infer_m(total_len: int, d: int) -> int:
    # total = (d+2) + m*d + m + m(m+1)/2  ->  quadratic in m
    rem = total_len - (d + 2)
    a, bq, cq = 0.5, d + 1.5, -rem
    m = (-bq + np.sqrt(bq * bq - 4 * a * cq)) / (2 * a)
    return int(round(m))


def sparse_predict(model: GPModel, X_raw: np.ndarray, jitter: float = DEFAULT_JITTER):
    """Predictive mean and total variance (latent + noise) of ln(s)."""
    state: SparseState = model.sparse
    Xz = apply_stats(np.atleast_2d(X_raw), model.feature_stats)
    m = len(state.q_mean)
    Kmm = rbf(state.inducing, state.inducing, model.kernel.lengthscales, model.kernel.signal_variance)
    Lm, _ = chol_with_jitter(Kmm + jitter * np.eye(m))
    Kms = rbf(state.inducing, Xz, model.kernel.lengthscales, model.kernel.signal_variance)
    A = cho_solve((Lm, True), Kms)
    delta = state.q_mean - model.mean_const
    mean = model.mean_const + A.T @ delta
    t = np.maximum(model.kernel.signal_variance - np.sum(Kms * A, axis=0), 0.0)
    u = np.sum(A * (state.q_cov @ A), axis=0)
    latent = np.maximum(t + u, VARIANCE_FLOOR)
    return mean, latent + model.kernel.noise_variance


@dataclass
class SparseFitConfig:
    """Optimiser schedule for sparse training."""

    lr: float = 0.05
    epochs: int = 500
    batch_size: int = 2048
    patience: int = 30
    lr_patience: int = 10
    lr_factor: float = 0.5
    min_lr: float = 1e-4
    min_delta: float = 1e-4
    jitter: float = DEFAULT_JITTER


def fit_sparse(
    samples,
    m: int = 256,
    beta: float = 5.0,
    feature_names: tuple[str, ...] | None = None,
    seed: int = 0,
    val_samples=None,
    val_fraction: float = 0.2,
    config: SparseFitConfig | None = None,
    init_kernel: KernelParams | None = None,
) -> tuple[GPModel, TrainingHistory]:
    """Train the sparse model with Adam, plateau LR decay and early stopping.

    Validation loss drives the schedule; the parameters from the best
    validation epoch are restored at the end. The variational distribution
    starts at its closed-form optimum for the initial kernel, which may be
    warm-started from a previous fit via ``init_kernel``. Raises GPFitError
    on a divergent (non-finite) objective and ValueError when m exceeds the
    sample count.
    """
    config = config or SparseFitConfig()
    X_raw, y = samples_to_arrays(samples)
    if m > len(y):
        raise ValueError(f"inducing count m={m} exceeds sample count {len(y)}")
    names, sch_hash = _schema_for(samples, feature_names, X_raw.shape[1])

    rng = np.random.Generator(np.random.Philox(seed))
    if val_samples is not None:
        Xv_raw, yv = samples_to_arrays(val_samples)
    else:
        n_val = max(1, int(round(val_fraction * len(y))))
        perm = rng.permutation(len(y))
        Xv_raw, yv = X_raw[perm[:n_val]], y[perm[:n_val]]
        X_raw, y = X_raw[perm[n_val:]], y[perm[n_val:]]
        if m > len(y):
            raise ValueError("inducing count exceeds post-split training size")

    X, stats = standardize(X_raw)
    Xv = apply_stats(Xv_raw, stats)
    n, d = X.shape
    mean_const = float(np.mean(y))

    if init_kernel is not None:
        log_kernel = init_kernel.to_log_vector()
    else:
        var_y = max(float(np.var(y)), 1e-6)
        log_kernel = np.concatenate([np.zeros(d), [np.log(var_y), np.log(0.1 * var_y)]])
    params0 = KernelParams.from_log_vector(log_kernel)
    Z = X[rng.choice(n, size=m, replace=False)].copy()
    q_mean0, Lq0 = _variational_warm_start(
        X, y, Z, params0.lengthscales, params0.signal_variance, params0.noise_variance,
        mean_const, config.jitter,
    )
    vec = _pack(log_kernel, Z, q_mean0, Lq0)

    # The per-step matrices are small (M x batch); multi-threaded BLAS
    # loses an order of magnitude to synchronisation overhead here.
    with threadpool_limits(limits=1):
        best, history = _train_loop(vec, X, y, Xv, yv, mean_const, beta, config, rng)

    log_kernel, Z, q_mean, Lq = _unpack(best["vec"], d, m)
    model = GPModel(
        kind="sparse",
        kernel=KernelParams.from_log_vector(log_kernel),
        mean_const=mean_const,
        feature_stats=stats,
        feature_names=names,
        feature_schema_hash=sch_hash,
        sparse=SparseState(inducing=Z, q_mean=q_mean, q_chol=Lq, beta=beta),
    )
    return model, history


def state_kl(model) -> float:
    """KL of a sparse model's q(u) against its prior, from stored factors.

    Works off the Cholesky factor directly; re-factorising q_chol @ q_chol.T
    can fail for near-singular variational covariances.
    """
    state: SparseState = model.sparse
    m = len(state.q_mean)
    Kmm = rbf(state.inducing, state.inducing,
              model.kernel.lengthscales, model.kernel.signal_variance) + DEFAULT_JITTER * np.eye(m)
    Lm, _ = chol_with_jitter(Kmm)
    half = solve_triangular(Lm, state.q_chol, lower=True)
    diff = solve_triangular(Lm, state.q_mean - model.mean_const, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(Lm))) - np.sum(np.log(np.diag(state.q_chol))))
    return 0.5 * (float(np.sum(half**2)) + float(diff @ diff) - m + logdet)


def _variational_warm_start(X, y, Z, lengthscales, signal, noise, mean_const, jitter):
    """Closed-form optimal q(u) for the initial kernel.

    Starting the variational distribution at its analytic optimum (given
    the kernel and inducing locations) conditions the early gradient steps
    far better than starting at the prior, where q covariances inherit the
    near-singular prior Gram matrix. Streams over the data so only M-sized
    matrices are held.
    """
    m = len(Z)
    Kmm = rbf(Z, Z, lengthscales, signal) + jitter * np.eye(m)
    B = Kmm.copy()
    v = np.zeros(m)
    for start in range(0, len(y), 8192):
        Kmb = rbf(Z, X[start : start + 8192], lengthscales, signal)
        B += Kmb @ Kmb.T / noise
        v += Kmb @ (y[start : start + 8192] - mean_const)
    Lb, _ = chol_with_jitter(B)
    sigma_q = Kmm @ cho_solve((Lb, True), Kmm)
    q_mean = Kmm @ cho_solve((Lb, True), v) / noise + mean_const
    Lq, _ = chol_with_jitter(sigma_q)
    return q_mean, Lq


def _train_loop(vec, X, y, Xv, yv, mean_const, beta, config, rng):
    n = len(y)
    adam_m = np.zeros_like(vec)
    adam_v = np.zeros_like(vec)
    adam_t = 0
    lr = config.lr
    b1, b2, eps = 0.9, 0.999, 1e-8

    history = TrainingHistory()
    best = {"val_loss": np.inf, "vec": vec.copy(), "epoch": -1}
    stall = lr_stall = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            obj, grad = objective_and_grads(
                vec, X[idx], y[idx], n, mean_const, beta, config.jitter
            )
            if not np.isfinite(obj):
                raise GPFitError(f"divergent loss at epoch {epoch} (objective={obj}, lr={lr})")
            adam_t += 1
            g = -grad  # Adam minimises; the objective is maximised
            adam_m = b1 * adam_m + (1 - b1) * g
            adam_v = b2 * adam_v + (1 - b2) * g * g
            m_hat = adam_m / (1 - b1**adam_t)
            v_hat = adam_v / (1 - b2**adam_t)
            vec = vec - lr * m_hat / (np.sqrt(v_hat) + eps)

        train_loss = _set_loss(vec, X, y, mean_const, beta, config.jitter)
        val_loss, val_nll = _val_metrics(vec, Xv, yv, mean_const, beta, config.jitter)
        history.append(epoch, train_loss, val_loss, val_nll)

        if val_loss < best["val_loss"] - config.min_delta:
            best = {"val_loss": val_loss, "vec": vec.copy(), "epoch": epoch}
            stall = lr_stall = 0
        else:
            stall += 1
            lr_stall += 1
        if lr_stall >= config.lr_patience and lr > config.min_lr:
            lr = max(lr * config.lr_factor, config.min_lr)
            lr_stall = 0
        if stall >= config.patience:
            break
    return best, history


def _set_loss(vec, X, y, mean_const, beta, jitter) -> float:
    obj, _ = objective_and_grads(vec, X, y, len(y), mean_const, beta, jitter)
    return -obj / len(y)


def _val_metrics(vec, Xv, yv, mean_const, beta, jitter) -> tuple[float, float]:
    d = Xv.shape[1]
    m = _infer_m(len(vec), d)
    log_kernel, Z, q_mean, Lq = _unpack(vec, d, m)
    params = KernelParams.from_log_vector(log_kernel)

    Kmm = rbf(Z, Z, params.lengthscales, params.signal_variance) + jitter * np.eye(m)
    Lm, _ = chol_with_jitter(Kmm)
    Kms = rbf(Z, Xv, params.lengthscales, params.signal_variance)
    A = cho_solve((Lm, True), Kms)
    delta = q_mean - mean_const
    mu = mean_const + A.T @ delta
    S = Lq @ Lq.T
    t = np.maximum(params.signal_variance - np.sum(Kms * A, axis=0), 0.0)
    v = t + np.sum(A * (S @ A), axis=0) + params.noise_variance
    nll = float(np.mean(0.5 * np.log(2.0 * np.pi * v) + (yv - mu) ** 2 / (2.0 * v)))

    P = cho_solve((Lm, True), np.eye(m))
    kl = 0.5 * (
        float(np.trace(P @ S))
        + float(delta @ (P @ delta))
        - m
        + 2.0 * float(np.sum(np.log(np.diag(Lm))))
        - 2.0 * float(np.sum(np.log(np.diag(Lq))))
    )
    return nll + beta * kl / len(yv), nll
