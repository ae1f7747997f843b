"""Squared-exponential kernel with per-feature lengthscales."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, LinAlgError

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class GPFitError(RuntimeError):
    """Raised when a kernel matrix stays non-positive-definite or a fit diverges."""


@dataclass(frozen=True)
class KernelParams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", np.asarray(self.lengthscales, dtype=float))
        if np.any(self.lengthscales <= 0.0) or self.signal_variance <= 0.0 or self.noise_variance <= 0.0:
            raise ValueError("kernel parameters must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.log(self.lengthscales), [np.log(self.signal_variance), np.log(self.noise_variance)]]
        )

    @staticmethod
    def from_log_vector(vec: np.ndarray) -> "KernelParams":
        vec = np.asarray(vec, dtype=float)
        return KernelParams(
            lengthscales=np.exp(vec[:-2]),
            signal_variance=float(np.exp(vec[-2])),
            noise_variance=float(np.exp(vec[-1])),
        )


def sq_dists_per_dim(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Per-dimension squared distances, shape (d, n1, n2)."""
    diff = X1[:, None, :] - X2[None, :, :]
    return np.moveaxis(diff**2, -1, 0)


def rbf(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray, signal_variance: float) -> np.ndarray:
    """Noise-free kernel matrix k(X1, X2)."""
    d2 = sq_dists_per_dim(X1, X2)
    expo = np.tensordot(1.0 / lengthscales**2, d2, axes=1)
    return signal_variance * np.exp(-0.5 * expo)


def chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + jitter*I, escalating jitter tenfold.

    The escalation stops at JITTER_MAX; beyond that the matrix is treated
    as genuinely non-positive-definite.
    """
    jitter = 0.0
    eye = np.eye(K.shape[0])
    try:
        return cholesky(K, lower=True), jitter
    except LinAlgError:
        pass
    jitter = JITTER_START
    while jitter <= JITTER_MAX:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except LinAlgError:
            jitter *= 10.0
    raise GPFitError("kernel matrix not positive definite after jitter escalation")
