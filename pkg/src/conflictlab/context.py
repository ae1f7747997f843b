"""Deterministic interaction-context features for proximity regression.

The context vector collects squared speeds of both vehicles, relative-speed
magnitude (and its square), ego longitudinal acceleration, the target
heading relative to the ego heading, both vehicle lengths, and the polar
angle of the target in the ego frame. Angles enter as (sin, cos) pairs so
the representation has no jump at +/-pi. The proximity s itself is kept out
of the features to avoid label leakage.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .geometry import VehicleState, spacing_polar, to_ego_frame

FEATURE_NAMES: tuple[str, ...] = (
    "v_ego_sq",
    "v_target_sq",
    "delta_v_sq",
    "delta_v",
    "a_ego",
    "rel_heading_sin",
    "rel_heading_cos",
    "len_ego",
    "len_target",
    "rho_sin",
    "rho_cos",
)

SCHEMA_VERSION = "1"


def schema_hash(feature_names: tuple[str, ...] = FEATURE_NAMES, version: str = SCHEMA_VERSION) -> str:
    """Stable identifier of an ordered feature schema."""
    payload = version + ":" + ",".join(feature_names)
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ContextVector:
    v_ego_sq: float
    v_target_sq: float
    delta_v_sq: float
    delta_v: float
    a_ego: float
    rel_heading_sin: float
    rel_heading_cos: float
    len_ego: float
    len_target: float
    rho_sin: float
    rho_cos: float

    def __post_init__(self):
        if self.delta_v < 0.0:
            raise ValueError("delta_v must be non-negative")
        if abs(self.delta_v**2 - self.delta_v_sq) > 1e-9 * max(1.0, self.delta_v_sq):
            raise ValueError("delta_v_sq must equal delta_v squared")
        for sin_v, cos_v in ((self.rel_heading_sin, self.rel_heading_cos), (self.rho_sin, self.rho_cos)):
            if abs(sin_v**2 + cos_v**2 - 1.0) > 1e-9:
                raise ValueError("angle encodings must lie on the unit circle")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


@dataclass(frozen=True)
class TrainingSample:
    """One (context, ln proximity) pair; theta may also be a plain array."""

    theta: "ContextVector | np.ndarray"
    log_s: float

    def __post_init__(self):
        if not math.isfinite(self.log_s):
            raise ValueError("log_s must be finite (s > 0 enforced upstream)")

    def theta_array(self) -> np.ndarray:
        if isinstance(self.theta, ContextVector):
            return self.theta.as_array()
        return np.asarray(self.theta, dtype=float)


def build_context(ego: VehicleState, target: VehicleState) -> ContextVector:
    """Assemble the context features for one ego/target state pair.

    Both states must share a timestamp and the ego heading must be defined;
    heading errors propagate from the geometry layer.
    """
    if abs(ego.time - target.time) > 1e-9:
        raise ValueError("ego and target states must share a timestamp")
    dvx = float(ego.velocity[0] - target.velocity[0])
    dvy = float(ego.velocity[1] - target.velocity[1])
    delta_v = math.hypot(dvx, dvy)

    he, ht = ego.heading, target.heading
    rel_sin = float(he[0] * ht[1] - he[1] * ht[0])
    rel_cos = float(he[0] * ht[0] + he[1] * ht[1])
    rel_norm = math.hypot(rel_sin, rel_cos)
    if rel_norm > 0.0:
        rel_sin, rel_cos = rel_sin / rel_norm, rel_cos / rel_norm
    else:
        rel_sin, rel_cos = 0.0, 1.0

    x, y = to_ego_frame(ego, target)
    spacing = spacing_polar(x, y)

    return ContextVector(
        v_ego_sq=ego.speed**2,
        v_target_sq=target.speed**2,
        delta_v_sq=delta_v**2,
        delta_v=delta_v,
        a_ego=float(ego.acceleration_long),
        rel_heading_sin=rel_sin,
        rel_heading_cos=rel_cos,
        len_ego=float(ego.length),
        len_target=float(target.length),
        rho_sin=math.sin(spacing.rho),
        rho_cos=math.cos(spacing.rho),
    )


def build_training_sample(ego: VehicleState, target: VehicleState) -> TrainingSample:
    """Context plus ln(s) for one frame; raises if the vehicles coincide."""
    x, y = to_ego_frame(ego, target)
    s = math.hypot(x, y)
    if not s > 0.0:
        raise ValueError("coincident vehicles give no finite ln(s)")
    return TrainingSample(theta=build_context(ego, target), log_s=math.log(s))


@dataclass(frozen=True)
class FeatureStats:
    """Affine standardisation fitted on a training set.

    Zero-variance features are flagged and mapped through unit scale so the
    standardised training column is exactly zero.
    """

    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        object.__setattr__(self, "zero_variance", np.asarray(self.zero_variance, dtype=bool))

    @property
    def scale(self) -> np.ndarray:
        return np.where(self.zero_variance, 1.0, self.std)


def standardize(features: np.ndarray) -> tuple[np.ndarray, FeatureStats]:
    """Map each feature column to zero mean and unit variance.

    Requires at least two rows. Returns the standardised matrix and the
    fitted stats for later application and inversion.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("standardize expects a 2-D array with >= 2 samples")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    stats = FeatureStats(mean=mean, std=std, zero_variance=std == 0.0)
    return apply_stats(features, stats), stats


def apply_stats(features: np.ndarray, stats: FeatureStats) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    return (features - stats.mean) / stats.scale


def destandardize(features_z: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return np.asarray(features_z, dtype=float) * stats.scale + stats.mean


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack training samples into (X, y) with y = ln(s)."""
    if len(samples) == 0:
        raise ValueError("no training samples")
    X = np.stack([s.theta_array() for s in samples])
    y = np.array([s.log_s for s in samples], dtype=float)
    return X, y
