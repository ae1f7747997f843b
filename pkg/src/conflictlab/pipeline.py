"""Glue between events, classical metrics and the trained proximity model."""

from __future__ import annotations

import math

import numpy as np

from . import gp, metrics, proximity
from .context import TrainingSample, build_context, build_training_sample
from .geometry import UndefinedHeadingError
from .ingestion import InteractionEvent
from .metrics import MetricSample
from .synthetic import make_rng

CLASSICAL_METRICS = ("ttc", "drac", "psd")


def metric_samples(
    event: InteractionEvent,
    metric: str,
    model: "gp.GPModel | None" = None,
) -> list[MetricSample]:
    """Per-frame values of one metric over the event window.

    Frames where the metric is not computable (overlapping boxes, missing
    heading, zero follower speed) come back undefined.
    """
    if metric not in CLASSICAL_METRICS + ("unified",):
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "unified" and model is None:
        raise ValueError("unified metric needs a trained model")
    evaluate = {
        "ttc": metrics.ttc_2d,
        "drac": metrics.drac,
        "psd": metrics.psd,
        "unified": lambda e, t: _unified_value(e, t, model),
    }[metric]
    out = []
    for t, ego, target in event.frames():
        try:
            value = float(evaluate(ego, target))
        except (ValueError, UndefinedHeadingError):
            value = math.nan
        if math.isnan(value):
            out.append(MetricSample(time=t, value=math.nan, defined=False))
        else:
            out.append(MetricSample(time=t, value=value, defined=True))
    return out


def _unified_value(ego, target, model) -> float:
    sample = build_training_sample(ego, target)
    phi = gp.predict_lognormal_params(model, sample.theta)
    return proximity.max_intensity(math.exp(sample.log_s), phi)


def unified_rows(
    event: InteractionEvent,
    model: "gp.GPModel",
    n_values: tuple[float, ...] = (1.0, 17.0),
) -> list[dict]:
    """Full per-frame conflict assessment for the delimited export."""
    rows = []
    for t, ego, target in event.frames():
        row = {"event_id": event.event_id, "time": t}
        try:
            sample = build_training_sample(ego, target)
            phi = gp.predict_lognormal_params(model, sample.theta)
            a = proximity.assess(math.exp(sample.log_s), phi, n_values)
        except (ValueError, UndefinedHeadingError):
            row.update({"s": math.nan, "mu": math.nan, "sigma": math.nan,
                        "exceedance": math.nan, "n_max": math.nan})
            for n in n_values:
                row[f"p_at_{n:g}"] = math.nan
            rows.append(row)
            continue
        row.update({"s": a.s, "mu": phi.mu, "sigma": phi.sigma,
                    "exceedance": a.exceedance, "n_max": a.n_max})
        for n in n_values:
            row[f"p_at_{n:g}"] = a.p_hat[float(n)]
        rows.append(row)
    return rows


def training_samples_from_events(events: list[InteractionEvent]) -> list[TrainingSample]:
    """Context/ln(s) pairs over every usable frame of every event."""
    samples = []
    for event in events:
        for _, ego, target in event.frames():
            try:
                samples.append(build_training_sample(ego, target))
            except (ValueError, UndefinedHeadingError):
                continue
    return samples


def split_three_way(items: list, seed: int, fractions=(0.6, 0.2, 0.2)) -> tuple[list, list, list]:
    """Seeded train/validation/test split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = make_rng(seed)
    order = rng.permutation(len(items))
    n_train = int(round(fractions[0] * len(items)))
    n_val = int(round(fractions[1] * len(items)))
    pick = lambda idx: [items[i] for i in idx]
    return (
        pick(order[:n_train]),
        pick(order[n_train : n_train + n_val]),
        pick(order[n_train + n_val :]),
    )


def heatmap_grid(
    ego,
    target,
    model: "gp.GPModel",
    n: float = 17.0,
    half_extent_long: float = 40.0,
    half_extent_lat: float = 20.0,
    cells: int = 81,
) -> dict:
    """Ego-centred grids of proximity density and conflict probability.

    For every cell the target is assumed to sit at that location while the
    rest of the interaction context (speeds, headings, sizes, ego
    acceleration) keeps its actual value.
    """
    from dataclasses import replace

    x_lat = np.linspace(-half_extent_lat, half_extent_lat, cells)
    y_long = np.linspace(-half_extent_long, half_extent_long, cells)
    density = np.zeros((cells, cells))
    probability = np.zeros((cells, cells))
    mu_grid = np.zeros((cells, cells))
    sigma_grid = np.zeros((cells, cells))

    hx, hy = float(ego.heading[0]), float(ego.heading[1])
    for i, yl in enumerate(y_long):
        for j, xl in enumerate(x_lat):
            # Inverse of the ego-frame rotation: local (x, y) back to global.
            offset = np.array([hy * xl + hx * yl, -hx * xl + hy * yl])
            ghost = replace(target, position=ego.position + offset)
            theta = build_context(ego, ghost)
            phi = gp.predict_lognormal_params(model, theta)
            s = math.hypot(xl, yl)
            mu_grid[i, j] = phi.mu
            sigma_grid[i, j] = phi.sigma
            if s > 0.0:
                density[i, j] = proximity.lognormal_pdf(s, phi)
                probability[i, j] = proximity.conflict_probability(n, s, phi)
            else:
                density[i, j] = math.nan
                probability[i, j] = 1.0
    return {
        "x_lat": x_lat,
        "y_long": y_long,
        "density": density,
        "probability": probability,
        "mu": mu_grid,
        "sigma": sigma_grid,
        "n": n,
    }
