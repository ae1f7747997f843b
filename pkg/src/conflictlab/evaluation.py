"""Warning-effectiveness harness and conflict-intensity distribution analysis.

Events are labelled around their critical moment (minimum bounding-box
distance): the first three seconds count as safe and the three seconds
before the critical moment as dangerous. A warning threshold scores a true
positive when any frame inside the danger window warns and a false
positive when any frame inside the safe window warns; sweeping every
observed value yields an exact event-level ROC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .ingestion import InteractionEvent
from .metrics import MetricSample, box_gap

Direction = Literal["warn_below", "warn_above"]

SAFE_WINDOW_SECONDS = 3.0
DANGER_WINDOW_SECONDS = 3.0

# Warning orientation of each bundled metric.
METRIC_DIRECTIONS: dict[str, Direction] = {
    "ttc": "warn_below",
    "psd": "warn_below",
    "drac": "warn_above",
    "unified": "warn_above",
}

# Thresholds calibrated on the near-crash warning benchmark, reused as
# defaults when episodes are counted without a fresh sweep.
REFERENCE_THRESHOLDS = {"ttc": 4.2, "drac": 0.45, "psd": 0.52, "unified": 17.0}


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledEvent:
    event: InteractionEvent
    critical_time: float
    safe_window: tuple[float, float]
    danger_window: tuple[float, float]


@dataclass(frozen=True)
class RocResult:
    points: tuple[tuple[float, float, float], ...]  # (threshold, fpr, tpr)
    auc: float
    optimal_threshold: float
    optimal_point: tuple[float, float]
    degenerate: bool = False


@dataclass(frozen=True)
class WarningOutcome:
    event_id: str
    warned: bool
    warning_period_pct: float
    timeliness: float | None
    # Danger windows substitute for external conflict annotations here.
    window_source: str = "danger_window"


@dataclass(frozen=True)
class Episode:
    t_start: float
    t_end: float
    n_frames: int
    peak_value: float


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    n_bins: int


def label_event(event: InteractionEvent) -> LabeledEvent:
    """Label safe and dangerous windows around the minimum-distance moment.

    Ties in the minimum distance resolve to the earliest frame. Windows are
    clipped to the event duration.
    """
    frames = list(event.frames())
    if not frames:
        raise EvaluationError(f"event {event.event_id}: no frames in window")
    gaps = [box_gap(ego, target) for _, ego, target in frames]
    critical_idx = int(np.argmin(gaps))
    critical_time = frames[critical_idx][0]
    t0 = frames[0][0]
    t1 = frames[-1][0]
    safe = (t0, min(t0 + SAFE_WINDOW_SECONDS, t1))
    danger = (max(critical_time - DANGER_WINDOW_SECONDS, t0), critical_time)
    return LabeledEvent(event=event, critical_time=critical_time, safe_window=safe, danger_window=danger)


def _window_values(samples: list[MetricSample], window: tuple[float, float]) -> list[float]:
    lo, hi = window
    return [s.value for s in samples if s.defined and lo - 1e-9 <= s.time <= hi + 1e-9]


def _warns(value: float, threshold: float, direction: Direction) -> bool:
    if direction == "warn_below":
        return value <= threshold
    return value >= threshold


def sweep_roc(
    events: list[LabeledEvent],
    samples_per_event: list[list[MetricSample]],
    direction: Direction,
) -> RocResult:
    """Event-level ROC over every distinct observed value plus sentinels.

    The sentinel endpoints are the empty warning region and the warn-
    everywhere region, so the curve always spans (0, 0) to (1, 1).
    """
    if len(events) < 2:
        raise EvaluationError("sweep_roc needs at least 2 events")
    if len(events) != len(samples_per_event):
        raise EvaluationError("one sample list per event required")

    safe_vals = [_window_values(s, e.safe_window) for e, s in zip(events, samples_per_event)]
    danger_vals = [_window_values(s, e.danger_window) for e, s in zip(events, samples_per_event)]
    observed = sorted({v for vals in safe_vals + danger_vals for v in vals})
    degenerate = len(observed) <= 1

    if direction == "warn_below":
        sweep: list[float | None] = [None] + observed + [math.inf]
    else:
        sweep = [None] + sorted(observed, reverse=True) + [-math.inf]

    n = len(events)
    points = []
    for threshold in sweep:
        if threshold is None:
            tp = fp = 0
            recorded = -math.inf if direction == "warn_below" else math.inf
        else:
            tp = sum(1 for vals in danger_vals if any(_warns(v, threshold, direction) for v in vals))
            fp = sum(1 for vals in safe_vals if any(_warns(v, threshold, direction) for v in vals))
            recorded = threshold
        points.append((recorded, fp / n, tp / n))

    fprs = [p[1] for p in points]
    tprs = [p[2] for p in points]
    auc = float(np.trapezoid(tprs, fprs))

    best_idx = min(
        range(len(points)),
        key=lambda i: (math.hypot(points[i][1], 1.0 - points[i][2]), points[i][1], -points[i][2]),
    )
    return RocResult(
        points=tuple(points),
        auc=auc,
        optimal_threshold=points[best_idx][0],
        optimal_point=(points[best_idx][1], points[best_idx][2]),
        degenerate=degenerate,
    )


def optimal_threshold(roc: RocResult) -> float:
    """Threshold of the sweep point closest to the ideal corner (0, 1)."""
    if roc.degenerate:
        raise EvaluationError("degenerate ROC curve has no meaningful optimum")
    return roc.optimal_threshold


def warning_stats(
    labeled: LabeledEvent,
    samples: list[MetricSample],
    threshold: float,
    direction: Direction,
) -> WarningOutcome:
    """Warned-share of the danger window and last-shift warning timeliness."""
    warn_flags = [
        (s.time, s.defined and _warns(s.value, threshold, direction)) for s in samples
    ]
    warned_any = any(flag for _, flag in warn_flags)
    lo, hi = labeled.danger_window
    in_danger = [flag for t, flag in warn_flags if lo - 1e-9 <= t <= hi + 1e-9]
    period = 100.0 * sum(in_danger) / len(in_danger) if in_danger else 0.0

    timeliness = None
    previous = False
    last_shift = None
    for t, flag in warn_flags:
        if t > labeled.critical_time + 1e-9:
            break
        if flag and not previous:
            last_shift = t
        previous = flag
    if last_shift is not None:
        timeliness = labeled.critical_time - last_shift
    return WarningOutcome(
        event_id=labeled.event.event_id,
        warned=warned_any,
        warning_period_pct=period,
        timeliness=timeliness,
    )


def log_bin_edges(values: np.ndarray, bins_per_decade: int = 20) -> np.ndarray:
    """Geometric bin edges from the sample minimum up past the maximum."""
    vmin = float(np.min(values))
    vmax = float(np.max(values))
    if vmin <= 0.0:
        raise EvaluationError("power-law binning requires positive values")
    ratio = 10.0 ** (1.0 / bins_per_decade)
    n_bins = max(int(math.ceil(math.log(vmax / vmin, ratio))), 1)
    return vmin * ratio ** np.arange(n_bins + 1)


def fit_power_law(
    values,
    bins_per_decade: int = 20,
    bin_edges: np.ndarray | None = None,
) -> PowerLawFit:
    """Least-squares line through the log-log histogram of ``values``.

    Frequencies are histogram counts divided by bin width, so the slope
    estimates the density exponent; rescaling all frequencies by a constant
    shifts the intercept without touching the slope. Only nonempty bins
    enter the regression and at least two are required.
    """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values) & (values > 0.0)]
    if len(values) == 0:
        raise EvaluationError("no positive finite values to fit")
    edges = np.asarray(bin_edges, dtype=float) if bin_edges is not None else log_bin_edges(values, bins_per_decade)
    counts, _ = np.histogram(values, bins=edges)
    widths = np.diff(edges)
    centres = np.sqrt(edges[:-1] * edges[1:])
    mask = counts > 0
    if int(mask.sum()) < 2:
        raise EvaluationError("fewer than 2 nonempty histogram bins")
    x = np.log10(centres[mask])
    y = np.log10(counts[mask] / widths[mask])
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / max(ss_tot, 1e-300)
    return PowerLawFit(slope=float(slope), intercept=float(intercept),
                       r_squared=r_squared, n_bins=int(mask.sum()))


def conflict_episodes(
    samples: list[MetricSample],
    threshold: float,
    direction: Direction,
    frame_rate: float,
    min_duration: float = 1.0,
) -> list[Episode]:
    """Maximal warning runs covering at least ``min_duration`` seconds.

    A run of k consecutive frames covers k / frame_rate seconds.
    """
    dt = 1.0 / frame_rate
    episodes = []
    run: list[MetricSample] = []
    for sample in samples + [MetricSample(time=math.inf, value=math.nan, defined=False)]:
        if sample.defined and _warns(sample.value, threshold, direction):
            run.append(sample)
            continue
        if run and len(run) * dt >= min_duration - 1e-9:
            values = [s.value for s in run]
            peak = min(values) if direction == "warn_below" else max(values)
            episodes.append(
                Episode(t_start=run[0].time, t_end=run[-1].time, n_frames=len(run), peak_value=peak)
            )
        run = []
    return episodes
