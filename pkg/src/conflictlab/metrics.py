"""Classical surrogate metrics: two-dimensional TTC, DRAC, PSD and PET.

Vehicles are oriented rectangles (length along heading, width across).
The spacing Delta-s used by DRAC and PSD is the gap between the two
rectangles (zero when they overlap). Two-dimensional TTC advances both
rectangles with their current velocities and reports the first future
overlap time; the search uses conservative advancement on the rectangle
gap with bisection refinement, which stays robust where closed-form
first-contact case analysis gets awkward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import VehicleState

# Floor on the advancement step; contact intervals shorter than this can be
# stepped over, which matches the resolution of grid-based verification.
_MIN_STEP = 2.5e-4


@dataclass(frozen=True)
class MetricSample:
    """One per-frame metric value; undefined samples are excluded from aggregation."""

    time: float
    value: float
    defined: bool = True


@dataclass(frozen=True)
class PetResult:
    """Post-encroachment time; overlap marks simultaneous occupancy."""

    value: float
    overlap: bool


def rect_corners(state: VehicleState, offset: np.ndarray | None = None) -> np.ndarray:
    """Corner points (4, 2) of the vehicle rectangle, optionally translated."""
    if not (state.length > 0.0 and state.width > 0.0):
        raise ValueError("zero-size rectangle")
    h = state.heading
    norm = float(np.hypot(*h))
    if norm == 0.0:
        raise ValueError("rectangle orientation requires a heading")
    h = h / norm
    perp = np.array([-h[1], h[0]])
    centre = state.position if offset is None else state.position + offset
    half_l = 0.5 * state.length * h
    half_w = 0.5 * state.width * perp
    return np.array(
        [
            centre + half_l + half_w,
            centre + half_l - half_w,
            centre - half_l - half_w,
            centre - half_l + half_w,
        ]
    )


def _project_interval(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    proj = corners @ axis
    return float(proj.min()), float(proj.max())


def boxes_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis overlap test for two rectangles (touching counts)."""
    for corners in (corners_a, corners_b):
        for k in range(2):
            edge = corners[(k + 1) % 4] - corners[k]
            axis = np.array([-edge[1], edge[0]])
            lo_a, hi_a = _project_interval(corners_a, axis)
            lo_b, hi_b = _project_interval(corners_b, axis)
            if hi_a < lo_b or hi_b < lo_a:
                return False
    return True


def _segment_distance(p1, p2, q1, q2) -> float:
    """Minimum distance between segments [p1, p2] and [q1, q2]."""

    def point_seg(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            return float(np.hypot(*(p - a)))
        t = float((p - a) @ ab) / denom
        t = min(1.0, max(0.0, t))
        return float(np.hypot(*(p - (a + t * ab))))

    d = p2 - p1
    e = q2 - q1
    cross = float(d[0] * e[1] - d[1] * e[0])
    if cross != 0.0:
        r = q1 - p1
        t = (r[0] * e[1] - r[1] * e[0]) / cross
        u = (r[0] * d[1] - r[1] * d[0]) / cross
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return min(
        point_seg(p1, q1, q2),
        point_seg(p2, q1, q2),
        point_seg(q1, p1, p2),
        point_seg(q2, p1, p2),
    )


def corners_gap(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Gap between two rectangles given their corners; 0 when overlapping."""
    if boxes_overlap(corners_a, corners_b):
        return 0.0
    best = math.inf
    for i in range(4):
        a1, a2 = corners_a[i], corners_a[(i + 1) % 4]
        for j in range(4):
            best = min(best, _segment_distance(a1, a2, corners_b[j], corners_b[(j + 1) % 4]))
    return best


def box_gap(ego: VehicleState, target: VehicleState) -> float:
    """Bounding-box gap between two vehicles at their current states."""
    return corners_gap(rect_corners(ego), rect_corners(target))


def _gap_at(corners_e: np.ndarray, corners_t: np.ndarray, rel_v: np.ndarray, t: float) -> float:
    return corners_gap(corners_e + rel_v * t, corners_t)


def ttc_2d(ego: VehicleState, target: VehicleState, refine_tol: float = 1e-10) -> float:
    """First future overlap time of the two vehicle rectangles, in seconds.

    Both vehicles keep their current velocity and orientation. Returns 0.0
    if the rectangles already overlap and +inf when no future overlap
    exists (receding or passing clear).
    """
    corners_e = rect_corners(ego)
    corners_t = rect_corners(target)
    if boxes_overlap(corners_e, corners_t):
        return 0.0

    rel_v = np.asarray(ego.velocity - target.velocity, dtype=float)
    speed = float(np.hypot(*rel_v))
    if speed == 0.0:
        return math.inf

    # Overlap is only possible while the centres are within the sum of the
    # half-diagonals; that window bounds the search.
    radius = 0.5 * (math.hypot(ego.length, ego.width) + math.hypot(target.length, target.width))
    rel_p = np.asarray(ego.position - target.position, dtype=float)
    b = float(rel_p @ rel_v)
    c = float(rel_p @ rel_p) - radius * radius
    disc = b * b - speed * speed * c
    if disc < 0.0:
        return math.inf
    sqrt_disc = math.sqrt(disc)
    t_lo = (-b - sqrt_disc) / (speed * speed)
    t_hi = (-b + sqrt_disc) / (speed * speed)
    if t_hi <= 0.0:
        return math.inf
    t_lo = max(t_lo, 0.0)

    t = t_lo
    prev = t_lo
    while t <= t_hi:
        gap = _gap_at(corners_e, corners_t, rel_v, t)
        if gap <= 0.0:
            break
        prev = t
        t += max(gap / speed, _MIN_STEP)
    else:
        return math.inf

    # Bisect [prev, t]: no overlap at prev, overlap at t.
    lo, hi = prev, t
    while hi - lo > refine_tol:
        mid = 0.5 * (lo + hi)
        if _gap_at(corners_e, corners_t, rel_v, mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _gap_rate(ego: VehicleState, target: VehicleState, h: float = 1e-3) -> float:
    """Central-difference time derivative of the bounding-box gap."""
    corners_e = rect_corners(ego)
    corners_t = rect_corners(target)
    rel_v = np.asarray(ego.velocity - target.velocity, dtype=float)
    return (_gap_at(corners_e, corners_t, rel_v, h) - _gap_at(corners_e, corners_t, rel_v, -h)) / (2.0 * h)


def drac(ego: VehicleState, target: VehicleState) -> float:
    """Deceleration rate to avoid a crash: |dv|^2 / (2 gap) when approaching.

    Returns 0.0 when the gap is not shrinking. Raises on overlapping boxes.
    """
    gap = box_gap(ego, target)
    if gap <= 0.0:
        raise ValueError("overlapping boxes")
    if _gap_rate(ego, target) >= 0.0:
        return 0.0
    dv = float(np.hypot(*(ego.velocity - target.velocity)))
    return dv * dv / (2.0 * gap)


def psd(follower: VehicleState, target: VehicleState, dec: float = 5.5) -> float:
    """Proportion of stopping distance: gap over v^2/(2 dec).

    Returns NaN (undefined) at zero follower speed; the metric has no
    meaning at rest.
    """
    if not dec > 0.0:
        raise ValueError("braking rate dec must be positive")
    gap = box_gap(follower, target)
    if gap <= 0.0:
        raise ValueError("overlapping boxes")
    v = follower.speed
    if v == 0.0:
        return math.nan
    return gap / (v * v / (2.0 * dec))


def pet(first_exit_time: float, second_entry_time: float) -> PetResult:
    """Post-encroachment time between conflict-area occupancies.

    Entry before exit means simultaneous occupancy: value 0 with the
    overlap flag set (collision-grade).
    """
    gap = second_entry_time - first_exit_time
    if gap < 0.0:
        return PetResult(value=0.0, overlap=True)
    return PetResult(value=gap, overlap=False)
