"""Ego-centric coordinate transforms between two interacting vehicles.

All positions are centre points in a right-handed global frame. The ego
frame is defined so that the ego heading maps onto the local +y axis and
the local +x axis points to the ego's right side. Proximity is the radial
centre-to-centre distance; vehicle sizes are carried separately so that
downstream models can learn size effects without bounding-box
discontinuities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Below this speed the velocity direction is noise-dominated and headings
# must come from an earlier frame.
MIN_HEADING_SPEED = 0.1


class UndefinedHeadingError(ValueError):
    """Raised when a vehicle state carries no usable heading vector."""


@dataclass(frozen=True, eq=False)
class VehicleState:
    """Kinematic snapshot of one road user at a single timestamp.

    Attributes:
        time: seconds.
        position: centre point (x, y), metres, global frame.
        velocity: (vx, vy), m/s.
        acceleration_long: signed acceleration along the heading, m/s^2.
        heading: unit direction vector; may be the zero vector only while
            the vehicle is (near) standstill and no earlier heading exists.
        length: vehicle length, metres (> 0).
        width: vehicle width, metres (> 0).
    """

    time: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration_long: float
    heading: np.ndarray
    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        object.__setattr__(self, "heading", np.asarray(self.heading, dtype=float))
        if self.position.shape != (2,) or self.velocity.shape != (2,) or self.heading.shape != (2,):
            raise ValueError("position, velocity and heading must be 2-vectors")
        if not (self.length > 0.0 and self.width > 0.0):
            raise ValueError("vehicle length and width must be positive")
        norm = float(np.hypot(*self.heading))
        if self.speed > MIN_HEADING_SPEED and abs(norm - 1.0) > 1e-9:
            raise ValueError(f"heading must be a unit vector (norm {norm:.12f})")

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass(frozen=True)
class RelativeSpacing:
    """Polar spacing of the target in the ego frame.

    s is the radial centre-to-centre distance (>= 0); rho is the angle of
    the target location measured counter-clockwise from the local (1, 0)
    axis, in [-pi, pi].
    """

    s: float
    rho: float

    def __post_init__(self):
        if self.s < 0.0:
            raise ValueError("spacing s must be non-negative")
        if not -math.pi <= self.rho <= math.pi:
            raise ValueError("rho must lie in [-pi, pi]")


def to_ego_frame(ego: VehicleState, target: VehicleState) -> tuple[float, float]:
    """Express the target centre in the ego-centred, heading-aligned frame.

    The rotation maps the ego heading onto the local +y axis; the local +x
    axis then points to the ego's right side (in a y-up source frame; y-down
    sources are mirrored by :func:`mirror_correction` before this call).

    Raises:
        UndefinedHeadingError: if the ego heading is the zero vector.
    """
    hx, hy = float(ego.heading[0]), float(ego.heading[1])
    if hx == 0.0 and hy == 0.0:
        raise UndefinedHeadingError("undefined heading")
    dx = float(target.position[0] - ego.position[0])
    dy = float(target.position[1] - ego.position[1])
    x = hy * dx - hx * dy
    y = hx * dx + hy * dy
    return x, y


def spacing_polar(x: float, y: float) -> RelativeSpacing:
    """Convert ego-frame coordinates to polar spacing.

    (0, 0) yields s = 0 and rho = 0 by convention.
    """
    s = math.hypot(x, y)
    rho = math.atan2(y, x)
    return RelativeSpacing(s=s, rho=rho)


def mirror_correction(state: VehicleState) -> VehicleState:
    """Swap x and y components of position, velocity and heading.

    Converts between y-up and y-down source conventions; an involution.
    Scalar fields are unchanged.
    """
    return replace(
        state,
        position=state.position[::-1].copy(),
        velocity=state.velocity[::-1].copy(),
        heading=state.heading[::-1].copy(),
    )


def heading_from_velocity(velocity: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """Unit heading from a velocity vector, or ``fallback`` below 0.1 m/s.

    With no fallback available the zero vector is returned; transforms that
    need a heading will then raise :class:`UndefinedHeadingError`.
    """
    velocity = np.asarray(velocity, dtype=float)
    speed = float(np.hypot(*velocity))
    if speed > MIN_HEADING_SPEED:
        return velocity / speed
    if fallback is not None:
        return np.asarray(fallback, dtype=float)
    return np.zeros(2)
