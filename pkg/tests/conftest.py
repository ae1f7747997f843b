import numpy as np
import pytest

from conflictlab.geometry import VehicleState


def make_state(
    x=0.0,
    y=0.0,
    vx=0.0,
    vy=0.0,
    heading=None,
    a_long=0.0,
    length=4.5,
    width=2.0,
    time=0.0,
):
    """VehicleState helper; heading defaults to the velocity direction."""
    if heading is None:
        speed = np.hypot(vx, vy)
        heading = (vx / speed, vy / speed) if speed > 0 else (1.0, 0.0)
    return VehicleState(
        time=time,
        position=np.array([x, y], dtype=float),
        velocity=np.array([vx, vy], dtype=float),
        acceleration_long=a_long,
        heading=np.array(heading, dtype=float),
        length=length,
        width=width,
    )


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
