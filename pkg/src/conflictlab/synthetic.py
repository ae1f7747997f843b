"""Seeded ground-truth generators and Monte-Carlo oracles.

All randomness flows through numpy's Philox generator, a counter-based
algorithm with a published specification, so corpora are reproducible
bit-for-bit under one implementation (and statistically across platforms).
Generated encounters use forward-Euler kinematics, so consecutive position
deltas equal velocity times the frame interval exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .context import TrainingSample
from .geometry import VehicleState
from .ingestion import EventTruth, InteractionEvent, Trajectory
from .proximity import LognormalParams


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator shared by every stochastic routine here."""
    return np.random.Generator(np.random.Philox(seed))


# -- context corpora ---------------------------------------------------------

def _mu_linear(theta: np.ndarray) -> np.ndarray:
    return 1.0 + 0.5 * theta[:, 0] - 0.3 * theta[:, 1] + 0.1 * theta[:, 2]


def _mu_sinusoidal(theta: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * theta[:, 0]) + theta[:, 1]


def _mu_radial(theta: np.ndarray) -> np.ndarray:
    angle = 2.0 * np.pi * (theta[:, 0] - 0.5)
    return 1.0 + 0.6 * np.cos(angle) + 0.2 * theta[:, 1]


CONTEXT_PRESETS = {
    # name: (dimension, mu*, sigma*)
    "linear": (3, _mu_linear, lambda theta: np.full(len(theta), 0.2)),
    "sinusoidal": (3, _mu_sinusoidal, lambda theta: np.full(len(theta), 0.3)),
    "radial": (3, _mu_radial, lambda theta: 0.25 + 0.1 * theta[:, 2]),
}


@dataclass(frozen=True)
class EncounterParams:
    """Scenario ranges for two-vehicle closing encounters."""

    n_events: int = 200
    frame_rate: float = 25.0
    duration: float = 12.0
    ego_speed: tuple[float, float] = (20.0, 30.0)
    closing_speed: tuple[float, float] = (3.0, 6.0)
    # Onset after 5.5 s keeps the critical moment clear of the safe window.
    evade_onset: tuple[float, float] = (5.5, 7.0)
    evade_decel: tuple[float, float] = (2.0, 4.0)
    lateral_amplitude: float = 0.0
    danger_horizon: float = 3.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything needed to regenerate a corpus from scratch."""

    seed: int
    preset: str = "sinusoidal"
    n_samples: int = 2000
    encounters: EncounterParams | None = None


def preset_truth(preset: str):
    """Ground-truth (mu*, sigma*) callables for a named preset."""
    dim, mu_fn, sigma_fn = CONTEXT_PRESETS[preset]
    return dim, mu_fn, sigma_fn


def gen_context_corpus(spec: GeneratorSpec) -> list[TrainingSample]:
    """Draw theta uniformly on [0, 1]^d and ln(s) = mu*(theta) + sigma*(theta) z."""
    if spec.preset not in CONTEXT_PRESETS:
        raise ValueError(f"unknown context preset {spec.preset!r}")
    dim, mu_fn, sigma_fn = CONTEXT_PRESETS[spec.preset]
    rng = make_rng(spec.seed)
    theta = rng.random((spec.n_samples, dim))
    log_s = mu_fn(theta) + sigma_fn(theta) * rng.standard_normal(spec.n_samples)
    return [TrainingSample(theta=theta[i], log_s=float(log_s[i])) for i in range(spec.n_samples)]


# -- encounters --------------------------------------------------------------

def _euler_trajectory(
    vehicle_id: str,
    x0: float,
    y0: float,
    v0: float,
    accel_fn,
    lateral_fn,
    n_frames: int,
    dt: float,
    length: float,
    width: float,
) -> Trajectory:
    states = []
    x, vx = x0, v0
    for k in range(n_frames):
        t = k * dt
        a = accel_fn(t, vx)
        y = y0 + lateral_fn(t)
        vy = (lateral_fn(t + dt) - lateral_fn(t)) / dt
        heading = np.array([vx, vy])
        speed = float(np.hypot(vx, vy))
        heading = heading / speed if speed > 0 else np.array([1.0, 0.0])
        states.append(
            VehicleState(
                time=t,
                position=np.array([x, y]),
                velocity=np.array([vx, vy]),
                acceleration_long=a,
                heading=heading,
                length=length,
                width=width,
            )
        )
        x += vx * dt
        vx = max(vx + a * dt, 0.0)
    return Trajectory(vehicle_id=vehicle_id, states=tuple(states), frame_rate=1.0 / dt)


def gen_encounters(spec: GeneratorSpec) -> list[InteractionEvent]:
    """Two-vehicle closing episodes with known critical moments.

    The ego approaches a slower leader in the same lane, then brakes at a
    drawn onset time until the speeds match; the critical moment is when
    closing ends. Frames from ``danger_horizon`` seconds before that moment
    are regarded as dangerous by construction. With a positive
    ``lateral_amplitude`` the leader additionally drifts sideways.
    """
    params = spec.encounters or EncounterParams()
    rng = make_rng(spec.seed)
    dt = 1.0 / params.frame_rate
    n_frames = int(round(params.duration * params.frame_rate)) + 1
    events = []
    for idx in range(params.n_events):
        v_ego = rng.uniform(*params.ego_speed)
        dv = rng.uniform(*params.closing_speed)
        t_evade = rng.uniform(*params.evade_onset)
        decel = rng.uniform(*params.evade_decel)
        length_e, width_e = 4.5, 2.0
        length_t, width_t = rng.uniform(4.0, 12.0), 2.2

        t_critical = t_evade + dv / decel
        if t_critical >= params.duration - 0.5:
            t_evade = params.duration - 0.5 - dv / decel
            t_critical = t_evade + dv / decel
        # Gap sized so the rectangles stay separated at the closest approach.
        closed = dv * t_evade + dv * (dv / decel) - 0.5 * decel * (dv / decel) ** 2
        gap0 = closed + rng.uniform(1.5, 4.0)
        if gap0 <= 0.0:
            raise ValueError("infeasible kinematics: negative initial gap")

        def ego_accel(t, vx, t_evade=t_evade, decel=decel, v_floor=v_ego - dv):
            if t >= t_evade and vx > v_floor:
                return -decel
            return 0.0

        amplitude = params.lateral_amplitude
        if amplitude > 0.0:

            def leader_lateral(t, amplitude=amplitude, t0=t_evade, dur=2.0):
                if t <= t0:
                    return 0.0
                phase = min((t - t0) / dur, 1.0)
                return amplitude * 0.5 * (1.0 - math.cos(math.pi * phase))

        else:

            def leader_lateral(t):
                return 0.0

        ego = _euler_trajectory(
            f"e{idx:04d}_ego", 0.0, 0.0, v_ego, ego_accel, lambda t: 0.0,
            n_frames, dt, length_e, width_e,
        )
        target_x0 = gap0 + 0.5 * (length_e + length_t)
        target = _euler_trajectory(
            f"e{idx:04d}_target", target_x0, 0.0, v_ego - dv, lambda t, vx: 0.0,
            leader_lateral, n_frames, dt, length_t, width_t,
        )
        events.append(
            InteractionEvent(
                ego=ego,
                target=target,
                overlap_window=(0.0, (n_frames - 1) * dt),
                kind="near_crash",
                event_id=f"e{idx:04d}",
                truth=EventTruth(
                    critical_time=t_critical,
                    danger_start=t_critical - params.danger_horizon,
                    danger_end=t_critical,
                ),
            )
        )
    return events


def oracle_scores(event: InteractionEvent) -> list[float]:
    """Per-frame danger indicator from the generator's own truth window."""
    if event.truth is None:
        raise ValueError("event carries no generator truth")
    return [
        1.0 if event.truth.danger_start <= t <= event.truth.danger_end else 0.0
        for t, _, _ in event.frames()
    ]


# -- Monte-Carlo extreme-order-statistic oracle ------------------------------

def mc_extreme_oracle(
    phi: LognormalParams,
    n: int,
    s,
    trials: int = 10**6,
    seed: int = 0,
):
    """Estimate P(min of n lognormal draws >= s) with its binomial stderr.

    ``s`` may be a scalar or an array; the same simulated minima serve all
    thresholds. Requires trials >= 10**4 and n >= 1.
    """
    if trials < 10**4:
        raise ValueError("mc_extreme_oracle needs at least 1e4 trials")
    if n < 1:
        raise ValueError("conflict intensity n must be >= 1")
    rng = make_rng(seed)
    minima = np.full(trials, np.inf)
    for _ in range(int(n)):
        draw = phi.mu + phi.sigma * rng.standard_normal(trials)
        np.minimum(minima, draw, out=minima)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    log_s = np.log(s_arr)
    p_hat = np.array([float(np.mean(minima >= ls)) for ls in log_s])
    stderr = np.sqrt(p_hat * (1.0 - p_hat) / trials)
    if np.isscalar(s) or np.asarray(s).ndim == 0:
        return float(p_hat[0]), float(stderr[0])
    return p_hat, stderr
