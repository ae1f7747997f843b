"""Trajectory corpus ingestion: CSV parsing, pairing and event filtering.

Two CSV schema profiles are supported. ``event_like`` files carry SI
columns directly (vehicle_id, time, x, y, vx, vy, ax, length, width,
lane_id). ``highd_like`` files use drone-recording conventions: per-frame
rows keyed by id, positions anchored at the bounding-box corner, the box
x-extent holding vehicle length and y-extent vehicle width, and a
recording frame rate instead of timestamps. Parsing normalises everything
to SI centre-point kinematics.

Rows with missing required fields are rejected and reported per row; if a
rejection splits a vehicle's frames, the longest contiguous run is kept so
each vehicle still yields one uniformly-sampled trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .geometry import VehicleState, heading_from_velocity

TIME_TOL = 1e-6


class ParseError(ValueError):
    """Malformed input file (header or structure level)."""


class DataError(ValueError):
    """Structurally valid file with inconsistent content."""


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered states of one road user at a uniform frame rate."""

    vehicle_id: str
    states: tuple[VehicleState, ...]
    frame_rate: float

    def __post_init__(self):
        if len(self.states) < 2:
            raise DataError(f"trajectory {self.vehicle_id} needs >= 2 states")
        dt = 1.0 / self.frame_rate
        times = [s.time for s in self.states]
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise DataError(f"trajectory {self.vehicle_id}: non-monotone timestamps")
            if abs((b - a) - dt) > TIME_TOL:
                raise DataError(f"trajectory {self.vehicle_id}: non-uniform frame spacing")

    @property
    def start_time(self) -> float:
        return self.states[0].time

    @property
    def end_time(self) -> float:
        return self.states[-1].time

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def covers(self, t0: float, t1: float) -> bool:
        return self.start_time - TIME_TOL <= t0 and self.end_time + TIME_TOL >= t1

    def index_at(self, t: float) -> int:
        idx = int(round((t - self.start_time) * self.frame_rate))
        if idx < 0 or idx >= len(self.states):
            raise DataError(f"time {t} outside trajectory {self.vehicle_id}")
        return idx

    def state_at(self, t: float) -> VehicleState:
        state = self.states[self.index_at(t)]
        if abs(state.time - t) > 0.5 / self.frame_rate + TIME_TOL:
            raise DataError(f"time {t} does not align with trajectory frames")
        return state


@dataclass(frozen=True)
class EventTruth:
    """Generator-side ground truth attached to synthetic events."""

    critical_time: float
    danger_start: float
    danger_end: float


@dataclass(frozen=True)
class InteractionEvent:
    ego: Trajectory
    target: Trajectory
    overlap_window: tuple[float, float]
    kind: str = "generic"
    event_id: str = ""
    truth: EventTruth | None = None

    def __post_init__(self):
        t0, t1 = self.overlap_window
        if t1 <= t0:
            raise DataError("overlap window must have positive duration")
        if not (self.ego.covers(t0, t1) and self.target.covers(t0, t1)):
            raise DataError("both trajectories must cover the overlap window")
        if self.kind not in ("lane_change", "near_crash", "generic"):
            raise DataError(f"unknown event kind {self.kind!r}")

    @property
    def duration(self) -> float:
        return self.overlap_window[1] - self.overlap_window[0]

    def frames(self):
        """Yield (time, ego_state, target_state) over the overlap window."""
        t0, t1 = self.overlap_window
        i = self.ego.index_at(self._snap(t0))
        while i < len(self.ego.states):
            state = self.ego.states[i]
            if state.time > t1 + TIME_TOL:
                break
            yield state.time, state, self.target.state_at(state.time)
            i += 1

    def _snap(self, t: float) -> float:
        idx = int(math.ceil((t - self.ego.start_time) * self.ego.frame_rate - 1e-9))
        return self.ego.states[max(idx, 0)].time


@dataclass(frozen=True)
class LaneChangeAnnotation:
    ego_id: str
    t_start: float
    t_end: float
    origin_lane: int
    target_lane: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise DataError("lane change must satisfy t_start < t_end")


@dataclass
class ParseResult:
    trajectories: list[Trajectory]
    rejected_rows: list[tuple[int, str]] = field(default_factory=list)


REQUIRED_COLUMNS = {
    "event_like": ["vehicle_id", "time", "x", "y", "vx", "vy", "length", "width"],
    "highd_like": ["id", "frame", "x", "y", "xVelocity", "yVelocity", "width", "height"],
}


def parse_trajectory_csv(
    path: str | Path, schema_profile: str, frame_rate: float | None = None
) -> ParseResult:
    """Parse one trajectory CSV into per-vehicle trajectories.

    ``frame_rate`` is required for highd_like files (frames carry no
    timestamps); event_like files infer it from the time column.
    """
    if schema_profile not in REQUIRED_COLUMNS:
        raise ParseError(f"unknown schema profile {schema_profile!r}")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in REQUIRED_COLUMNS[schema_profile] if c not in frame.columns]
    if missing:
        raise ParseError(f"{path.name}: missing required columns {missing}")

    if schema_profile == "highd_like":
        if frame_rate is None:
            raise ParseError("highd_like files require an explicit frame_rate")
        return _parse_highd_like(frame, frame_rate)
    return _parse_event_like(frame)


def _reject_nan_rows(frame: pd.DataFrame, columns: list[str]) -> tuple[pd.DataFrame, list[tuple[int, str]]]:
    rejected = []
    bad = frame[columns].isna().any(axis=1)
    for idx in frame.index[bad]:
        cols = [c for c in columns if pd.isna(frame.at[idx, c])]
        # +2: header row plus 1-based numbering, matching editor line numbers.
        rejected.append((int(idx) + 2, f"missing required fields: {', '.join(cols)}"))
    return frame[~bad], rejected


def _longest_uniform_run(times: np.ndarray, dt: float) -> slice:
    best = slice(0, 1)
    start = 0
    for i in range(1, len(times)):
        if abs((times[i] - times[i - 1]) - dt) > TIME_TOL or times[i] <= times[i - 1]:
            if times[i] <= times[i - 1]:
                raise DataError("non-monotone timestamps within one vehicle")
            if i - start > best.stop - best.start:
                best = slice(start, i)
            start = i
    if len(times) - start > best.stop - best.start:
        best = slice(start, len(times))
    return best


def _build_states(
    vehicle_id: str,
    times: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    vxs: np.ndarray,
    vys: np.ndarray,
    a_long: np.ndarray,
    length: np.ndarray,
    width: np.ndarray,
) -> list[VehicleState]:
    states = []
    last_heading = None
    for k in range(len(times)):
        heading = heading_from_velocity((vxs[k], vys[k]), fallback=last_heading)
        if float(np.hypot(*heading)) > 0.0:
            last_heading = heading
        states.append(
            VehicleState(
                time=float(times[k]),
                position=np.array([xs[k], ys[k]]),
                velocity=np.array([vxs[k], vys[k]]),
                acceleration_long=float(a_long[k]),
                heading=heading,
                length=float(length[k]),
                width=float(width[k]),
            )
        )
    return states


def _finalize_vehicle(
    vehicle_id: str,
    times: np.ndarray,
    frame_rate: float,
    rejected: list[tuple[int, str]],
    builder,
) -> Trajectory | None:
    order = np.argsort(times, kind="stable")
    run = _longest_uniform_run(times[order], 1.0 / frame_rate)
    if run.stop - run.start < len(times):
        rejected.append((-1, f"vehicle {vehicle_id}: kept longest contiguous run "
                             f"({run.stop - run.start}/{len(times)} frames)"))
    keep = order[run]
    if len(keep) < 2:
        rejected.append((-1, f"vehicle {vehicle_id}: fewer than 2 usable frames"))
        return None
    return Trajectory(vehicle_id=vehicle_id, states=tuple(builder(keep)), frame_rate=frame_rate)


def _parse_event_like(frame: pd.DataFrame) -> ParseResult:
    numeric = ["time", "x", "y", "vx", "vy", "length", "width"]
    frame, rejected = _reject_nan_rows(frame, numeric)
    trajectories = []
    for vid, group in frame.groupby("vehicle_id", sort=True):
        group = group.sort_values("time", kind="stable")
        times = group["time"].to_numpy(dtype=float)
        if len(times) < 2:
            rejected.append((-1, f"vehicle {vid}: fewer than 2 usable frames"))
            continue
        diffs = np.diff(times)
        if np.any(diffs <= 0):
            raise DataError(f"vehicle {vid}: duplicate timestamps")
        frame_rate = 1.0 / np.median(diffs)
        ax = group["ax"].to_numpy(dtype=float) if "ax" in group else _derive_a_long(group, frame_rate)

        def builder(keep, group=group, ax=ax):
            g = group.iloc[keep]
            return _build_states(
                str(vid),
                g["time"].to_numpy(dtype=float),
                g["x"].to_numpy(dtype=float),
                g["y"].to_numpy(dtype=float),
                g["vx"].to_numpy(dtype=float),
                g["vy"].to_numpy(dtype=float),
                ax[keep],
                g["length"].to_numpy(dtype=float),
                g["width"].to_numpy(dtype=float),
            )

        traj = _finalize_vehicle(str(vid), times, frame_rate, rejected, builder)
        if traj is not None:
            trajectories.append(traj)
    return ParseResult(trajectories=trajectories, rejected_rows=rejected)


def _derive_a_long(group: pd.DataFrame, frame_rate: float) -> np.ndarray:
    speed = np.hypot(group["vx"].to_numpy(dtype=float), group["vy"].to_numpy(dtype=float))
    return np.gradient(speed, 1.0 / frame_rate)


def _parse_highd_like(frame: pd.DataFrame, frame_rate: float) -> ParseResult:
    numeric = ["frame", "x", "y", "xVelocity", "yVelocity", "width", "height"]
    frame, rejected = _reject_nan_rows(frame, numeric)
    trajectories = []
    for vid, group in frame.groupby("id", sort=True):
        group = group.sort_values("frame", kind="stable")
        times = group["frame"].to_numpy(dtype=float) / frame_rate
        if len(times) < 2:
            rejected.append((-1, f"vehicle {vid}: fewer than 2 usable frames"))
            continue

        def builder(keep, group=group, times=times):
            g = group.iloc[keep]
            # highD anchors boxes at the corner; width/height are the box
            # extents along x/y, i.e. vehicle length and width.
            length = g["width"].to_numpy(dtype=float)
            width = g["height"].to_numpy(dtype=float)
            xs = g["x"].to_numpy(dtype=float) + 0.5 * length
            ys = g["y"].to_numpy(dtype=float) + 0.5 * width
            vxs = g["xVelocity"].to_numpy(dtype=float)
            vys = g["yVelocity"].to_numpy(dtype=float)
            if "xAcceleration" in g and "yAcceleration" in g:
                speed = np.hypot(vxs, vys)
                with np.errstate(invalid="ignore"):
                    a_long = np.where(
                        speed > 0,
                        (g["xAcceleration"].to_numpy(dtype=float) * vxs
                         + g["yAcceleration"].to_numpy(dtype=float) * vys) / np.maximum(speed, 1e-12),
                        0.0,
                    )
            else:
                a_long = np.gradient(np.hypot(vxs, vys), 1.0 / frame_rate)
            return _build_states(str(vid), times[keep], xs, ys, vxs, vys, a_long, length, width)

        traj = _finalize_vehicle(str(vid), times, frame_rate, rejected, builder)
        if traj is not None:
            trajectories.append(traj)
    return ParseResult(trajectories=trajectories, rejected_rows=rejected)


def lateral_positions(traj: Trajectory) -> np.ndarray:
    return np.array([s.position[1] for s in traj.states])


def assign_lanes(traj: Trajectory, lane_centerlines, lane_width: float) -> list[int | None]:
    """Nearest-centreline lane index per frame, None beyond one lane width."""
    centers = np.asarray(lane_centerlines, dtype=float)
    lanes: list[int | None] = []
    for lat in lateral_positions(traj):
        dist = np.abs(centers - lat)
        idx = int(np.argmin(dist))
        lanes.append(idx if dist[idx] <= lane_width else None)
    return lanes


def extract_lane_changes(
    traj: Trajectory, lane_centerlines, lane_width: float
) -> list[LaneChangeAnnotation]:
    """Detect lane changes from lateral deviation against lane centrelines.

    A change starts at the first frame of the excursion in which lateral
    deviation from the origin centreline exceeds one third of the vehicle
    width toward the eventual new lane, and ends at the first frame where
    deviation from the new centreline falls back below one third of the
    width. An overtake shows up as two consecutive annotations.
    """
    centers = np.asarray(lane_centerlines, dtype=float)
    lanes = assign_lanes(traj, centers, lane_width)
    lats = lateral_positions(traj)
    widths = np.array([s.width for s in traj.states])
    times = np.array([s.time for s in traj.states])

    annotations = []
    for k in range(1, len(lanes)):
        a, b = lanes[k - 1], lanes[k]
        if a is None or b is None or a == b:
            continue
        direction = math.copysign(1.0, centers[b] - centers[a])
        i = k - 1
        while i > 0 and (lats[i - 1] - centers[a]) * direction > widths[i - 1] / 3.0:
            i -= 1
        j = k
        while j < len(lanes) - 1 and lanes[j] == b and abs(lats[j] - centers[b]) >= widths[j] / 3.0:
            j += 1
        if times[i] < times[j]:
            annotations.append(
                LaneChangeAnnotation(
                    ego_id=traj.vehicle_id,
                    t_start=float(times[i]),
                    t_end=float(times[j]),
                    origin_lane=int(a),
                    target_lane=int(b),
                )
            )
    return annotations


def filter_warning_events(events: list[InteractionEvent]) -> list[InteractionEvent]:
    """Keep events usable for warning evaluation.

    Rules: duration >= 6 s; no ego hard braking (accel <= -1.5 m/s^2)
    within the first 3 s; both speeds > 3 m/s at the first frame.
    """
    kept = []
    for event in events:
        if event.duration < 6.0 - TIME_TOL:
            continue
        frames = list(event.frames())
        t0 = frames[0][0]
        if frames[0][1].speed <= 3.0 or frames[0][2].speed <= 3.0:
            continue
        hard_brake = any(
            ego.acceleration_long <= -1.5 for t, ego, _ in frames if t - t0 <= 3.0 + TIME_TOL
        )
        if hard_brake:
            continue
        kept.append(event)
    return kept


def pair_interactions(
    trajs: list[Trajectory],
    max_gap: float = 100.0,
    lane_centerlines=None,
    lane_width: float = 4.0,
    margin: float = 2.0,
) -> list[InteractionEvent]:
    """Pair each lane-changing ego with its surrounding vehicles.

    Surrounding means nearest ahead or behind (longitudinally) in the
    origin or target lane during the lane-change window extended by
    ``margin`` seconds on both sides; a pair is emitted only if the
    centre distance ever falls below ``max_gap`` inside that window.
    """
    if lane_centerlines is None:
        raise ValueError("pair_interactions requires lane centrelines")
    lanes_by_vid = {t.vehicle_id: assign_lanes(t, lane_centerlines, lane_width) for t in trajs}
    by_vid = {t.vehicle_id: t for t in trajs}
    events = []
    for ego in trajs:
        for change in extract_lane_changes(ego, lane_centerlines, lane_width):
            window = (change.t_start - margin, change.t_end + margin)
            candidates: set[str] = set()
            for lane in (change.origin_lane, change.target_lane):
                candidates |= _surrounding_in_lane(ego, trajs, lanes_by_vid, lane, window)
            for vid in sorted(candidates):
                target = by_vid[vid]
                t0 = max(window[0], ego.start_time, target.start_time)
                t1 = min(window[1], ego.end_time, target.end_time)
                if t1 - t0 <= TIME_TOL:
                    continue
                if _min_centre_distance(ego, target, t0, t1) >= max_gap:
                    continue
                events.append(
                    InteractionEvent(
                        ego=ego,
                        target=target,
                        overlap_window=(t0, t1),
                        kind="lane_change",
                        event_id=f"{ego.vehicle_id}:{vid}:{change.t_start:.2f}",
                    )
                )
    return events


def _surrounding_in_lane(ego, trajs, lanes_by_vid, lane, window) -> set[str]:
    found: set[str] = set()
    for k, state in enumerate(ego.states):
        if not window[0] - TIME_TOL <= state.time <= window[1] + TIME_TOL:
            continue
        ahead_best = behind_best = None
        for other in trajs:
            if other.vehicle_id == ego.vehicle_id:
                continue
            try:
                idx = other.index_at(state.time)
            except DataError:
                continue
            if lanes_by_vid[other.vehicle_id][idx] != lane:
                continue
            dx = float(other.states[idx].position[0] - state.position[0])
            if dx >= 0.0 and (ahead_best is None or dx < ahead_best[0]):
                ahead_best = (dx, other.vehicle_id)
            if dx < 0.0 and (behind_best is None or -dx < behind_best[0]):
                behind_best = (-dx, other.vehicle_id)
        for best in (ahead_best, behind_best):
            if best is not None:
                found.add(best[1])
    return found


def _min_centre_distance(ego: Trajectory, target: Trajectory, t0: float, t1: float) -> float:
    best = math.inf
    for state in ego.states:
        if t0 - TIME_TOL <= state.time <= t1 + TIME_TOL:
            other = target.state_at(state.time)
            best = min(best, float(np.hypot(*(other.position - state.position))))
    return best


def write_event_manifest(events: list[InteractionEvent], path: str | Path, source: str) -> None:
    """One JSON line per event: ids, window, kind and optional truth."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for event in events:
            record = {
                "event_id": event.event_id,
                "kind": event.kind,
                "source": source,
                "ego_id": event.ego.vehicle_id,
                "target_id": event.target.vehicle_id,
                "t_start": event.overlap_window[0],
                "t_end": event.overlap_window[1],
                "frame_rate": event.ego.frame_rate,
            }
            if event.truth is not None:
                record["truth"] = {
                    "critical_time": event.truth.critical_time,
                    "danger_start": event.truth.danger_start,
                    "danger_end": event.truth.danger_end,
                }
            fh.write(json.dumps(record) + "\n")


def read_event_manifest(path: str | Path, trajectories: list[Trajectory]) -> list[InteractionEvent]:
    """Rebuild events from a manifest against an already-parsed corpus."""
    by_vid = {t.vehicle_id: t for t in trajectories}
    events = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            try:
                ego = by_vid[record["ego_id"]]
                target = by_vid[record["target_id"]]
            except KeyError as exc:
                raise DataError(f"manifest line {line_no}: unknown vehicle {exc}") from exc
            truth = None
            if "truth" in record:
                truth = EventTruth(
                    critical_time=record["truth"]["critical_time"],
                    danger_start=record["truth"]["danger_start"],
                    danger_end=record["truth"]["danger_end"],
                )
            events.append(
                InteractionEvent(
                    ego=ego,
                    target=target,
                    overlap_window=(record["t_start"], record["t_end"]),
                    kind=record.get("kind", "generic"),
                    event_id=record.get("event_id", f"event-{line_no}"),
                    truth=truth,
                )
            )
    return events
