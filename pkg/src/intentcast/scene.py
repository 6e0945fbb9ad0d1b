"""Scene data model: agents, observed tracks, per-step pose keypoints.

Coordinate conventions:
  * agent states live in the ego frame anchored at the ego pose of the last
    observed step (use `to_ego_frame` to re-anchor world-frame input once at
    load time);
  * keypoints live in each agent's local frame (origin at the agent centroid,
    x-axis along the agent heading), so they are unaffected by re-anchoring.

Scene files are JSON Lines, one scene object per line; unknown keys are
rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

N_KEYPOINTS = 9
KEYPOINT_BOUND_M = 10.0


class MalformedScene(ValueError):
    """Raised with a field path when scene data violates an invariant."""


class RateMismatch(ValueError):
    pass


class AgentClass(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    BICYCLE = "bicycle"

    @classmethod
    def parse(cls, raw: str, where: str) -> "AgentClass":
        try:
            return cls(raw)
        except ValueError:
            raise MalformedScene(f"{where}: unknown agent class {raw!r}") from None


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    out = math.remainder(theta, 2.0 * math.pi)
    if out <= -math.pi:
        out += 2.0 * math.pi
    return out


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap into (-pi, pi]."""
    return np.pi - np.remainder(np.pi - np.asarray(theta), 2.0 * np.pi)


@dataclass
class AgentState:
    x: float
    y: float
    vx: float
    vy: float
    yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.yaw])


@dataclass
class KeyPointFrame:
    """Nine agent-local (kx, ky) points with per-point visibility.

    Invisible points carry (0, 0) and visibility False.
    """

    points: np.ndarray      # (9, 2) meters
    visibility: np.ndarray  # (9,) bool

    @classmethod
    def all_invisible(cls) -> "KeyPointFrame":
        return cls(np.zeros((N_KEYPOINTS, 2)), np.zeros(N_KEYPOINTS, dtype=bool))


@dataclass
class ObservedTrack:
    agent_id: str
    agent_class: AgentClass
    states: list[AgentState]
    keypoints: list[KeyPointFrame]
    future: np.ndarray | None = None  # (T_f, 2) ground-truth positions

    @property
    def t_h(self) -> int:
        return len(self.states)

    def state_array(self) -> np.ndarray:
        return np.stack([s.as_array() for s in self.states])

    def keypoint_array(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.stack([k.points for k in self.keypoints])
        vis = np.stack([k.visibility for k in self.keypoints])
        return pts, vis


@dataclass
class Scene:
    scene_id: str
    rate_hz: float
    ego_index: int
    tracks: list[ObservedTrack]

    @property
    def n_agents(self) -> int:
        return len(self.tracks)

    @property
    def t_h(self) -> int:
        return self.tracks[0].t_h

    @property
    def t_f(self) -> int | None:
        fut = self.tracks[0].future
        return None if fut is None else len(fut)

    def positions(self) -> np.ndarray:
        """(N, T_h, 2) observed positions."""
        return np.stack([t.state_array()[:, :2] for t in self.tracks])

    def futures(self) -> np.ndarray:
        if any(t.future is None for t in self.tracks):
            raise MalformedScene(f"scene {self.scene_id}: future missing")
        return np.stack([t.future for t in self.tracks])


# -- validation ------------------------------------------------------------------


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise MalformedScene(f"{where}: non-finite value")


def validate_scene(scene: Scene) -> Scene:
    """Check every type invariant; returns the scene unchanged if all hold."""
    if not np.isfinite(scene.rate_hz) or scene.rate_hz <= 0:
        raise RateMismatch(f"rate_hz: expected a positive rate, got {scene.rate_hz}")
    if not scene.tracks:
        raise MalformedScene("tracks: expected at least one agent")
    if not 0 <= scene.ego_index < len(scene.tracks):
        raise MalformedScene(f"ego_index: {scene.ego_index} out of range")

    ids = [t.agent_id for t in scene.tracks]
    if len(set(ids)) != len(ids):
        raise MalformedScene("tracks: duplicate agent_id")

    t_h = scene.tracks[0].t_h
    t_f = None if scene.tracks[0].future is None else len(scene.tracks[0].future)
    for i, track in enumerate(scene.tracks):
        where = f"tracks[{i}]"
        if track.t_h != t_h:
            raise MalformedScene("tracks: inconsistent T_h")
        if track.t_h < 2:
            raise MalformedScene(f"{where}.states: expected length >= 2")
        if len(track.keypoints) != track.t_h:
            raise MalformedScene(
                f"{where}.keypoints: length {len(track.keypoints)} != T_h {track.t_h}"
            )
        for t, state in enumerate(track.states):
            arr = state.as_array()
            _check_finite(arr, f"{where}.states[{t}]")
            if not -math.pi < state.yaw <= math.pi:
                raise MalformedScene(
                    f"{where}.states[{t}].yaw: {state.yaw} outside (-pi, pi]"
                )
        for t, frame in enumerate(track.keypoints):
            kwhere = f"{where}.keypoints[{t}]"
            if frame.points.shape != (N_KEYPOINTS, 2):
                raise MalformedScene(f"{kwhere}.points: expected {N_KEYPOINTS}")
            if frame.visibility.shape != (N_KEYPOINTS,):
                raise MalformedScene(f"{kwhere}.visibility: expected {N_KEYPOINTS}")
            _check_finite(frame.points, f"{kwhere}.points")
            if np.any(np.abs(frame.points) > KEYPOINT_BOUND_M):
                raise MalformedScene(
                    f"{kwhere}.points: coordinate beyond {KEYPOINT_BOUND_M} m"
                )
            hidden = ~frame.visibility.astype(bool)
            if np.any(frame.points[hidden] != 0.0):
                raise MalformedScene(
                    f"{kwhere}.points: invisible point must be (0, 0)"
                )
        fut_len = None if track.future is None else len(track.future)
        if fut_len != t_f:
            raise MalformedScene("tracks: inconsistent T_f")
        if track.future is not None:
            _check_finite(track.future, f"{where}.future")
            if track.future.ndim != 2 or track.future.shape[1] != 2:
                raise MalformedScene(f"{where}.future: expected (T_f, 2)")
    return scene


# -- node features ------------------------------------------------------------------


def derive_node_features(track: ObservedTrack, rate_hz: float) -> np.ndarray:
    """Per-step motion features (dx, dy, vx, vy, yaw), shape (T_h, 5).

    dx/dy are one-step position differences; step 0 uses zeros so the output
    length matches the observation length.  `rate_hz` is part of the stable
    call signature (states already carry velocities, so it is not consumed).
    """
    arr = track.state_array()
    feats = np.zeros((arr.shape[0], 5))
    feats[1:, 0] = arr[1:, 0] - arr[:-1, 0]
    feats[1:, 1] = arr[1:, 1] - arr[:-1, 1]
    feats[:, 2] = arr[:, 2]
    feats[:, 3] = arr[:, 3]
    feats[:, 4] = arr[:, 4]
    return feats


# -- frame handling --------------------------------------------------------------------


def to_ego_frame(scene: Scene) -> Scene:
    """Re-anchor all states (and futures) to the ego pose at the last observed
    step: ego lands at the origin with yaw 0.  Keypoints are agent-local and
    untouched.  Idempotent for scenes that are already ego-anchored."""
    ego = scene.tracks[scene.ego_index].states[-1]
    c, s = math.cos(-ego.yaw), math.sin(-ego.yaw)
    rot = np.array([[c, -s], [s, c]])
    anchor = np.array([ego.x, ego.y])

    tracks = []
    for track in scene.tracks:
        states = []
        for st in track.states:
            pos = rot @ (np.array([st.x, st.y]) - anchor)
            vel = rot @ np.array([st.vx, st.vy])
            states.append(AgentState(pos[0], pos[1], vel[0], vel[1],
                                     wrap_angle(st.yaw - ego.yaw)))
        future = None
        if track.future is not None:
            future = (track.future - anchor) @ rot.T
        tracks.append(replace(track, states=states, future=future))
    return replace(scene, tracks=tracks)


# -- JSONL I/O ---------------------------------------------------------------------------


_SCENE_KEYS = {"scene_id", "rate_hz", "ego_index", "tracks"}
_TRACK_KEYS = {"agent_id", "class", "states", "keypoints", "visibility", "future"}


def scene_to_dict(scene: Scene) -> dict:
    tracks = []
    for t in scene.tracks:
        entry = {
            "agent_id": t.agent_id,
            "class": t.agent_class.value,
            "states": [list(s.as_array()) for s in t.states],
            "keypoints": [frame.points.tolist() for frame in t.keypoints],
            "visibility": [frame.visibility.astype(bool).tolist() for frame in t.keypoints],
        }
        if t.future is not None:
            entry["future"] = t.future.tolist()
        tracks.append(entry)
    return {
        "scene_id": scene.scene_id,
        "rate_hz": scene.rate_hz,
        "ego_index": scene.ego_index,
        "tracks": tracks,
    }


def scene_from_dict(obj: dict, where: str = "scene") -> Scene:
    if not isinstance(obj, dict):
        raise MalformedScene(f"{where}: expected an object")
    unknown = sorted(set(obj) - _SCENE_KEYS)
    if unknown:
        raise MalformedScene(f"{where}: unknown keys {unknown}")
    missing = sorted(_SCENE_KEYS - set(obj))
    if missing:
        raise MalformedScene(f"{where}: missing keys {missing}")

    tracks = []
    for i, raw in enumerate(obj["tracks"]):
        twhere = f"{where}.tracks[{i}]"
        if not isinstance(raw, dict):
            raise MalformedScene(f"{twhere}: expected an object")
        unknown = sorted(set(raw) - _TRACK_KEYS)
        if unknown:
            raise MalformedScene(f"{twhere}: unknown keys {unknown}")
        for key in ("agent_id", "class", "states", "keypoints", "visibility"):
            if key not in raw:
                raise MalformedScene(f"{twhere}: missing key {key!r}")

        states = []
        for t, row in enumerate(raw["states"]):
            if len(row) != 5:
                raise MalformedScene(f"{twhere}.states[{t}]: expected 5 fields")
            states.append(AgentState(*[float(v) for v in row]))

        if len(raw["keypoints"]) != len(raw["visibility"]):
            raise MalformedScene(f"{twhere}: keypoints/visibility length mismatch")
        frames = []
        for t, (pts, vis) in enumerate(zip(raw["keypoints"], raw["visibility"])):
            if len(pts) != N_KEYPOINTS:
                raise MalformedScene(f"{twhere}.keypoints[{t}].points: expected {N_KEYPOINTS}")
            if len(vis) != N_KEYPOINTS:
                raise MalformedScene(f"{twhere}.visibility[{t}]: expected {N_KEYPOINTS}")
            frames.append(KeyPointFrame(np.asarray(pts, dtype=float),
                                        np.asarray(vis, dtype=bool)))

        future = None
        if "future" in raw and raw["future"] is not None:
            future = np.asarray(raw["future"], dtype=float)

        tracks.append(ObservedTrack(
            agent_id=str(raw["agent_id"]),
            agent_class=AgentClass.parse(raw["class"], f"{twhere}.class"),
            states=states,
            keypoints=frames,
            future=future,
        ))

    scene = Scene(
        scene_id=str(obj["scene_id"]),
        rate_hz=float(obj["rate_hz"]),
        ego_index=int(obj["ego_index"]),
        tracks=tracks,
    )
    return validate_scene(scene)


def write_scenes(path: str | Path, scenes: list[Scene]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene)) + "\n")


def read_scenes(path: str | Path) -> list[Scene]:
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedScene(f"line {lineno}: invalid JSON ({exc})") from exc
            scenes.append(scene_from_dict(obj, where=f"line {lineno}"))
    return scenes
