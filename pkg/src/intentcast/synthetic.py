"""Deterministic synthetic scene generation for desk-scale training and the
encoder ablation experiments.

Each agent follows one maneuver.  Histories are straight-line constant
velocity for every maneuver except "stop" (which starts braking mid-history),
so turn and lane-change direction is kinematically ambiguous before the last
observed step.  The keypoint template, however, starts articulating toward
the upcoming maneuver `intent_lead_steps` observations early: pedestrians
rotate face and shoulders, vehicles steer their front wheel points about the
front axle, bicycles swing the handlebar and front hub.  The articulation
angle is proportional to the upcoming turn rate, so keypoints carry direction
and magnitude that motion history cannot.

Observed positions carry Gaussian noise; ground-truth futures are noiseless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import (
    AgentClass,
    AgentState,
    KeyPointFrame,
    ObservedTrack,
    Scene,
    to_ego_frame,
    validate_scene,
    wrap_angle,
)

MANEUVERS = ("straight", "left_turn", "right_turn", "lane_change", "stop")


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_scenes: int = 32
    agents_min: int = 2
    agents_max: int = 4
    mix: dict = field(default_factory=lambda: {
        "straight": 0.3, "left_turn": 0.25, "right_turn": 0.25,
        "lane_change": 0.1, "stop": 0.1})
    noise_std: float = 0.05
    intent_lead_steps: int = 2
    t_h: int = 4
    t_f: int = 6
    rate_hz: float = 2.0
    speed_min: float = 4.0
    speed_max: float = 9.0

    def validate(self) -> "SyntheticSpec":
        if self.n_scenes < 1:
            raise SyntheticSpecError("n_scenes: expected >= 1")
        if not 1 <= self.agents_min <= self.agents_max:
            raise SyntheticSpecError("agents_min/agents_max: invalid range")
        unknown = sorted(set(self.mix) - set(MANEUVERS))
        if unknown:
            raise SyntheticSpecError(f"mix: unknown maneuvers {unknown}")
        probs = [float(self.mix.get(m, 0.0)) for m in MANEUVERS]
        if any(p < 0 for p in probs):
            raise SyntheticSpecError("mix: negative probability")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise SyntheticSpecError(f"mix: probabilities sum to {sum(probs)}, expected 1")
        if self.noise_std < 0:
            raise SyntheticSpecError("noise_std: expected >= 0")
        if self.intent_lead_steps < 0 or self.intent_lead_steps > self.t_h:
            raise SyntheticSpecError("intent_lead_steps: outside [0, t_h]")
        if self.t_h < 2 or self.t_f < 1:
            raise SyntheticSpecError("t_h/t_f: expected t_h >= 2, t_f >= 1")
        if self.rate_hz <= 0:
            raise SyntheticSpecError("rate_hz: expected > 0")
        if not 0 < self.speed_min <= self.speed_max:
            raise SyntheticSpecError("speed range: invalid")
        return self


# -- keypoint templates (agent-local frame, x forward, meters) ------------------

_PED_TEMPLATE = np.array([
    (0.12, 0.00),                 # face
    (0.00, 0.22), (0.00, -0.22),  # shoulders
    (0.00, 0.16), (0.00, -0.16),  # hips
    (0.04, 0.17), (0.04, -0.17),  # knees
    (0.00, 0.19), (0.00, -0.19),  # ankles
])
_VEH_TEMPLATE = np.array([
    (0.00, 0.00),                               # center
    (2.20, 0.90), (2.20, -0.90),                # front corners
    (-2.20, 0.90), (-2.20, -0.90),              # rear corners
    (1.40, 0.80), (1.40, -0.80),                # front wheels
    (-1.40, 0.80), (-1.40, -0.80),              # rear wheels
])
_BIKE_TEMPLATE = np.array([
    (0.10, 0.00),                 # rider head
    (0.35, 0.22), (0.35, -0.22),  # handlebar ends
    (-0.30, 0.00),                # seat
    (-0.05, 0.12), (-0.05, -0.12),  # pedals
    (0.55, 0.00), (-0.55, 0.00),  # wheel hubs
    (0.00, 0.00),                 # frame center
])

_TEMPLATES = {
    AgentClass.PEDESTRIAN: (_PED_TEMPLATE, [0, 1, 2], np.array([0.0, 0.0])),
    AgentClass.VEHICLE: (_VEH_TEMPLATE, [5, 6], np.array([1.4, 0.0])),
    AgentClass.BICYCLE: (_BIKE_TEMPLATE, [1, 2, 6], np.array([0.35, 0.0])),
}

# speed/geometry scale per class so angular dynamics stay comparable
_CLASS_SCALE = {AgentClass.VEHICLE: 1.0, AgentClass.BICYCLE: 0.5,
                AgentClass.PEDESTRIAN: 0.2}


def keypoints_with_intent(agent_class: AgentClass, steer: float,
                          ramp: float) -> KeyPointFrame:
    """Template frame with the articulated subset rotated by steer * ramp."""
    template, subset, pivot = _TEMPLATES[agent_class]
    pts = template.copy()
    angle = steer * ramp
    if angle != 0.0:
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        pts[subset] = (pts[subset] - pivot) @ rot.T + pivot
    return KeyPointFrame(pts, np.ones(len(pts), dtype=bool))


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass
class _AgentDraw:
    """Every random quantity an agent might need, drawn unconditionally so
    rollouts stay pairable across forced maneuvers."""

    maneuver: str
    agent_class: AgentClass
    start: np.ndarray
    heading: float
    speed: float
    radius: float
    shift: float
    shift_dir: float
    noise: np.ndarray  # (t_h, 2)


def _draw_agent(rng: np.random.Generator, spec: SyntheticSpec) -> _AgentDraw:
    probs = [float(spec.mix.get(m, 0.0)) for m in MANEUVERS]
    maneuver = MANEUVERS[int(rng.choice(len(MANEUVERS), p=probs))]
    agent_class = list(AgentClass)[int(rng.integers(3))]
    scale = _CLASS_SCALE[agent_class]
    return _AgentDraw(
        maneuver=maneuver,
        agent_class=agent_class,
        start=rng.uniform(-25.0, 25.0, size=2),
        heading=float(rng.uniform(-math.pi, math.pi)),
        speed=float(rng.uniform(spec.speed_min, spec.speed_max)) * scale,
        radius=float(rng.uniform(8.0, 20.0)) * scale,
        shift=float(rng.uniform(2.5, 3.8)) * scale,
        shift_dir=float(rng.choice([-1.0, 1.0])),
        noise=rng.normal(0.0, spec.noise_std, size=(spec.t_h, 2)),
    )


def _rollout(draw: _AgentDraw, spec: SyntheticSpec):
    """Clean world-frame positions (T, 2), velocities (T, 2), yaws (T,)."""
    t_total = spec.t_h + spec.t_f
    dt = 1.0 / spec.rate_hz
    h0, v0 = draw.heading, draw.speed
    u = np.array([math.cos(h0), math.sin(h0)])
    t_l = spec.t_h - 1  # index of the last observed step

    pos = np.zeros((t_total, 2))
    vel = np.zeros((t_total, 2))
    yaw = np.full(t_total, h0)

    if draw.maneuver in ("left_turn", "right_turn"):
        omega = (v0 / draw.radius) * (1.0 if draw.maneuver == "left_turn" else -1.0)
        for t in range(t_total):
            if t <= t_l:
                pos[t] = draw.start + u * v0 * t * dt
                vel[t] = u * v0
            else:
                tau = (t - t_l) * dt
                p_l = draw.start + u * v0 * t_l * dt
                h = h0 + omega * tau
                pos[t] = p_l + (v0 / omega) * np.array(
                    [math.sin(h) - math.sin(h0), -math.cos(h) + math.cos(h0)])
                vel[t] = v0 * np.array([math.cos(h), math.sin(h)])
                yaw[t] = h
    elif draw.maneuver == "lane_change":
        normal = np.array([-math.sin(h0), math.cos(h0)])
        duration = spec.t_f * dt
        for t in range(t_total):
            lon = draw.start + u * v0 * t * dt
            tau = (t - t_l) * dt
            frac = _smoothstep(np.array(tau / duration))[()]
            lat = draw.shift_dir * draw.shift * frac
            pos[t] = lon + normal * lat
            # analytic derivative of the smoothstep lateral motion
            if 0.0 < tau < duration:
                x = tau / duration
                dlat = draw.shift_dir * draw.shift * (6 * x - 6 * x * x) / duration
            else:
                dlat = 0.0
            vel[t] = u * v0 + normal * dlat
            yaw[t] = math.atan2(vel[t, 1], vel[t, 0])
    elif draw.maneuver == "stop":
        t_brake = spec.t_h // 2
        brake_window = (spec.t_h - t_brake + spec.t_f / 2.0) * dt
        a = v0 / brake_window
        for t in range(t_total):
            tau = (t - t_brake) * dt
            if tau <= 0:
                s = v0 * t * dt
                v = v0
            else:
                t_stop = v0 / a
                tcl = min(tau, t_stop)
                s = v0 * t_brake * dt + v0 * tcl - 0.5 * a * tcl * tcl
                v = max(0.0, v0 - a * tau)
            pos[t] = draw.start + u * s
            vel[t] = u * v
    else:  # straight
        for t in range(t_total):
            pos[t] = draw.start + u * v0 * t * dt
            vel[t] = u * v0

    return pos, vel, yaw


def _intent_steer(draw: _AgentDraw) -> float:
    """Articulation amplitude, signed toward the maneuver and proportional to
    how hard the agent is about to turn."""
    if draw.maneuver in ("left_turn", "right_turn"):
        omega = draw.speed / draw.radius
        sign = 1.0 if draw.maneuver == "left_turn" else -1.0
        return sign * min(0.9, 1.2 * omega)
    if draw.maneuver == "lane_change":
        scale = _CLASS_SCALE[draw.agent_class]
        return draw.shift_dir * 0.35 * (draw.shift / (3.0 * scale))
    return 0.0


def _articulation_ramp(t: int, t_h: int, lead: int) -> float:
    """0 before the lead window, rising linearly to 1 at the last observation."""
    if lead <= 0:
        return 0.0
    start = t_h - lead
    if t < start:
        return 0.0
    return (t - start + 1) / lead


def _build_track(idx: int, draw: _AgentDraw, spec: SyntheticSpec) -> ObservedTrack:
    pos, vel, yaw = _rollout(draw, spec)
    steer = _intent_steer(draw)

    states = []
    for t in range(spec.t_h):
        p = pos[t] + draw.noise[t]
        states.append(AgentState(p[0], p[1], vel[t, 0], vel[t, 1],
                                 wrap_angle(yaw[t])))
    frames = [
        keypoints_with_intent(draw.agent_class, steer,
                              _articulation_ramp(t, spec.t_h,
                                                 spec.intent_lead_steps))
        for t in range(spec.t_h)
    ]
    return ObservedTrack(
        agent_id=f"agent-{idx}",
        agent_class=draw.agent_class,
        states=states,
        keypoints=frames,
        future=pos[spec.t_h:].copy(),
    )


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[Scene]:
    """Deterministic scene corpus in the ego frame of each scene's agent 0."""
    spec.validate()
    rng = np.random.default_rng(seed)
    scenes = []
    for s in range(spec.n_scenes):
        n_agents = int(rng.integers(spec.agents_min, spec.agents_max + 1))
        tracks = [_build_track(i, _draw_agent(rng, spec), spec)
                  for i in range(n_agents)]
        scene = Scene(scene_id=f"scene-{s:05d}", rate_hz=spec.rate_hz,
                      ego_index=0, tracks=tracks)
        scenes.append(validate_scene(to_ego_frame(scene)))
    return scenes
