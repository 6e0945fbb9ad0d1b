"""Shared test utilities: finite differences and small scene fixtures."""

from __future__ import annotations

import numpy as np

from intentcast.config import ModelConfig
from intentcast.scene import (
    AgentClass,
    AgentState,
    KeyPointFrame,
    ObservedTrack,
    Scene,
    validate_scene,
    wrap_angle,
)


def finite_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = 1e-6) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), reduced to the max."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def keypoint_frame(rng: np.random.Generator | None = None) -> KeyPointFrame:
    if rng is None:
        return KeyPointFrame(np.zeros((9, 2)), np.ones(9, dtype=bool))
    return KeyPointFrame(rng.uniform(-1.0, 1.0, size=(9, 2)),
                         np.ones(9, dtype=bool))


def make_track(agent_id: str, xy: np.ndarray, vxy: np.ndarray | None = None,
               yaw: np.ndarray | None = None,
               agent_class: AgentClass = AgentClass.VEHICLE,
               future: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> ObservedTrack:
    """Build a track from a (T, 2) path; velocities default to path diffs."""
    t_h = xy.shape[0]
    if vxy is None:
        vxy = np.zeros_like(xy)
        vxy[1:] = np.diff(xy, axis=0)
    if yaw is None:
        yaw = np.zeros(t_h)
    states = [AgentState(xy[t, 0], xy[t, 1], vxy[t, 0], vxy[t, 1],
                         wrap_angle(yaw[t])) for t in range(t_h)]
    frames = [keypoint_frame(rng) for _ in range(t_h)]
    return ObservedTrack(agent_id, agent_class, states, frames, future=future)


def random_scene(rng: np.random.Generator, n_agents: int = 3, t_h: int = 4,
                 t_f: int = 3, spread: float = 10.0, labeled: bool = True,
                 rate_hz: float = 2.0) -> Scene:
    tracks = []
    classes = list(AgentClass)
    for i in range(n_agents):
        start = rng.uniform(-spread, spread, size=2)
        vel = rng.uniform(-2.0, 2.0, size=2)
        steps = np.arange(t_h + t_f)[:, None] * vel[None, :]
        path = start[None, :] + steps + rng.normal(0, 0.05, size=(t_h + t_f, 2))
        yaw = rng.uniform(-3.0, 3.0, size=t_h)
        future = path[t_h:] if labeled else None
        tracks.append(make_track(
            f"a{i}", path[:t_h], yaw=yaw,
            agent_class=classes[int(rng.integers(len(classes)))],
            future=future, rng=rng))
    return validate_scene(Scene("scene-0", rate_hz, 0, tracks))


def micro_config(**overrides) -> ModelConfig:
    base = dict(t_h=4, t_f=3, rate_hz=2.0, d_h=8, heads=2, modes=2,
                alpha=0.5, gamma_radius=40.0, si_enabled=True)
    base.update(overrides)
    return ModelConfig(**base).validate()
