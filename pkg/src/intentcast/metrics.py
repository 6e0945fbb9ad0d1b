"""Forecasting evaluation metrics and report emission.

Displacement metrics follow the standard conventions: per-step errors are
Euclidean norms in meters, min-variants take the best of the k candidate
modes per agent before averaging over agents.  The weighted-sum aggregates
(WSADE/WSFDE) are computed on each agent's highest-probability mode, with
class weights inversely proportional to the classes' mean ground-truth
speeds; the miss rate uses the best mode's final error against a threshold.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .scene import AgentClass, Scene

SPEED_FLOOR_MPS = 0.1
DEFAULT_TAU_M = 2.0


class LengthMismatch(ValueError):
    pass


class EmptyEvalSet(ValueError):
    pass


def ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Average Displacement Error of one candidate trajectory.

    Args:
        pred: Predicted positions, shape (T_f, 2).
        gt: Ground-truth positions, shape (T_f, 2).

    Returns:
        Mean over steps of the Euclidean position error, meters.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred: np.ndarray, gt: np.ndarray) -> float:
    """Final Displacement Error of one candidate trajectory, meters."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def min_ade(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Mean over agents of the best mode's ADE.

    Args:
        preds: Per-agent candidate sets, each of shape (M, T_f, 2).
        gts: Per-agent ground truth, each of shape (T_f, 2).
    """
    if len(preds) != len(gts):
        raise LengthMismatch("preds/gts agent counts differ")
    return float(np.mean([min(ade(p, g) for p in modes)
                          for modes, g in zip(preds, gts)]))


def min_fde(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Mean over agents of the best mode's FDE."""
    if len(preds) != len(gts):
        raise LengthMismatch("preds/gts agent counts differ")
    return float(np.mean([min(fde(p, g) for p in modes)
                          for modes, g in zip(preds, gts)]))


def miss_rate(preds: list[np.ndarray], gts: list[np.ndarray],
              tau: float = DEFAULT_TAU_M) -> float:
    """Fraction of agents whose best-mode final error exceeds tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if len(preds) != len(gts):
        raise LengthMismatch("preds/gts agent counts differ")
    misses = [min(fde(p, g) for p in modes) > tau
              for modes, g in zip(preds, gts)]
    return float(np.mean(misses))


# -- class-weighted aggregation -----------------------------------------------


@dataclass
class ClassWeights:
    d_v: float
    d_p: float
    d_b: float

    def get(self, agent_class: AgentClass) -> float:
        return {AgentClass.VEHICLE: self.d_v,
                AgentClass.PEDESTRIAN: self.d_p,
                AgentClass.BICYCLE: self.d_b}[agent_class]


@dataclass
class EvalSample:
    """One agent's prediction aligned with its ground truth."""

    scene_id: str
    agent_id: str
    agent_class: AgentClass
    pred_modes: np.ndarray   # (M, T_f, 2)
    probs: np.ndarray        # (M,)
    gt: np.ndarray           # (T_f, 2)
    last_obs: np.ndarray     # (2,)
    rate_hz: float


def sample_speed(sample: EvalSample) -> float:
    """Ground-truth path length over the horizon duration, m/s."""
    pts = np.vstack([sample.last_obs[None], sample.gt])
    path = float(np.linalg.norm(np.diff(pts, axis=0), axis=-1).sum())
    horizon_s = len(sample.gt) / sample.rate_hz
    return path / horizon_s


def class_weights(samples: list[EvalSample]) -> ClassWeights:
    """Weights inversely proportional to per-class mean speeds, normalized to
    sum to one over the classes present; absent classes get weight zero.
    Mean speeds are floored at SPEED_FLOOR_MPS."""
    if not samples:
        raise EmptyEvalSet("no samples with ground truth")
    speeds: dict[AgentClass, list[float]] = {}
    for s in samples:
        speeds.setdefault(s.agent_class, []).append(sample_speed(s))
    inv = {c: 1.0 / max(float(np.mean(v)), SPEED_FLOOR_MPS)
           for c, v in speeds.items()}
    z = sum(inv.values())
    w = {c: inv.get(c, 0.0) / z for c in AgentClass}
    return ClassWeights(w[AgentClass.VEHICLE], w[AgentClass.PEDESTRIAN],
                        w[AgentClass.BICYCLE])


def wsade(per_class_ade: dict[AgentClass, float], weights: ClassWeights) -> float:
    """Weighted sum of per-class ADE values."""
    return float(sum(weights.get(c) * v for c, v in per_class_ade.items()))


def wsfde(per_class_fde: dict[AgentClass, float], weights: ClassWeights) -> float:
    """Weighted sum of per-class FDE values."""
    return float(sum(weights.get(c) * v for c, v in per_class_fde.items()))


# -- report -----------------------------------------------------------------------


@dataclass
class EvalReport:
    min_ade_k: float
    min_fde_k: float
    wsade: float
    wsfde: float
    mr: float
    per_class: dict[str, dict] = field(default_factory=dict)
    k: int = 0
    tau: float = DEFAULT_TAU_M
    n_agents: int = 0

    def to_dict(self) -> dict:
        return {
            "minADE_k": self.min_ade_k,
            "minFDE_k": self.min_fde_k,
            "WSADE": self.wsade,
            "WSFDE": self.wsfde,
            "MR": self.mr,
            "per_class": self.per_class,
            "k": self.k,
            "tau": self.tau,
            "n_agents": self.n_agents,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("minADE_k", f"{self.min_ade_k:.6f}"),
            ("minFDE_k", f"{self.min_fde_k:.6f}"),
            ("WSADE", f"{self.wsade:.6f}"),
            ("WSFDE", f"{self.wsfde:.6f}"),
            ("MR", f"{self.mr:.6f}"),
            ("k", str(self.k)),
            ("tau_m", f"{self.tau:.3f}"),
            ("n_agents", str(self.n_agents)),
        ]
        for cname, entry in sorted(self.per_class.items()):
            rows.append((f"{cname}.ADE", f"{entry['ade']:.6f}"))
            rows.append((f"{cname}.FDE", f"{entry['fde']:.6f}"))
            rows.append((f"{cname}.count", str(entry["count"])))
            rows.append((f"{cname}.mean_speed", f"{entry['mean_speed']:.6f}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


def evaluate(samples: list[EvalSample], tau: float = DEFAULT_TAU_M) -> EvalReport:
    """Full metric suite over an evaluation set."""
    if not samples:
        raise EmptyEvalSet("no samples to evaluate")
    preds = [s.pred_modes for s in samples]
    gts = [s.gt for s in samples]

    weights = class_weights(samples)
    by_class: dict[AgentClass, list[EvalSample]] = {}
    for s in samples:
        by_class.setdefault(s.agent_class, []).append(s)

    per_class_ade: dict[AgentClass, float] = {}
    per_class_fde: dict[AgentClass, float] = {}
    per_class_out: dict[str, dict] = {}
    for c, group in by_class.items():
        # fixed-mode metrics use each agent's highest-probability mode
        top = [g.pred_modes[int(np.argmax(g.probs))] for g in group]
        c_ade = float(np.mean([ade(p, g.gt) for p, g in zip(top, group)]))
        c_fde = float(np.mean([fde(p, g.gt) for p, g in zip(top, group)]))
        per_class_ade[c] = c_ade
        per_class_fde[c] = c_fde
        per_class_out[c.value] = {
            "ade": c_ade,
            "fde": c_fde,
            "count": len(group),
            "mean_speed": float(np.mean([sample_speed(g) for g in group])),
        }

    return EvalReport(
        min_ade_k=min_ade(preds, gts),
        min_fde_k=min_fde(preds, gts),
        wsade=wsade(per_class_ade, weights),
        wsfde=wsfde(per_class_fde, weights),
        mr=miss_rate(preds, gts, tau),
        per_class=per_class_out,
        k=int(samples[0].pred_modes.shape[0]),
        tau=tau,
        n_agents=len(samples),
    )


def per_agent_csv(samples: list[EvalSample], tau: float = DEFAULT_TAU_M) -> str:
    """Per-agent rows for downstream plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scene_id", "agent_id", "class", "best_ade", "best_fde",
                     "top_mode_ade", "top_mode_fde", "miss"])
    for s in samples:
        best_ade = min(ade(p, s.gt) for p in s.pred_modes)
        best_fde = min(fde(p, s.gt) for p in s.pred_modes)
        top = s.pred_modes[int(np.argmax(s.probs))]
        writer.writerow([s.scene_id, s.agent_id, s.agent_class.value,
                         f"{best_ade:.9f}", f"{best_fde:.9f}",
                         f"{ade(top, s.gt):.9f}", f"{fde(top, s.gt):.9f}",
                         int(best_fde > tau)])
    return buf.getvalue()


def samples_from_scene(scene: Scene, positions: np.ndarray,
                       probs: np.ndarray) -> list[EvalSample]:
    """Align a scene's ground truth with predicted positions (N, M, T_f, 2)."""
    samples = []
    for i, track in enumerate(scene.tracks):
        if track.future is None:
            continue
        samples.append(EvalSample(
            scene_id=scene.scene_id,
            agent_id=track.agent_id,
            agent_class=track.agent_class,
            pred_modes=np.asarray(positions[i], dtype=float),
            probs=np.asarray(probs[i], dtype=float),
            gt=np.asarray(track.future, dtype=float),
            last_obs=track.state_array()[-1, :2],
            rate_hz=scene.rate_hz,
        ))
    return samples
