"""Feature fusion, multimodal trajectory decoding, and training losses.

The decoder emits, per agent, M candidate futures of T_f steps with channels
(mu_x, mu_y, b_x, b_y) plus one probability per mode.  Positions are
ego-frame; internally the decoder works with offsets from each agent's last
observed position and the anchor is added back at assembly, which keeps the
network translation-invariant.

Training follows a winner-take-all scheme: the classification loss targets
the mode whose final step lands closest to the ground truth, and the default
regression loss penalizes only that mode's positions.  The scale channels are
untouched by the default loss (it is position-only); the optional
"laplace_nll" variant trains them as Laplace spreads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .nn import (
    ParamRegistry,
    Tensor,
    add_affine,
    add_embedding,
    add_layer_norm,
    add_mlp,
    affine,
    causal_mask,
    clamp_min,
    concat,
    l2norm,
    layer_norm,
    mlp_forward,
    multi_head_attention,
    softmax,
)


class MissingGroundTruth(ValueError):
    pass


@dataclass
class PredictionSet:
    """trajectories (N, M, T_f, 4) with channels (mu_x, mu_y, b_x, b_y) in the
    ego frame; mode_probs (N, M) summing to one per agent."""

    trajectories: Tensor
    mode_probs: Tensor

    @property
    def n_agents(self) -> int:
        return self.trajectories.shape[0]

    @property
    def n_modes(self) -> int:
        return self.trajectories.shape[1]

    def positions(self) -> np.ndarray:
        """(N, M, T_f, 2) predicted positions as a plain array."""
        return self.trajectories.data[..., 0:2]

    def scales(self) -> np.ndarray:
        return self.trajectories.data[..., 2:4]

    def probs(self) -> np.ndarray:
        return self.mode_probs.data


def build_predictor_params(reg: ParamRegistry, cfg: ModelConfig,
                           rng: np.random.Generator) -> None:
    width = 2 * cfg.d_h
    add_mlp(reg, "fuse.mlp", [width, cfg.d_h, cfg.t_h], rng)
    add_embedding(reg, "dec.mode_emb", (cfg.modes, width), rng)
    add_embedding(reg, "dec.step_emb", (cfg.t_f, width), rng)
    add_affine(reg, "dec.prev", 2, width, rng)
    for group in ("self", "cross"):
        for proj in ("wq", "wk", "wv", "wo"):
            add_affine(reg, f"dec.{group}.{proj}", width, width, rng)
    add_layer_norm(reg, "dec.ln1", width)
    add_layer_norm(reg, "dec.ln2", width)
    add_layer_norm(reg, "dec.ln3", width)
    add_mlp(reg, "dec.ffn", [width, 2 * width, width], rng)
    add_affine(reg, "dec.out", width, 4, rng)
    add_affine(reg, "dec.prob", width, 1, rng)


# -- fusion -------------------------------------------------------------------


def fuse_gate(z_glo: Tensor, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Per-agent, per-step blend gate in (0, 1), shape (N, T_h)."""
    return mlp_forward(z_glo, reg, "fuse.mlp").sigmoid()


def fuse(local_seq: Tensor, z_glo: Tensor, reg: ParamRegistry,
         cfg: ModelConfig) -> Tensor:
    """delta * local + (1 - delta) * global, broadcast over the feature axis."""
    n, t_h, width = local_seq.shape
    delta = fuse_gate(z_glo, reg, cfg).reshape(n, t_h, 1)
    return delta * local_seq + (1.0 - delta) * z_glo.reshape(n, 1, width)


# -- decoding -------------------------------------------------------------------


def _decoder_block(queries: Tensor, memory: Tensor, reg: ParamRegistry,
                   cfg: ModelConfig) -> Tensor:
    """Causal self-attention, cross-attention to the fused memory, FFN."""
    steps = queries.shape[1]
    att = multi_head_attention(
        affine(queries, reg, "dec.self.wq"),
        affine(queries, reg, "dec.self.wk"),
        affine(queries, reg, "dec.self.wv"),
        cfg.heads, mask=causal_mask(steps))
    h = layer_norm(queries + affine(att, reg, "dec.self.wo"), reg, "dec.ln1")
    att = multi_head_attention(
        affine(h, reg, "dec.cross.wq"),
        affine(memory, reg, "dec.cross.wk"),
        affine(memory, reg, "dec.cross.wv"),
        cfg.heads)
    h = layer_norm(h + affine(att, reg, "dec.cross.wo"), reg, "dec.ln2")
    return layer_norm(h + mlp_forward(h, reg, "dec.ffn"), reg, "dec.ln3")


def _queries_from_prev(prev: Tensor, steps: int, batch: int,
                       reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    width = 2 * cfg.d_h
    n_mode = cfg.modes
    n_agent = batch // n_mode
    prev_e = affine(prev, reg, "dec.prev")
    mode = reg["dec.mode_emb"].reshape(1, n_mode, 1, width)
    step = reg["dec.step_emb"][0:steps].reshape(1, 1, steps, width)
    q = prev_e.reshape(n_agent, n_mode, steps, width) + mode + step
    return q.reshape(batch, steps, width)


def decode(fused: Tensor, anchors: np.ndarray, reg: ParamRegistry,
           cfg: ModelConfig, teacher_prev: np.ndarray | None = None) -> PredictionSet:
    """Decode M futures per agent from the fused memory.

    anchors (N, 2) are each agent's last observed position; teacher_prev
    (N, T_f, 2), when given, supplies ground-truth previous-step offsets
    (teacher forcing).  Otherwise the decoder runs free, feeding its own
    predictions back in.
    """
    n, t_h, width = fused.shape
    m, t_f = cfg.modes, cfg.t_f
    batch = n * m

    memory = (fused.reshape(n, 1, t_h, width) * Tensor(np.ones((1, m, 1, 1))))
    memory = memory.reshape(batch, t_h, width)

    # The position head emits per-step displacements that accumulate onto the
    # previous position (iterative point generation); the assembled tensor
    # carries ego-frame coordinates.
    if teacher_prev is not None:
        prev_arr = np.repeat(teacher_prev, m, axis=0).reshape(batch, t_f, 2)
        prev = Tensor(prev_arr)
        queries = _queries_from_prev(prev, t_f, batch, reg, cfg)
        states = _decoder_block(queries, memory, reg, cfg)
        raw = affine(states, reg, "dec.out")                     # (B, T_f, 4)
        mu_off = raw[:, :, 0:2] + prev
        b_raw = raw[:, :, 2:4]
    else:
        zero = Tensor(np.zeros((batch, 1, 2)))
        prev_steps: list[Tensor] = [zero]
        mu_steps: list[Tensor] = []
        b_steps: list[Tensor] = []
        states = None
        for s in range(t_f):
            prev = concat(prev_steps, axis=1)                    # (B, s+1, 2)
            queries = _queries_from_prev(prev, s + 1, batch, reg, cfg)
            states = _decoder_block(queries, memory, reg, cfg)
            raw_s = affine(states[:, s:s + 1, :], reg, "dec.out")
            mu_s = raw_s[:, :, 0:2] + prev_steps[-1]
            mu_steps.append(mu_s)
            b_steps.append(raw_s[:, :, 2:4])
            prev_steps.append(mu_s)
        mu_off = concat(mu_steps, axis=1)
        b_raw = concat(b_steps, axis=1)

    mu = mu_off.reshape(n, m, t_f, 2) + Tensor(anchors.reshape(n, 1, 1, 2))
    b = b_raw.reshape(n, m, t_f, 2).softplus()
    trajectories = concat([mu, b], axis=-1)

    logits = affine(states.mean(axis=1), reg, "dec.prob").reshape(n, m)
    mode_probs = softmax(logits, axis=-1)
    return PredictionSet(trajectories, mode_probs)


# -- losses ------------------------------------------------------------------------


def select_best_mode(pred: PredictionSet, gt: np.ndarray) -> np.ndarray:
    """Per-agent index of the mode with the smallest final-step displacement;
    ties break toward the lowest index."""
    if gt is None:
        raise MissingGroundTruth("ground-truth futures required")
    final = pred.positions()[:, :, -1, :]                 # (N, M, 2)
    err = np.linalg.norm(final - gt[:, None, -1, :], axis=-1)
    return np.argmin(err, axis=1)


def loss_cls(mode_probs: Tensor, best_mode: np.ndarray) -> Tensor:
    """Mean over agents of -log p(best mode); p clamped at 1e-12."""
    n = mode_probs.shape[0]
    p = mode_probs[np.arange(n), best_mode]
    return -(clamp_min(p, 1e-12).log()).mean()


def loss_reg(pred: PredictionSet, gt: np.ndarray, best_mode: np.ndarray) -> Tensor:
    """Mean over agents of the summed per-step Euclidean position error of the
    best mode (no per-step normalization)."""
    if gt is None:
        raise MissingGroundTruth("ground-truth futures required")
    n = pred.n_agents
    mu = pred.trajectories[np.arange(n), best_mode][..., 0:2]   # (N, T_f, 2)
    per_step = l2norm(mu - Tensor(gt), axis=-1)                 # (N, T_f)
    return per_step.sum(axis=1).mean()


def loss_reg_laplace(pred: PredictionSet, gt: np.ndarray,
                     best_mode: np.ndarray) -> Tensor:
    """Negative log-likelihood under per-axis Laplace spreads, best mode only.
    This is the variant that actually trains the scale channels."""
    if gt is None:
        raise MissingGroundTruth("ground-truth futures required")
    n = pred.n_agents
    traj = pred.trajectories[np.arange(n), best_mode]           # (N, T_f, 4)
    mu, b = traj[..., 0:2], traj[..., 2:4]
    nll = (mu - Tensor(gt)).abs() / b + (2.0 * b).log()
    return nll.sum(axis=(1, 2)).mean()


def total_loss(pred: PredictionSet, gt: np.ndarray,
               variant: str = "paper_l2") -> tuple[Tensor, Tensor, Tensor]:
    """Classification + regression; returns (total, cls, reg) tensors."""
    best = select_best_mode(pred, gt)
    cls = loss_cls(pred.mode_probs, best)
    if variant == "laplace_nll":
        reg = loss_reg_laplace(pred, gt, best)
    else:
        reg = loss_reg(pred, gt, best)
    return cls + reg, cls, reg


# -- prediction dump format ----------------------------------------------------------


def prediction_record(scene_id: str, agent_ids: list[str],
                      pred: PredictionSet) -> dict:
    """One JSONL record: {scene_id, agents: [{agent_id, modes: [{prob,
    points: [[mu_x, mu_y, b_x, b_y] x T_f]}]}]}."""
    traj = pred.trajectories.data
    probs = pred.mode_probs.data
    agents = []
    for i, agent_id in enumerate(agent_ids):
        modes = [{"prob": float(probs[i, k]), "points": traj[i, k].tolist()}
                 for k in range(pred.n_modes)]
        agents.append({"agent_id": agent_id, "modes": modes})
    return {"scene_id": scene_id, "agents": agents}


def parse_prediction_record(obj: dict) -> tuple[str, dict]:
    """Inverse of prediction_record: (scene_id, {agent_id: (points, probs)})
    with points (M, T_f, 4) and probs (M,)."""
    agents = {}
    for entry in obj["agents"]:
        points = np.asarray([m["points"] for m in entry["modes"]], dtype=float)
        probs = np.asarray([m["prob"] for m in entry["modes"]], dtype=float)
        agents[str(entry["agent_id"])] = (points, probs)
    return str(obj["scene_id"]), agents
