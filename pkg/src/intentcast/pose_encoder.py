"""Keypoint pose encoder ("si." parameters).

Each observed frame contributes nine tokens, one per keypoint: an affine embed
of (kx, ky, visibility) plus a learned keypoint-index embedding and a learned
agent-class embedding.  One self-attention encoder block mixes the nine tokens
and mean pooling yields a d_h vector per timestep.  Frames are encoded
independently; temporal mixing happens downstream.

When the encoder is disabled the same output shape is produced by
broadcasting a single learned vector, so toggling it changes information
content only.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .nn import (
    ParamRegistry,
    Tensor,
    add_affine,
    add_embedding,
    add_encoder_block,
    affine,
    encoder_block,
)
from .scene import N_KEYPOINTS, AgentClass, KeyPointFrame

CLASS_INDEX = {AgentClass.VEHICLE: 0, AgentClass.PEDESTRIAN: 1, AgentClass.BICYCLE: 2}


def build_si_params(reg: ParamRegistry, cfg: ModelConfig, rng: np.random.Generator) -> None:
    if not cfg.si_enabled:
        add_embedding(reg, "si.disabled", (cfg.d_h,), rng)
        return
    add_affine(reg, "si.token", 3, cfg.d_h, rng)
    add_embedding(reg, "si.kp_emb", (N_KEYPOINTS, cfg.d_h), rng)
    add_embedding(reg, "si.cls_emb", (len(CLASS_INDEX), cfg.d_h), rng)
    add_encoder_block(reg, "si.blk", cfg.d_h, rng)


def encode_pose_batch(points: np.ndarray, visibility: np.ndarray,
                      class_ids: np.ndarray, reg: ParamRegistry,
                      cfg: ModelConfig) -> Tensor:
    """Encode keypoint frames for a whole scene.

    points (N, T, 9, 2), visibility (N, T, 9), class_ids (N,) -> (N, T, d_h).
    """
    n, t, k, _ = points.shape
    if k != N_KEYPOINTS:
        raise ValueError(f"expected {N_KEYPOINTS} keypoints per frame, got {k}")
    feats = np.concatenate([points, visibility[..., None].astype(float)], axis=-1)
    x = affine(Tensor(feats.reshape(n * t, k, 3)), reg, "si.token")
    x = x + reg["si.kp_emb"]
    cls_rows = reg["si.cls_emb"][np.repeat(class_ids, t)]          # (N*T, d_h)
    x = x + cls_rows.reshape(n * t, 1, cfg.d_h)
    out = encoder_block(x, reg, "si.blk", cfg.heads)
    return out.mean(axis=1).reshape(n, t, cfg.d_h)


def encode_pose(keypoints: list[KeyPointFrame], agent_class: AgentClass,
                reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Single-agent surface; returns (T_h, d_h)."""
    pts = np.stack([f.points for f in keypoints])[None]
    vis = np.stack([f.visibility for f in keypoints])[None]
    cls = np.array([CLASS_INDEX[agent_class]])
    return encode_pose_batch(pts, vis, cls, reg, cfg).reshape(len(keypoints), cfg.d_h)


def disabled_pose_embedding(n_agents: int, t_h: int, reg: ParamRegistry,
                            cfg: ModelConfig) -> Tensor:
    """Learned constant vector broadcast to (N, T_h, d_h)."""
    one = reg["si.disabled"].reshape(1, 1, cfg.d_h)
    ones = Tensor(np.ones((n_agents, t_h, 1)))
    return one * ones


def pose_embeddings(points: np.ndarray, visibility: np.ndarray,
                    class_ids: np.ndarray, reg: ParamRegistry,
                    cfg: ModelConfig) -> Tensor:
    """Dispatch on cfg.si_enabled; both paths produce (N, T, d_h)."""
    if cfg.si_enabled:
        return encode_pose_batch(points, visibility, class_ids, reg, cfg)
    return disabled_pose_embedding(points.shape[0], points.shape[1], reg, cfg)
