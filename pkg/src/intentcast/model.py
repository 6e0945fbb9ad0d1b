"""End-to-end pipeline: pose encoding, local and global encoders, fusion and
multimodal decoding, plus checkpoint round-tripping."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .global_encoder import build_global_params, edge_features, global_attend
from .local_encoder import (
    build_local_params,
    embed_and_concat,
    local_final,
    neighbor_mask,
    scene_node_features,
    spatial_attend,
    temporal_attend,
)
from .nn import ParamRegistry, Tensor, fill_registry, no_grad, read_checkpoint, save_checkpoint
from .pose_encoder import CLASS_INDEX, build_si_params, pose_embeddings
from .predictor import (
    PredictionSet,
    build_predictor_params,
    decode,
    fuse,
    total_loss,
)
from .scene import Scene


def build_params(cfg: ModelConfig, seed: int) -> ParamRegistry:
    """Create and initialize every trainable tensor; deterministic in seed."""
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()
    build_si_params(reg, cfg, rng)
    build_local_params(reg, cfg, rng)
    build_global_params(reg, cfg, rng)
    build_predictor_params(reg, cfg, rng)
    return reg


@dataclass
class SceneInputs:
    node_feats: np.ndarray     # (N, T_h, 5)
    kp_points: np.ndarray      # (N, T_h, 9, 2)
    kp_vis: np.ndarray         # (N, T_h, 9)
    class_ids: np.ndarray      # (N,)
    positions: np.ndarray      # (N, T_h, 2)
    anchors: np.ndarray        # (N, 2) last observed positions
    gt: np.ndarray | None      # (N, T_f, 2) ego-frame futures
    edges: np.ndarray          # (N, N, 6)


def scene_inputs(scene: Scene, cfg: ModelConfig) -> SceneInputs:
    pts = np.stack([t.keypoint_array()[0] for t in scene.tracks])
    vis = np.stack([t.keypoint_array()[1] for t in scene.tracks])
    cls = np.array([CLASS_INDEX[t.agent_class] for t in scene.tracks])
    positions = scene.positions()
    gt = None
    if all(t.future is not None for t in scene.tracks):
        gt = scene.futures()
    return SceneInputs(
        node_feats=scene_node_features(scene),
        kp_points=pts,
        kp_vis=vis,
        class_ids=cls,
        positions=positions,
        anchors=positions[:, -1, :],
        gt=gt,
        edges=edge_features(scene),
    )


def teacher_offsets(inputs: SceneInputs) -> np.ndarray:
    """Previous-step ground-truth offsets for teacher-forced decoding:
    row s holds gt[s-1] - anchor, row 0 is zero."""
    if inputs.gt is None:
        raise ValueError("teacher forcing requires labeled scenes")
    rel = inputs.gt - inputs.anchors[:, None, :]
    prev = np.zeros_like(rel)
    prev[:, 1:, :] = rel[:, :-1, :]
    return prev


def forward(scene_or_inputs, reg: ParamRegistry, cfg: ModelConfig,
            teacher_forcing: bool = False) -> PredictionSet:
    """Run the full pipeline on one scene."""
    if isinstance(scene_or_inputs, Scene):
        inputs = scene_inputs(scene_or_inputs, cfg)
    else:
        inputs = scene_or_inputs

    pose = pose_embeddings(inputs.kp_points, inputs.kp_vis, inputs.class_ids,
                           reg, cfg)
    z_con = embed_and_concat(inputs.node_feats, pose, reg, cfg)
    gates = neighbor_mask(inputs.positions, cfg.gamma_radius)
    z_spa = spatial_attend(z_con, gates, cfg.alpha, reg, cfg)
    local_seq = temporal_attend(z_spa, reg, cfg)
    z_glo = global_attend(local_final(local_seq), inputs.edges, reg, cfg)
    fused = fuse(local_seq, z_glo, reg, cfg)

    prev = teacher_offsets(inputs) if teacher_forcing else None
    return decode(fused, inputs.anchors, reg, cfg, teacher_prev=prev)


def predict(scene: Scene, reg: ParamRegistry, cfg: ModelConfig) -> PredictionSet:
    """Inference: free-running decode with graph recording off."""
    with no_grad():
        return forward(scene, reg, cfg, teacher_forcing=False)


def scene_loss(scene_or_inputs, reg: ParamRegistry, cfg: ModelConfig,
               variant: str = "paper_l2", teacher_forcing: bool = True):
    """(total, cls, reg) loss tensors for one labeled scene."""
    if isinstance(scene_or_inputs, Scene):
        inputs = scene_inputs(scene_or_inputs, cfg)
    else:
        inputs = scene_or_inputs
    pred = forward(inputs, reg, cfg, teacher_forcing=teacher_forcing)
    return total_loss(pred, inputs.gt, variant=variant)


def save_model(path: str | Path, reg: ParamRegistry, cfg: ModelConfig) -> None:
    save_checkpoint(path, reg, cfg.hyperparams())


def load_model(path: str | Path) -> tuple[ParamRegistry, ModelConfig]:
    doc = read_checkpoint(path)
    cfg = ModelConfig.from_hyperparams(doc["hyperparams"])
    reg = build_params(cfg, seed=0)
    fill_registry(reg, doc)
    return reg, cfg
