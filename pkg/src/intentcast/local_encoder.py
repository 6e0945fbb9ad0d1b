"""Per-agent spatiotemporal encoder.

Motion features are embedded by an MLP and concatenated with the pose
embedding; per timestep, radius-gated attention over neighbouring agents is
alpha-blended with the input; a causally masked attention block then mixes
each agent's sequence over time.  Agents with no neighbour inside the radius
pass through the spatial stage unchanged.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .nn import (
    ParamRegistry,
    Tensor,
    add_affine,
    add_embedding,
    add_layer_norm,
    add_matrix,
    add_mlp,
    affine,
    causal_mask,
    concat,
    layer_norm,
    merge_heads,
    mlp_forward,
    multi_head_attention,
    softmax,
    split_heads,
    where,
)
from .scene import Scene, derive_node_features


def build_local_params(reg: ParamRegistry, cfg: ModelConfig,
                       rng: np.random.Generator) -> None:
    width = 2 * cfg.d_h
    add_mlp(reg, "local.mlp", [5, cfg.d_h, cfg.d_h], rng)
    for proj in ("wq", "wk", "wv"):
        add_matrix(reg, f"local.spa.{proj}", width, width, rng)
    add_embedding(reg, "local.pos.emb", (cfg.t_h, width), rng)
    for proj in ("wq", "wk", "wv"):
        add_matrix(reg, f"local.tem.{proj}", width, width, rng)
    add_affine(reg, "local.tem.wo", width, width, rng)
    add_layer_norm(reg, "local.tem.ln1", width)
    add_layer_norm(reg, "local.tem.ln2", width)
    add_mlp(reg, "local.tem.ffn", [width, 2 * width, width], rng)


def scene_node_features(scene: Scene) -> np.ndarray:
    """(N, T_h, 5) motion features for every track."""
    return np.stack([derive_node_features(t, scene.rate_hz) for t in scene.tracks])


def embed_and_concat(node_feats: np.ndarray, pose: Tensor, reg: ParamRegistry,
                     cfg: ModelConfig) -> Tensor:
    """[MLP(motion); pose] per agent and step -> (N, T_h, 2*d_h)."""
    z_tra = mlp_forward(Tensor(node_feats), reg, "local.mlp")
    return concat([z_tra, pose], axis=-1)


def neighbor_mask(positions: np.ndarray, gamma_radius: float) -> np.ndarray:
    """(T, N, N) boolean: [t, i, j] true iff j is a neighbour of i at step t.

    Self is excluded; membership uses Euclidean distance <= gamma_radius on the
    positions of that timestep.
    """
    pos_t = positions.transpose(1, 0, 2)                # (T, N, 2)
    diff = pos_t[:, :, None, :] - pos_t[:, None, :, :]  # (T, N, N, 2)
    dist = np.sqrt((diff * diff).sum(-1))
    mask = dist <= gamma_radius
    n = positions.shape[0]
    mask[:, np.arange(n), np.arange(n)] = False
    return mask


def neighbor_sets(positions: np.ndarray, gamma_radius: float) -> list[list[np.ndarray]]:
    """Index view of the gate: [i][t] -> neighbour indices of agent i at t."""
    mask = neighbor_mask(positions, gamma_radius)
    n, t_h = positions.shape[0], positions.shape[1]
    return [[np.nonzero(mask[t, i])[0] for t in range(t_h)] for i in range(n)]


def spatial_attend(z_con: Tensor, neighbors: np.ndarray, alpha: float,
                   reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Radius-gated attention over other agents, per timestep.

    z_con (N, T, 2*d_h); neighbors (T, N, N) boolean.  Output rows with an
    empty neighbourhood equal their input rows exactly.
    """
    zt = z_con.transpose(1, 0, 2)                       # (T, N, D)
    q = split_heads(zt @ reg["local.spa.wq"], cfg.heads)
    k = split_heads(zt @ reg["local.spa.wk"], cfg.heads)
    v = split_heads(zt @ reg["local.spa.wv"], cfg.heads)

    scale = 1.0 / np.sqrt(cfg.d_h)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale      # (T, H, N, N)
    additive = np.where(neighbors[:, None, :, :], 0.0, -np.inf)
    att = softmax(scores + Tensor(additive), axis=-1) @ v
    aw = merge_heads(att)                               # (T, N, D)

    blended = alpha * zt + (1.0 - alpha) * aw
    empty = ~neighbors.any(axis=-1)[..., None]          # (T, N, 1)
    out = where(empty, zt, blended)
    return out.transpose(1, 0, 2)


def temporal_attend(z_spa: Tensor, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Causally masked attention block over each agent's own sequence."""
    t_h = z_spa.shape[1]
    x = z_spa + reg["local.pos.emb"][:t_h]
    q = x @ reg["local.tem.wq"]
    k = x @ reg["local.tem.wk"]
    v = x @ reg["local.tem.wv"]
    att = multi_head_attention(q, k, v, cfg.heads, mask=causal_mask(t_h),
                               scale=1.0 / np.sqrt(cfg.d_h))
    h = layer_norm(x + affine(att, reg, "local.tem.wo"), reg, "local.tem.ln1")
    return layer_norm(h + mlp_forward(h, reg, "local.tem.ffn"), reg, "local.tem.ln2")


def local_final(local_seq: Tensor) -> Tensor:
    """Last observed step's feature, (N, 2*d_h)."""
    return local_seq[:, local_seq.shape[1] - 1, :]


def encode_local(scene: Scene, pose: Tensor, reg: ParamRegistry,
                 cfg: ModelConfig) -> Tensor:
    """Full local stage: features -> concat -> spatial -> temporal."""
    z_con = embed_and_concat(scene_node_features(scene), pose, reg, cfg)
    gates = neighbor_mask(scene.positions(), cfg.gamma_radius)
    z_spa = spatial_attend(z_con, gates, cfg.alpha, reg, cfg)
    return temporal_attend(z_spa, reg, cfg)
