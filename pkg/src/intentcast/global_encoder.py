"""Scene-level interaction at the last observed step.

Each ordered agent pair carries a relative-pose edge feature; attention keys
and values are built from the neighbour's local feature concatenated with the
embedded edge, queries from the agent's own local feature.  All pairs
interact (no distance gate at this stage).
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .nn import (
    ParamRegistry,
    Tensor,
    add_layer_norm,
    add_matrix,
    add_mlp,
    concat,
    layer_norm,
    merge_heads,
    mlp_forward,
    softmax,
    split_heads,
)
from .scene import Scene, wrap_angle_array


def edge_features(scene: Scene) -> np.ndarray:
    """(N, N, 6) with [i, j] = (dx, dy, dvx, dvy, cos dyaw, sin dyaw) at the
    last observed step, deltas taken as value_j - value_i."""
    last = np.stack([t.state_array()[-1] for t in scene.tracks])  # (N, 5)
    delta = last[None, :, :4] - last[:, None, :4]
    dyaw = wrap_angle_array(last[None, :, 4] - last[:, None, 4])
    return np.concatenate([delta, np.cos(dyaw)[..., None], np.sin(dyaw)[..., None]],
                          axis=-1)


def build_global_params(reg: ParamRegistry, cfg: ModelConfig,
                        rng: np.random.Generator) -> None:
    width = 2 * cfg.d_h
    add_mlp(reg, "global.edge", [6, cfg.d_h, cfg.d_h], rng)
    add_matrix(reg, "global.wq", width, width, rng)
    add_matrix(reg, "global.wk", width + cfg.d_h, width, rng)
    add_matrix(reg, "global.wv", width + cfg.d_h, width, rng)
    add_layer_norm(reg, "global.ln", width)


def global_attend(z_loc: Tensor, edges: np.ndarray, reg: ParamRegistry,
                  cfg: ModelConfig) -> Tensor:
    """Edge-augmented attention over all other agents; (N, 2*d_h) in and out.

    A single agent has no pairs and passes through unchanged.
    """
    n, width = z_loc.shape
    if n == 1:
        return z_loc

    e = mlp_forward(Tensor(edges.reshape(n * n, 6)), reg, "global.edge")
    e = e.reshape(n, n, cfg.d_h)
    z_j = z_loc.reshape(1, n, width) * Tensor(np.ones((n, 1, 1)))
    kv_in = concat([z_j, e], axis=-1)                    # (N, N, 3*d_h)

    q = split_heads((z_loc @ reg["global.wq"]).reshape(n, 1, width), cfg.heads)
    k = split_heads(kv_in @ reg["global.wk"], cfg.heads)
    v = split_heads(kv_in @ reg["global.wv"], cfg.heads)

    scale = 1.0 / np.sqrt(cfg.d_h)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale       # (N, H, 1, N)
    mask = np.zeros((n, 1, 1, n))
    mask[np.arange(n), :, :, np.arange(n)] = -np.inf
    att = softmax(scores + Tensor(mask), axis=-1) @ v
    att = merge_heads(att).reshape(n, width)

    return layer_norm(z_loc + att, reg, "global.ln")
