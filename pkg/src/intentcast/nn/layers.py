"""Parameter registry plus the functional layers the encoders are built from.

Initialization conventions (recorded here so runs are reproducible):
  * affine weights: uniform in +/- sqrt(6 / (fan_in + fan_out))
  * affine biases: zeros
  * learned embeddings / tokens: normal with std 0.02
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeMismatch, Tensor, concat, softmax

CHECKPOINT_FORMAT_VERSION = 1


class ParamRegistry:
    """Named collection of trainable tensors."""

    def __init__(self, version: int = CHECKPOINT_FORMAT_VERSION):
        self.version = version
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._entries[n]) for n in self.names()]

    def n_scalars(self) -> int:
        return sum(t.size for t in self._entries.values())

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self.names() if n.startswith(prefix)]


# -- initializers -------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple | None = None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_affine(reg: ParamRegistry, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator) -> None:
    reg.add(name + ".w", glorot_uniform(rng, fan_in, fan_out))
    reg.add(name + ".b", np.zeros(fan_out))


def add_matrix(reg: ParamRegistry, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator) -> None:
    """Bias-free projection matrix."""
    reg.add(name, glorot_uniform(rng, fan_in, fan_out))


def add_embedding(reg: ParamRegistry, name: str, shape: tuple,
                  rng: np.random.Generator) -> None:
    reg.add(name, rng.normal(0.0, 0.02, size=shape))


def add_layer_norm(reg: ParamRegistry, name: str, width: int) -> None:
    reg.add(name + ".g", np.ones(width))
    reg.add(name + ".b", np.zeros(width))


def add_mlp(reg: ParamRegistry, prefix: str, dims: list[int],
            rng: np.random.Generator) -> None:
    """Register an MLP as `{prefix}.l{i}` affine layers; dims includes input."""
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        add_affine(reg, f"{prefix}.l{i}", fi, fo, rng)


# -- functional layers ----------------------------------------------------------


def affine(x: Tensor, reg: ParamRegistry, name: str) -> Tensor:
    return x @ reg[name + ".w"] + reg[name + ".b"]


def mlp_forward(x: Tensor, reg: ParamRegistry, prefix: str) -> Tensor:
    """Alternating affine + ReLU with a plain affine final layer."""
    layers = sorted({n.rsplit(".", 1)[0] for n in reg.with_prefix(prefix + ".l")})
    if not layers:
        raise ShapeMismatch(f"no MLP layers registered under {prefix!r}")
    layers.sort(key=lambda n: int(n.rsplit(".l", 1)[1]))
    out = x
    for i, layer in enumerate(layers):
        out = affine(out, reg, layer)
        if i + 1 < len(layers):
            out = out.relu()
    return out


def layer_norm(x: Tensor, reg: ParamRegistry, name: str, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    xn = xc / (var + eps).sqrt()
    return xn * reg[name + ".g"] + reg[name + ".b"]


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
              scale: float | None = None) -> Tensor:
    """softmax(q k^T * scale + mask) v over the last two axes.

    q: (..., Lq, D), k: (..., Lk, D), v: (..., Lk, Dv); mask broadcasts over
    the score shape with entries in {0, -inf}.  Default scale is 1/sqrt(D).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"q/k widths disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"k/v lengths disagree: {k.shape} vs {v.shape}")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * scale
    if mask is not None:
        scores = scores + Tensor(mask)
    return softmax(scores, axis=-1) @ v


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, L, D) -> (B, H, L, D/H)."""
    b, l, d = x.shape
    if d % heads:
        raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
    return x.reshape(b, l, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, L, Dh) -> (B, L, H*Dh)."""
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         mask: np.ndarray | None = None,
                         scale: float | None = None) -> Tensor:
    """Batched multi-head attention; q (B, Lq, D), k/v (B, Lk, D)."""
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    if scale is None:
        scale = 1.0 / np.sqrt(qh.shape[-1])
    out = attention(qh, kh, vh, mask=mask, scale=scale)
    return merge_heads(out)


def causal_mask(length: int) -> np.ndarray:
    """(L, L) mask: entry [v, u] is 0 for keys u <= v and -inf for u > v."""
    m = np.zeros((length, length))
    m[np.triu_indices(length, k=1)] = -np.inf
    return m


def encoder_block(x: Tensor, reg: ParamRegistry, prefix: str, heads: int,
                  mask: np.ndarray | None = None,
                  scale: float | None = None) -> Tensor:
    """Post-norm self-attention block: LN(x + MHA(x)) then LN(h + FFN(h))."""
    q = affine(x, reg, prefix + ".wq")
    k = affine(x, reg, prefix + ".wk")
    v = affine(x, reg, prefix + ".wv")
    att = multi_head_attention(q, k, v, heads, mask=mask, scale=scale)
    h = layer_norm(x + affine(att, reg, prefix + ".wo"), reg, prefix + ".ln1")
    return layer_norm(h + mlp_forward(h, reg, prefix + ".ffn"), reg, prefix + ".ln2")


def add_encoder_block(reg: ParamRegistry, prefix: str, width: int,
                      rng: np.random.Generator, ffn_hidden: int | None = None) -> None:
    for proj in ("wq", "wk", "wv", "wo"):
        add_affine(reg, f"{prefix}.{proj}", width, width, rng)
    add_layer_norm(reg, prefix + ".ln1", width)
    add_layer_norm(reg, prefix + ".ln2", width)
    add_mlp(reg, prefix + ".ffn", [width, ffn_hidden or 2 * width, width], rng)


__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "ParamRegistry",
    "add_affine",
    "add_embedding",
    "add_encoder_block",
    "add_layer_norm",
    "add_matrix",
    "add_mlp",
    "affine",
    "attention",
    "causal_mask",
    "concat",
    "encoder_block",
    "glorot_uniform",
    "layer_norm",
    "merge_heads",
    "mlp_forward",
    "multi_head_attention",
    "split_heads",
]
