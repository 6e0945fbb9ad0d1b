from .tensor import (
    NotScalar,
    ShapeMismatch,
    Tensor,
    clamp_min,
    concat,
    default_dtype,
    l2norm,
    no_grad,
    set_default_dtype,
    softmax,
    stack,
    where,
)
from .layers import (
    CHECKPOINT_FORMAT_VERSION,
    ParamRegistry,
    add_affine,
    add_embedding,
    add_encoder_block,
    add_layer_norm,
    add_matrix,
    add_mlp,
    affine,
    attention,
    causal_mask,
    encoder_block,
    glorot_uniform,
    layer_norm,
    merge_heads,
    mlp_forward,
    multi_head_attention,
    split_heads,
)
from .checkpoint import (
    CheckpointError,
    checkpoint_document,
    fill_registry,
    read_checkpoint,
    save_checkpoint,
)
