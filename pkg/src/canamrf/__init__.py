"""Multimodal fusion classifier with a hand-rolled differentiable core.

Modality sequences pass through temporal-convolution frontends, are fused by
adaptive recurrent (circulant) fusion blocks and a hybrid cross-modal /
self-attention module, and feed a focal-loss classifier head.  Everything is
built on a reverse-mode autodiff tape over dense float64 matrices and is
verified by finite-difference gradient checks and algebraic invariants.
"""

from .amrf import (
    MIX_VARIANTS,
    AmrfParams,
    adaptive_fuse,
    amrf,
    fusion_weights,
    init_amrf_params,
    mix,
    project_pair,
    recur,
)
from .attention import (
    HybridAttentionParams,
    SelfAttentionParams,
    cross_modal_attention,
    hybrid_attention,
    init_hybrid_params,
    self_attention,
)
from .autodiff import (
    Node,
    ParamStore,
    Tape,
    grad_check,
    matmul,
    sigmoid,
    softmax_rows,
    temporal_conv1d_meanpool,
    tensor2,
)
from .data import (
    MODALITIES,
    Dataset,
    Sample,
    SynthSpec,
    generate,
    load_dataset,
    stratified_split,
    write_dataset,
)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import (
    ModelConfig,
    build_forward,
    focal_loss,
    focal_loss_node,
    init_model_params,
    load_checkpoint,
    loss_and_grads,
    predict,
    save_checkpoint,
)
from .trainer import (
    EpochRecord,
    Metrics,
    TrainConfig,
    evaluate,
    f1_score,
    history_lines,
    step_adam,
    step_sgd,
    train,
)

__version__ = "0.1.0"
