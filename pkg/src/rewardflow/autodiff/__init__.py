"""Dense-tensor math with reverse-mode automatic differentiation and AdamW."""

from .errors import (
    AutodiffError,
    ConfigurationError,
    DimensionError,
    NumericalError,
    OptimizerError,
    TapeError,
)
from .functional import (
    bce_with_logits,
    check_finite,
    embedding_lookup,
    layer_norm,
    mean_sq_error_per_sample,
    mse_loss,
    neighbor_diff_penalty,
    silu,
    softmax_last_axis,
)
from .gradcheck import grad_check
from .optim import AdamW, AdamWState, ParamGroup, adamw_step
from .tensor import (
    Tape,
    Tensor,
    active_dtype,
    add,
    axis_max,
    backward,
    div,
    exp,
    get_precision,
    grad_enabled,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    precision,
    reshape,
    scale,
    set_precision,
    sorted_sum,
    sub,
    sum_last_axis,
    tape,
    tensor_sum,
    transpose,
)

__all__ = [
    "AutodiffError",
    "ConfigurationError",
    "DimensionError",
    "NumericalError",
    "OptimizerError",
    "TapeError",
    "Tape",
    "Tensor",
    "AdamW",
    "AdamWState",
    "ParamGroup",
    "adamw_step",
    "active_dtype",
    "add",
    "backward",
    "bce_with_logits",
    "check_finite",
    "div",
    "embedding_lookup",
    "exp",
    "get_precision",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "mean",
    "mean_sq_error_per_sample",
    "mse_loss",
    "mul",
    "neg",
    "neighbor_diff_penalty",
    "no_grad",
    "precision",
    "reshape",
    "scale",
    "set_precision",
    "silu",
    "softmax_last_axis",
    "axis_max",
    "sorted_sum",
    "sub",
    "sum_last_axis",
    "tape",
    "tensor_sum",
    "transpose",
]
