"""Small reverse-mode autodiff engine over numpy arrays."""

from .core import (
    ShapeError,
    Tape,
    Tensor,
    add,
    concat,
    dropout,
    embedding_gather,
    gelu,
    layer_norm,
    log_softmax,
    masked_fill,
    matmul,
    max_,
    mean,
    mul,
    reshape,
    scale,
    softmax,
    sub,
    sum_,
    transpose,
)
from .optim import (
    Adam,
    CheckpointError,
    TargetError,
    label_smoothed_cross_entropy,
    load_tensors,
    save_tensors,
    smoothed_targets,
)

__all__ = [
    "Adam", "CheckpointError", "ShapeError", "Tape", "TargetError", "Tensor", "add", "concat", "dropout",
    "embedding_gather", "gelu", "label_smoothed_cross_entropy", "layer_norm", "load_tensors", "log_softmax",
    "masked_fill", "matmul", "max_", "mean", "mul", "reshape", "save_tensors", "scale", "smoothed_targets",
    "softmax", "sub", "sum_", "transpose",
]
