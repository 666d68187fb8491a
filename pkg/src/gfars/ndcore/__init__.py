"""Small reverse-mode autodiff core over numpy float64 arrays."""

from .checkpoint import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import EvaluationError, GradCheckReport, grad_check
from .tensor import (
    DimensionError,
    EmptyInputError,
    ModelParams,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    bce_with_logits,
    bias_add,
    branch_trace,
    concat,
    gather_rows,
    grad_enabled,
    matmul,
    max_over_rows,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    segment_max,
    sigmoid,
    softplus,
    square,
    sub,
    sum,
)

__all__ = [
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "DimensionError",
    "EmptyInputError",
    "EvaluationError",
    "GradCheckReport",
    "ModelParams",
    "NonFiniteError",
    "Tensor",
    "add",
    "as_tensor",
    "bce_with_logits",
    "bias_add",
    "branch_trace",
    "concat",
    "decode_checkpoint",
    "encode_checkpoint",
    "gather_rows",
    "grad_check",
    "grad_enabled",
    "load_checkpoint",
    "matmul",
    "max_over_rows",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "segment_max",
    "sigmoid",
    "softplus",
    "square",
    "sub",
    "sum",
    "elementwise",
    "reduce",
]


def elementwise(op: str, *args):
    """Dispatch one of ``add``, ``mul``, ``relu``, ``softplus``, ``scale`` by name."""
    table = {"add": add, "mul": mul, "relu": relu, "softplus": softplus, "scale": scale}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


def reduce(op: str, t):
    table = {"sum": sum, "mean": mean, "max_over_rows": max_over_rows}
    if op not in table:
        raise ValueError(f"unknown reduction {op!r}")
    return table[op](t)
