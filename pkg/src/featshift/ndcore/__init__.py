"""
ndcore - dense tensors with reverse-mode automatic differentiation

Just enough numerics to train a small CNN with augmentation layers on CPU.
"""

from .gradcheck import finite_diff_check, max_relative_error
from .io import export_tensor, import_tensor
from .ops import (
    BATCH_AXIS,
    SPATIAL_AXES,
    add,
    as_tensor,
    conv2d,
    cross_entropy,
    div,
    elementwise,
    exp,
    flatten,
    global_avg_pool,
    index_select,
    linear,
    log,
    mul,
    neg,
    reduce,
    relu,
    reshape,
    sqrt,
    stop_gradient,
    sub,
    tanh,
    total,
)
from .tensor import SAFE_DIVISOR_FLOOR, Graph, Tensor, backward, current_graph

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "current_graph",
    "SAFE_DIVISOR_FLOOR",
    "SPATIAL_AXES",
    "BATCH_AXIS",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sqrt",
    "relu",
    "tanh",
    "exp",
    "log",
    "reduce",
    "reshape",
    "flatten",
    "index_select",
    "global_avg_pool",
    "conv2d",
    "linear",
    "cross_entropy",
    "total",
    "stop_gradient",
    "as_tensor",
    "finite_diff_check",
    "max_relative_error",
    "export_tensor",
    "import_tensor",
]
