from . import ops
from .conv import conv2d, conv_output_size, conv_transpose2d
from .core import (
    GraphError,
    Node,
    NonFiniteError,
    Tensor,
    backward,
    default_dtype,
    grad_enabled,
    no_grad,
    precision,
)
from .gradcheck import gradient_check, relative_error
from .ops import elementwise, matmul, softmax

__all__ = [
    "GraphError", "Node", "NonFiniteError", "Tensor", "backward", "conv2d",
    "conv_output_size", "conv_transpose2d", "default_dtype", "elementwise",
    "grad_enabled", "gradient_check", "matmul", "no_grad", "ops", "precision",
    "relative_error", "softmax",
]
