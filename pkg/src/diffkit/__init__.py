from src.diffkit.gradcheck import GradReport, finite_diff_check
from src.diffkit.graph import Graph, evaluate, value_and_grad
from src.diffkit.tensor import (
    Tensor, abs_, add, as_tensor, clamp_min, concat, div, exp, lgamma, log, logsumexp,
    matmul, mean, mul, reshape, rsqrt, sigmoid, slice_, softmax, softplus,
    square, sub, sum_, swish, tanh, transpose,
)

__all__ = [
    "GradReport", "Graph", "Tensor", "abs_", "add", "as_tensor", "clamp_min", "concat", "div",
    "evaluate", "exp", "finite_diff_check", "lgamma", "log", "logsumexp", "matmul",
    "mean", "mul", "reshape", "rsqrt", "sigmoid", "slice_", "softmax", "softplus",
    "square", "sub", "sum_", "swish", "tanh", "transpose", "value_and_grad",
]
