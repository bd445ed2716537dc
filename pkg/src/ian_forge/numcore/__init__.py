"""Minimal float64 tensor algebra, reverse-mode differentiation and seeded sampling."""

from .gradcheck import finite_diff_grad, relative_error
from .rng import Rng
from .tensor import (
    ACTIVATIONS,
    Graph,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    bce,
    bce_with_logits,
    forward_eval,
    grad,
    identity,
    l1,
    leaky_relu,
    linear,
    matmul,
    mean,
    mul,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    squared_l2,
    sub,
    sum_,
    tanh,
)


def sample_uniform(rng: Rng, shape, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    """i.i.d. uniform [lo, hi) entries drawn from ``rng``."""
    return Tensor(rng.uniform(tuple(shape), lo, hi))


__all__ = [
    "ACTIVATIONS", "Graph", "NonFiniteError", "Rng", "ShapeError", "Tensor",
    "add", "as_tensor", "backward", "bce", "bce_with_logits", "finite_diff_grad",
    "forward_eval", "grad", "identity", "l1", "leaky_relu", "linear", "matmul",
    "mean", "mul", "relative_error", "relu", "sample_uniform", "sigmoid", "softmax",
    "softmax_cross_entropy", "squared_l2", "sub", "sum_", "tanh",
]
