"""Float64 tensors, primitives, reverse-mode differentiation and a gradient oracle."""

from . import ops
from .gradcheck import GradCheckResult, grad_check, relative_error
from .kernels import BACKEND
from .ops import BatchNormState
from .rng import Rng
from .tensor import Graph, Node, Tensor, backward, trace

__all__ = [
    "BACKEND", "BatchNormState", "Graph", "GradCheckResult", "Node", "Rng", "Tensor",
    "backward", "grad_check", "ops", "relative_error", "trace",
]
