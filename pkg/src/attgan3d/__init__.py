"""Joint space-time video super-resolution toolkit.

A small differentiable engine over 5-axis tensors (batch, channel, depth,
height, width) plus the attention generator, the two-branch discriminator,
least-squares adversarial training, clip I/O, and quality metrics built on it.
"""

from .tensor import (
    DegenerateBatch,
    DimensionMismatch,
    GraphContract,
    InvalidGeometry,
    Shape5,
    Tensor,
    default_dtype,
    grad_enabled,
    no_grad,
    scalar,
    set_default_dtype,
    using_dtype,
    zero_grads,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateBatch",
    "DimensionMismatch",
    "GraphContract",
    "InvalidGeometry",
    "Shape5",
    "Tensor",
    "default_dtype",
    "grad_enabled",
    "no_grad",
    "scalar",
    "set_default_dtype",
    "using_dtype",
    "zero_grads",
    "__version__",
]
