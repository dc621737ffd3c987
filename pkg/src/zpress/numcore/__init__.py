from . import archive
from .gradcheck import GradReport, grad_check, leaf64
from .ops import (
    ACTIVATION,
    DEFAULT_HEADS,
    MLP_RATIO,
    LinearParams,
    alpha_composite,
    attention,
    layer_norm,
    linear,
    mlp,
    softmax,
)
from .tensor import (
    Tensor,
    as_tensor,
    checked,
    clamp,
    concat,
    exp,
    gelu,
    log,
    matmul,
    memory,
    no_grad,
    precision,
    sigmoid,
    softplus,
    sqrt,
    stack,
    tanh,
    where,
)
