from .optim import Adam, OptimizerState, cosine_lr
from .tensor import (
    SELU_ALPHA,
    SELU_LAMBDA,
    Tensor,
    add,
    as_tensor,
    backward,
    batch_norm,
    build_tape,
    clip_min,
    div,
    exp,
    gaussian_sample,
    getitem,
    is_grad_enabled,
    log,
    log_sigmoid,
    logsumexp,
    matmul,
    mul,
    neg,
    no_grad,
    reduce_mean,
    reduce_sum,
    reshape,
    selu,
    sigmoid,
    softplus,
    square,
    sub,
    tanh,
    transpose,
    zero_grad,
)

__all__ = [name for name in dir() if not name.startswith("_")]
