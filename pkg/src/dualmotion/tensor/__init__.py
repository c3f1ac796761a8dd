from .autograd import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv2d,
    conv3d,
    conv_temporal,
    cos,
    div,
    exp,
    expand,
    getitem,
    l2_normalize,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    resample,
    reshape,
    sigmoid,
    sin,
    sqrt,
    square,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
    zero_grad,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step
