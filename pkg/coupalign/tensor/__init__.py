from coupalign.tensor.core import (
    EPS_NORM,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    default_dtype,
    div,
    exp,
    get_default_dtype,
    get_tape,
    getitem,
    l2_normalize,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scale,
    set_default_dtype,
    sigmoid,
    softmax,
    softplus,
    stack,
    sub,
    take,
    tanh,
    transpose,
    tsum,
)
from coupalign.tensor.gradcheck import grad_check
from coupalign.tensor.layers import (
    BatchNormState,
    batch_norm,
    bilinear_upsample,
    conv2d,
    layer_norm,
    linear,
)
