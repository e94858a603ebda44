from .core import (
    DEFAULT_DTYPE,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    finite_checks,
    no_grad,
    parameter,
)
from .ops import (
    add,
    add_bias,
    concat,
    div,
    exp,
    getitem,
    l2_normalize,
    matmul,
    mean,
    mul,
    neg,
    pad2d,
    relu,
    reshape,
    scale_rows,
    softmax,
    square,
    stack,
    sub,
    transpose,
)
from .ops import sum as tsum
from .nn import (
    bilinear_matrix,
    center_spatial,
    conv2d,
    conv_output_size,
    count_multiplies,
    group_norm,
    sum_pool2d,
    upsample_bilinear,
)
from .gradcheck import GradCheckReport, grad_check
from . import io
