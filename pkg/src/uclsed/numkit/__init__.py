from .autodiff import (
    Tensor,
    as_tensor,
    clamp_min,
    digamma as t_digamma,
    exp,
    gather_rows,
    lgamma as t_lgamma,
    log,
    logsumexp,
    matmul,
    no_grad,
    normalize_rows,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    segment_sum,
    softplus,
    spmm,
    sqrt,
    temporal_aggregate,
)
from .gradcheck import GradCheckReport, NonFiniteLoss, grad_check
from .special import DomainError, digamma, lgamma, trigamma
