"""Numerics core: tensors with reverse-mode autodiff, LSTM cell, Adam, grad check."""

from .gradcheck import GradCheckReport, ParamCheck, grad_check
from .lstm import LstmParams, init_lstm, lstm_step
from .optim import OptimState, adam_step
from .rng import Rng
from .tensor import (
    NonFiniteError,
    NumericsError,
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat_last,
    conv2d,
    cross_entropy,
    matmul,
    mean_over_axes,
    mul,
    pointwise_channel_map,
    relu,
    reshape,
    rows,
    scale,
    sigmoid,
    slice_last,
    softmax_rows,
    stack_rows,
    sub,
    sum_over_axes,
    tanh,
    transpose2d,
    uniform_init,
    upsample_nearest,
    zeros_param,
)

__all__ = [
    "GradCheckReport",
    "LstmParams",
    "NonFiniteError",
    "NumericsError",
    "OptimState",
    "ParamCheck",
    "Rng",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "broadcast_to",
    "concat_last",
    "conv2d",
    "cross_entropy",
    "grad_check",
    "init_lstm",
    "lstm_step",
    "matmul",
    "mean_over_axes",
    "mul",
    "pointwise_channel_map",
    "relu",
    "reshape",
    "rows",
    "scale",
    "sigmoid",
    "slice_last",
    "softmax_rows",
    "stack_rows",
    "sub",
    "sum_over_axes",
    "tanh",
    "transpose2d",
    "uniform_init",
    "upsample_nearest",
    "zeros_param",
]
