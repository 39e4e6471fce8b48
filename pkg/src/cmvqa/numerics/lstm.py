"""Single-step LSTM cell built from the primitive ops.

Gate weights are packed into one (d_in + d_h, 4 * d_h) matrix with column
blocks ordered [input, forget, candidate, output], so a step costs one affine
map plus the gate nonlinearities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_last,
    mul,
    pointwise_channel_map,
    sigmoid,
    slice_last,
    tanh,
    uniform_init,
)


@dataclass
class LstmParams:
    w: Tensor  # (d_in + d_h, 4 * d_h)
    b: Tensor  # (4 * d_h,)

    @property
    def hidden_size(self) -> int:
        return self.w.shape[1] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[0] - self.hidden_size


def init_lstm(gen: np.random.Generator, d_in: int, d_h: int, forget_bias: float = 1.0) -> LstmParams:
    """Uniform fan-based init; forget-gate bias starts at `forget_bias`."""
    w = uniform_init(gen, (d_in + d_h, 4 * d_h), d_in + d_h, 4 * d_h)
    b = np.zeros(4 * d_h)
    b[d_h : 2 * d_h] = forget_bias
    return LstmParams(w=w, b=Tensor(b, requires_grad=True))


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One gated recurrent update; returns (h_t, c_t)."""
    d_h = params.hidden_size
    d_in = params.input_size
    if x_t.shape != (d_in,):
        raise ShapeError(f"lstm_step input shape {x_t.shape} does not match params ({d_in},)")
    if h_prev.shape != (d_h,) or c_prev.shape != (d_h,):
        raise ShapeError(
            f"lstm_step state shapes {h_prev.shape}/{c_prev.shape} do not match params ({d_h},)"
        )
    z = pointwise_channel_map(concat_last([x_t, h_prev]), params.w, params.b)
    i = sigmoid(slice_last(z, 0, d_h))
    f = sigmoid(slice_last(z, d_h, 2 * d_h))
    g = tanh(slice_last(z, 2 * d_h, 3 * d_h))
    o = sigmoid(slice_last(z, 3 * d_h, 4 * d_h))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t
