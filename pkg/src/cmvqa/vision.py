"""Image side: type-specific conv backbones, the type gate, blending, spatial map.

Three small strided conv stacks stand in for the per-type encoders; a separate
cheap stem classifies the image type into simplex weights w, and the blended
visual feature is v = w1*v_a + w2*v_h + w3*v_c.  The 8-D spatial map encodes
normalized cell geometry: [x_tl, y_tl, x_ctr, y_ctr, x_br, y_br, w, h].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .numerics import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    conv2d,
    mean_over_axes,
    mul,
    pointwise_channel_map,
    relu,
    reshape,
    slice_last,
    softmax_rows,
    uniform_init,
    zeros_param,
)

ENCODER_IDS = ("abdomen", "head", "chest")


@dataclass
class ConvLayer:
    weight: Tensor  # (kh, kw, c_in, c_out)
    bias: Tensor    # (c_out,)


@dataclass
class BackboneParams:
    layers: List[ConvLayer]


@dataclass
class TypeGate:
    logits: Tensor  # (3,)
    w: Tensor       # (3,), softmax of logits


@dataclass
class TypeClassifierParams:
    stem: ConvLayer
    proj_w: Tensor  # (stem channels, 3)
    proj_b: Tensor  # (3,)


@dataclass
class VisualFeatures:
    v_a: Tensor
    v_h: Tensor
    v_c: Tensor
    v: Tensor


def _n_stride2_layers(h: int, w: int, g: int) -> int:
    """Layers needed to shrink (h, w) to (g, g) by factors of two."""
    if h != w:
        raise ShapeError(f"expected square input, got {h}x{w}")
    if h % g:
        raise ShapeError(f"input size {h} not divisible down to grid {g}")
    ratio = h // g
    n = ratio.bit_length() - 1
    if 2**n != ratio:
        raise ShapeError(f"input size {h} / grid {g} must be a power of two, got {ratio}")
    return n


def init_backbone(gen, image_size: int, c_in: int, g: int, c_v: int) -> BackboneParams:
    """Stride-2 conv stack with channels ramping up to c_v."""
    n = _n_stride2_layers(image_size, image_size, g)
    layers = []
    prev = c_in
    for i in range(n):
        out = max(4, c_v >> (n - 1 - i)) if i < n - 1 else c_v
        fan_in, fan_out = 9 * prev, 9 * out
        layers.append(
            ConvLayer(
                weight=uniform_init(gen, (3, 3, prev, out), fan_in, fan_out),
                bias=zeros_param(out),
            )
        )
        prev = out
    return BackboneParams(layers=layers)


def backbone_forward(image: Tensor, params: BackboneParams) -> Tensor:
    """Image (H, W, C_in) -> features (G, G, C_v); ReLU after every layer."""
    x = image
    for layer in params.layers:
        x = relu(conv2d(x, layer.weight, layer.bias, stride=2, padding=1))
    return x


def init_type_classifier(gen, c_in: int, stem_channels: int = 8) -> TypeClassifierParams:
    stem = ConvLayer(
        weight=uniform_init(gen, (3, 3, c_in, stem_channels), 9 * c_in, 9 * stem_channels),
        bias=zeros_param(stem_channels),
    )
    proj_w = uniform_init(gen, (stem_channels, 3), stem_channels, 3)
    proj_b = zeros_param(3)
    return TypeClassifierParams(stem=stem, proj_w=proj_w, proj_b=proj_b)


def classify_type(image: Tensor, params: TypeClassifierParams) -> TypeGate:
    """Cheap stem + global pool + affine -> simplex weights over the 3 types."""
    feats = relu(conv2d(image, params.stem.weight, params.stem.bias, stride=2, padding=1))
    pooled = mean_over_axes(feats, (0, 1))
    logits = pointwise_channel_map(pooled, params.proj_w, params.proj_b)
    w = reshape(softmax_rows(reshape(logits, (1, 3))), (3,))
    return TypeGate(logits=logits, w=w)


def blend(v_a: Tensor, v_h: Tensor, v_c: Tensor, gate: TypeGate) -> Tensor:
    """Soft selection of encoder outputs: w1*v_a + w2*v_h + w3*v_c, elementwise."""
    if not (v_a.shape == v_h.shape == v_c.shape):
        raise ShapeError(
            f"visual features disagree: {v_a.shape} vs {v_h.shape} vs {v_c.shape}"
        )
    shape = v_a.shape
    parts = []
    for i, v_i in enumerate((v_a, v_h, v_c)):
        w_i = broadcast_to(slice_last(gate.w, i, i + 1), shape)
        parts.append(mul(w_i, v_i))
    return add(add(parts[0], parts[1]), parts[2])


def encode_image(image: Tensor, backbones: dict, gate_params: TypeClassifierParams):
    """Run all three backbones and the gate; return features plus the gate."""
    gate = classify_type(image, gate_params)
    v_a = backbone_forward(image, backbones["abdomen"])
    v_h = backbone_forward(image, backbones["head"])
    v_c = backbone_forward(image, backbones["chest"])
    v = blend(v_a, v_h, v_c, gate)
    return VisualFeatures(v_a=v_a, v_h=v_h, v_c=v_c, v=v), gate


def spatial_map(g: int) -> Tensor:
    """8-channel cell-geometry map on the G x G grid, coordinates in [-1, 1].

    channels: [x_tl, y_tl, x_ctr, y_ctr, x_br, y_br, w, h];
    x varies with the column, y with the row; w = h = 2/G everywhere.
    """
    if g < 1:
        raise ShapeError(f"grid size must be >= 1, got {g}")
    s = np.zeros((g, g, 8))
    for r in range(g):
        for c in range(g):
            x_tl = -1.0 + 2.0 * c / g
            y_tl = -1.0 + 2.0 * r / g
            x_br = -1.0 + 2.0 * (c + 1) / g
            y_br = -1.0 + 2.0 * (r + 1) / g
            s[r, c] = [
                x_tl,
                y_tl,
                (x_tl + x_br) / 2.0,
                (y_tl + y_br) / 2.0,
                x_br,
                y_br,
                2.0 / g,
                2.0 / g,
            ]
    return Tensor(s)
