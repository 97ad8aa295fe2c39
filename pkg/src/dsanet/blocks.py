"""Stream encoders: the gated state-space temporal encoder (frame stream), the
dilated residual TCN (action-token stream), and sinusoidal positions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .params import ParamGroup
from .tensor import DimensionError, Tensor, parameter, uniform_init


@dataclass
class TEParams(ParamGroup):
    """Weights of one temporal encoder, stored for row-major ``x @ W`` use.

    ``w_f``: d_in x d_e, ``w_a``: d_e x d_s, ``w_b``: d_s x d_s, ``w_c``: d_s,
    ``w_g``: d_in x d_s, ``w_out``: d_s x d_out.
    """

    w_f: Tensor
    b_f: Tensor
    w_a: Tensor
    w_b: Tensor
    w_c: Tensor
    w_g: Tensor
    b_g: Tensor
    w_out: Tensor
    b_out: Tensor

    @property
    def d_in(self) -> int:
        return self.w_f.shape[0]

    @property
    def d_e(self) -> int:
        return self.w_f.shape[1]

    @property
    def d_s(self) -> int:
        return self.w_a.shape[1]

    @property
    def d_out(self) -> int:
        return self.w_out.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, d_e: int, d_s: int | None = None) -> TEParams:
        d_s = d_e if d_s is None else d_s
        return cls(
            w_f=parameter(uniform_init(rng, (d_in, d_e), d_in)),
            b_f=parameter(np.zeros(d_e)),
            w_a=parameter(uniform_init(rng, (d_e, d_s), d_e)),
            w_b=parameter(uniform_init(rng, (d_s, d_s), d_s)),
            w_c=parameter(np.zeros(d_s)),
            w_g=parameter(uniform_init(rng, (d_in, d_s), d_in)),
            b_g=parameter(np.zeros(d_s)),
            w_out=parameter(uniform_init(rng, (d_s, d_out), d_s)),
            b_out=parameter(np.zeros(d_out)),
        )


def te_forward(x: Tensor, p: TEParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.d_in:
        raise DimensionError(f"temporal encoder expects (L, {p.d_in}) input, got {x.shape}")
    x_proj = x @ p.w_f + p.b_f
    # state matrix kept frame-major (L x d_s), i.e. the transpose of S
    s = T.activation(x_proj @ p.w_a, "tanh")
    s_prime = T.activation(s @ p.w_b + p.w_c, "gelu")
    gate = T.activation(x @ p.w_g + p.b_g, "sigmoid")
    return (s_prime * gate) @ p.w_out + p.b_out


@dataclass
class GELayer(ParamGroup):
    w_dilated: Tensor  # (3 * d) x d, taps stacked as [t - dil, t, t + dil]
    b_dilated: Tensor
    w_pointwise: Tensor
    b_pointwise: Tensor


@dataclass
class GEParams(ParamGroup):
    w_in: Tensor
    b_in: Tensor
    layers: list[GELayer] = field(default_factory=list)

    @property
    def d_in(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_in.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, num_layers: int) -> GEParams:
        layers = [
            GELayer(
                w_dilated=parameter(uniform_init(rng, (3 * d_out, d_out), 3 * d_out)),
                b_dilated=parameter(np.zeros(d_out)),
                w_pointwise=parameter(uniform_init(rng, (d_out, d_out), d_out)),
                b_pointwise=parameter(np.zeros(d_out)),
            )
            for _ in range(num_layers)
        ]
        return cls(
            w_in=parameter(uniform_init(rng, (d_in, d_out), d_in)),
            b_in=parameter(np.zeros(d_out)),
            layers=layers,
        )


def dilated_conv(x: Tensor, w: Tensor, b: Tensor, dilation: int) -> Tensor:
    """Kernel-3 temporal convolution with symmetric zero padding."""
    taps = T.concat([T.shift_rows(x, -dilation), x, T.shift_rows(x, dilation)], axis=1)
    return taps @ w + b


def ge_forward(x: Tensor, p: GEParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.d_in:
        raise DimensionError(f"global encoder expects (M, {p.d_in}) input, got {x.shape}")
    h = x @ p.w_in + p.b_in
    for depth, layer in enumerate(p.layers):
        branch = T.activation(dilated_conv(h, layer.w_dilated, layer.b_dilated, 2**depth), "relu")
        h = h + (branch @ layer.w_pointwise + layer.b_pointwise)
    return h


def positional_encoding(length: int, dim: int) -> Tensor:
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if dim < 2 or dim % 2:
        raise ValueError(f"positional encoding needs an even dim >= 2, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(pos / freq)
    table[:, 1::2] = np.cos(pos / freq)
    return Tensor(table)
