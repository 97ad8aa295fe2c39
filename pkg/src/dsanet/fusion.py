"""Temporal context block: frame-to-token cross-attention followed by
action-guided feature modulation (quantum or classical head)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamGroup
from .qsim import quantum_layer
from .tensor import DimensionError, Tensor, parameter, uniform_init

VARIANTS = ("quantum", "classical")


@dataclass
class TCParams(ParamGroup):
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_pre: Tensor  # d_h -> n_q
    b_pre: Tensor
    w_post: Tensor  # n_q -> 2 * d_h, output split as [gamma | beta]
    b_post: Tensor
    theta: Tensor | None = None  # quantum variant: (n_ql, n_q, 3)
    w_mlp1: Tensor | None = None  # classical variant: n_q -> n_q (tanh) -> n_q
    b_mlp1: Tensor | None = None
    w_mlp2: Tensor | None = None
    variant: str = "quantum"
    ring_entanglement: bool = False
    gradient_method: str = "adjoint"

    @property
    def d_h(self) -> int:
        return self.w_q.shape[1]

    @property
    def n_q(self) -> int:
        return self.w_pre.shape[1]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_h: int,
        d_tokens: int,
        n_q: int,
        n_ql: int,
        variant: str = "quantum",
        ring_entanglement: bool = False,
        gradient_method: str = "adjoint",
    ) -> TCParams:
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        extra = {}
        if variant == "quantum":
            extra["theta"] = parameter(rng.uniform(0.0, 2.0 * math.pi, size=(n_ql, n_q, 3)))
        else:
            extra["w_mlp1"] = parameter(uniform_init(rng, (n_q, n_q), n_q))
            extra["b_mlp1"] = parameter(np.zeros(n_q))
            extra["w_mlp2"] = parameter(uniform_init(rng, (n_q, n_q), n_q))
        # identity modulation at start: gamma ~ 1, beta ~ 0
        b_post = np.concatenate([np.ones(d_h), np.zeros(d_h)])
        return cls(
            w_q=parameter(uniform_init(rng, (d_h, d_h), d_h)),
            b_q=parameter(np.zeros(d_h)),
            w_k=parameter(uniform_init(rng, (d_tokens, d_h), d_tokens)),
            b_k=parameter(np.zeros(d_h)),
            w_v=parameter(uniform_init(rng, (d_tokens, d_h), d_tokens)),
            b_v=parameter(np.zeros(d_h)),
            w_pre=parameter(uniform_init(rng, (d_h, n_q), d_h)),
            b_pre=parameter(np.zeros(n_q)),
            w_post=parameter(uniform_init(rng, (n_q, 2 * d_h), n_q)),
            b_post=parameter(b_post),
            variant=variant,
            ring_entanglement=ring_entanglement,
            gradient_method=gradient_method,
            **extra,
        )


@dataclass
class AttentionMaps:
    A: Tensor  # L x M, frame -> token, rows sum to 1
    rho: Tensor  # M x L, token -> frame, rows sum to 1


@dataclass
class ModulationParams:
    gamma: Tensor
    beta: Tensor


def cross_attention(xf: Tensor, xa: Tensor, p: TCParams) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(A, A V, rho)`` for frame queries against token keys/values."""
    if xa.ndim != 2 or xa.shape[0] == 0:
        raise DimensionError(f"cross-attention needs at least one token, got {xa.shape}")
    if xf.ndim != 2 or xf.shape[1] != p.w_q.shape[0]:
        raise DimensionError(f"frame features {xf.shape} do not match W_q {p.w_q.shape}")
    if xa.shape[1] != p.w_k.shape[0]:
        raise DimensionError(f"token features {xa.shape} do not match W_k {p.w_k.shape}")
    q = xf @ p.w_q + p.b_q
    k = xa @ p.w_k + p.b_k
    v = xa @ p.w_v + p.b_v
    scale = 1.0 / math.sqrt(p.d_h)
    A = T.softmax_rows(T.matmul_sorted(q, k.T) * scale)
    rho = T.softmax_rows(T.matmul_sorted(k, q.T) * scale)
    return A, T.matmul_sorted(A, v), rho


def modulation_params(a_prime: Tensor, p: TCParams) -> ModulationParams:
    xq = a_prime @ p.w_pre + p.b_pre
    if p.variant == "quantum":
        z = quantum_layer(xq, p.theta, ring=p.ring_entanglement, method=p.gradient_method)
    else:
        z = T.activation(xq @ p.w_mlp1 + p.b_mlp1, "tanh") @ p.w_mlp2
    gb = z @ p.w_post + p.b_post
    d = p.d_h
    return ModulationParams(gamma=gb[:, :d], beta=gb[:, d:])


def tc_forward(xf: Tensor, xa: Tensor, p: TCParams) -> tuple[Tensor, AttentionMaps]:
    A, a_prime, rho = cross_attention(xf, xa, p)
    mod = modulation_params(a_prime, p)
    return mod.gamma * xf + mod.beta, AttentionMaps(A=A, rho=rho)
