"""The dual-stream segmentation network and its checkpoint format."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import GEParams, TEParams, ge_forward, positional_encoding, te_forward
from .fusion import VARIANTS, AttentionMaps, TCParams, tc_forward
from .params import ParamGroup
from .tensor import DimensionError, Tensor, parameter, uniform_init

CHECKPOINT_MAGIC = b"DSA1"
H_A_SOURCES = ("ge_output", "raw_tokens")


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 10
    d_f: int = 2048
    d_h: int = 64
    d_a: int = 64
    d_at: int = 64
    M: int = 24
    N: int = 3
    n_q: int = 4
    n_ql: int = 3
    variant: str = "quantum"
    seed: int = 0
    ge_layers: int = 10
    d_e_input: int = 128
    expansion: int = 2
    ring_entanglement: bool = False
    h_a_source: str = "ge_output"
    gradient_method: str = "adjoint"

    def __post_init__(self):
        dims = ("num_classes", "d_f", "d_h", "d_a", "d_at", "M", "N", "n_q", "d_e_input", "expansion")
        bad = [name for name in dims if getattr(self, name) < 1]
        if bad:
            raise ConfigError(f"dimensions must be positive: {', '.join(bad)}")
        if self.ge_layers < 0 or self.n_ql < 0:
            raise ConfigError("ge_layers and n_ql must be >= 0")
        if not 1 <= self.n_q <= 8:
            raise ConfigError(f"n_q must be in [1, 8], got {self.n_q}")
        if self.d_h % 2 or self.d_a % 2:
            raise ConfigError("d_h and d_a must be even for the positional encoding")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.h_a_source not in H_A_SOURCES:
            raise ConfigError(f"h_a_source must be one of {H_A_SOURCES}, got {self.h_a_source!r}")
        if self.gradient_method not in ("adjoint", "parameter-shift"):
            raise ConfigError(f"unknown gradient_method {self.gradient_method!r}")
        token_dim = self.d_at if self.h_a_source == "ge_output" else self.d_a
        if token_dim != self.d_h:
            raise ConfigError(f"token embedding dim {token_dim} must equal d_h={self.d_h} for cosine similarity")

    @classmethod
    def tiny(cls, **overrides) -> ModelConfig:
        base = dict(
            num_classes=3, d_f=6, d_h=4, d_a=4, d_at=4, M=2, N=1, n_q=2, n_ql=1, ge_layers=2, d_e_input=8
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class ModelOutput:
    frame_logits: Tensor  # L x C
    token_logits: Tensor  # M x C
    maps: AttentionMaps
    h_f: Tensor  # L x d_h
    h_a: Tensor  # M x d_h

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.frame_logits.data, axis=1)


@dataclass
class DSANet(ParamGroup):
    config: ModelConfig
    tokens: Tensor
    te_input: TEParams
    ge: GEParams
    te_blocks: list[TEParams] = field(default_factory=list)
    tc_blocks: list[TCParams] = field(default_factory=list)
    w_frame_head: Tensor | None = None
    b_frame_head: Tensor | None = None
    w_token_head: Tensor | None = None
    b_token_head: Tensor | None = None

    def forward(self, x) -> ModelOutput:
        return forward(self, x)


def init_model(cfg: ModelConfig) -> DSANet:
    rng = np.random.default_rng(cfg.seed)
    te_input = TEParams.init(rng, cfg.d_f, cfg.d_h, d_e=cfg.d_e_input)
    ge = GEParams.init(rng, cfg.d_a, cfg.d_at, cfg.ge_layers)
    d_e = cfg.expansion * cfg.d_h
    te_blocks, tc_blocks = [], []
    for _ in range(cfg.N):
        te_blocks.append(TEParams.init(rng, cfg.d_h, cfg.d_h, d_e=d_e))
        tc_blocks.append(
            TCParams.init(
                rng,
                cfg.d_h,
                cfg.d_at,
                cfg.n_q,
                cfg.n_ql,
                variant=cfg.variant,
                ring_entanglement=cfg.ring_entanglement,
                gradient_method=cfg.gradient_method,
            )
        )
    head_in = cfg.d_at if cfg.h_a_source == "ge_output" else cfg.d_a
    return DSANet(
        config=cfg,
        tokens=parameter(np.zeros((cfg.M, cfg.d_a))),
        te_input=te_input,
        ge=ge,
        te_blocks=te_blocks,
        tc_blocks=tc_blocks,
        w_frame_head=parameter(uniform_init(rng, (cfg.d_h, cfg.num_classes), cfg.d_h)),
        b_frame_head=parameter(np.zeros(cfg.num_classes)),
        w_token_head=parameter(uniform_init(rng, (head_in, cfg.num_classes), head_in)),
        b_token_head=parameter(np.zeros(cfg.num_classes)),
    )


def classify_frames(model: DSANet, x: Tensor) -> Tensor:
    return x @ model.w_frame_head + model.b_frame_head


def classify_tokens(model: DSANet, h_a: Tensor) -> Tensor:
    return h_a @ model.w_token_head + model.b_token_head


def forward(model: DSANet, x) -> ModelOutput:
    cfg = model.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != cfg.d_f:
        raise DimensionError(f"expected features of shape (L, {cfg.d_f}), got {x.shape}")
    length = x.shape[0]
    xf = te_forward(x, model.te_input) + positional_encoding(length, cfg.d_h)
    token_in = model.tokens + positional_encoding(cfg.M, cfg.d_a)
    xa = ge_forward(token_in, model.ge)
    maps = None
    for te, tc in zip(model.te_blocks, model.tc_blocks):
        xf, maps = tc_forward(te_forward(xf, te), xa, tc)
    h_a = xa if cfg.h_a_source == "ge_output" else model.tokens
    return ModelOutput(
        frame_logits=classify_frames(model, xf),
        token_logits=classify_tokens(model, h_a),
        maps=maps,
        h_f=xf,
        h_a=h_a,
    )


# checkpoint format: magic, u32 config length, UTF-8 JSON config, u32 tensor
# count, then per tensor u32 rank, rank x u64 dims, little-endian float64 data


def save_checkpoint(model: DSANet, path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read(buf: bytes, offset: int, size: int) -> bytes:
    if offset + size > len(buf):
        raise CheckpointError(f"truncated checkpoint at byte {offset}")
    return buf[offset : offset + size]


def load_checkpoint(path) -> DSANet:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic at byte 0")
    off = 4
    (cfg_len,) = struct.unpack("<I", _read(buf, off, 4))
    off += 4
    cfg = ModelConfig.from_dict(json.loads(_read(buf, off, cfg_len).decode("utf-8")))
    off += cfg_len
    model = init_model(cfg)
    params = model.parameters()
    (count,) = struct.unpack("<I", _read(buf, off, 4))
    off += 4
    if count != len(params):
        raise CheckpointError(f"checkpoint holds {count} tensors, config expects {len(params)}")
    for p in params:
        (rank,) = struct.unpack("<I", _read(buf, off, 4))
        off += 4
        shape = struct.unpack(f"<{rank}Q", _read(buf, off, 8 * rank))
        off += 8 * rank
        if tuple(shape) != p.shape:
            raise CheckpointError(f"tensor shape {shape} at byte {off} does not match expected {p.shape}")
        n = int(np.prod(shape, dtype=np.int64))
        p.data = np.frombuffer(_read(buf, off, 8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        off += 8 * n
    if off != len(buf):
        raise CheckpointError(f"trailing bytes after offset {off}")
    return model
