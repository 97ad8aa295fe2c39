"""Training objective: frame and token cross-entropy plus the three
dual-stream alignment terms (relational, contrastive, cycle)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

EPS = 1e-8


@dataclass(frozen=True)
class LossConfig:
    """Which terms enter the total, and the contrastive settings.

    The five switches correspond to ablation columns A-E: frame CE, token CE,
    relational, contrastive, cycle.

    The contrastive defaults differ from the bare formula. Each token's
    attention weights are normalised to sum to 1, treated as constants, and
    the per-token losses are averaged. Unscaled, the term grows like
    L log L and swamps every other loss; with live weights the network
    lowers it by reshaping attention instead of the embeddings. ``literal()``
    restores the bare sum.
    """

    use_ce_f: bool = True
    use_ce_a: bool = True
    use_rel: bool = True
    use_clc: bool = True
    use_cyc: bool = True
    tau: float = 0.1
    clc_renormalize: bool = True
    clc_detach_weights: bool = True
    clc_mean: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def ablation(cls, row: str, **kw) -> LossConfig:
        """Cumulative ablation row, e.g. ``"AB"`` keeps both cross-entropies only."""
        row = row.upper()
        if not row or any(c not in "ABCDE" for c in row):
            raise ValueError(f"ablation row must use letters A-E, got {row!r}")
        flags = dict(zip(("use_ce_f", "use_ce_a", "use_rel", "use_clc", "use_cyc"), (c in row for c in "ABCDE")))
        return cls(**flags, **kw)

    @classmethod
    def literal(cls, **kw) -> LossConfig:
        """Contrastive term exactly as the bare weighted InfoNCE sum."""
        return cls(clc_renormalize=False, clc_detach_weights=False, clc_mean=False, **kw)


@dataclass
class LossBreakdown:
    ce_f: Tensor
    ce_a: Tensor
    rel: Tensor
    clc: Tensor
    cyc_f: Tensor
    cyc_a: Tensor
    total: Tensor

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("ce_f", "ce_a", "rel", "clc", "cyc_f", "cyc_a", "total")}


def block_bounds(length: int, blocks: int) -> np.ndarray:
    """Block ``b`` covers frames ``[ceil(bL/M), ceil((b+1)L/M))``; longer blocks come first."""
    if blocks > length:
        raise DimensionError(f"cannot split {length} frames into {blocks} blocks")
    if blocks < 1:
        raise DimensionError("need at least one block")
    return -((-np.arange(blocks + 1) * length) // blocks)


def block_pool_matrix(length: int, blocks: int) -> np.ndarray:
    bounds = block_bounds(length, blocks)
    pool = np.zeros((blocks, length))
    for b in range(blocks):
        lo, hi = bounds[b], bounds[b + 1]
        pool[b, lo:hi] = 1.0 / (hi - lo)
    return pool


def token_pseudo_labels(y_f, M: int) -> np.ndarray:
    """Majority frame label of each contiguous block; ties go to the label seen first."""
    y = np.asarray(y_f, dtype=np.int64)
    bounds = block_bounds(len(y), M)
    out = np.empty(M, dtype=np.int64)
    for b in range(M):
        block = y[bounds[b] : bounds[b + 1]]
        labels, first, counts = np.unique(block, return_index=True, return_counts=True)
        best = counts.max()
        out[b] = block[min(first[counts == best])]
    return out


def _frobenius_normalize(g: Tensor) -> Tensor:
    return g / (T.sqrt(T.sum(g * g)) + EPS)


def relational_consistency(h_f: Tensor, h_a: Tensor) -> Tensor:
    L, M = h_f.shape[0], h_a.shape[0]
    pool = Tensor(block_pool_matrix(L, M))
    g_f = h_f @ h_f.T
    g_f_pooled = pool @ g_f @ pool.T
    g_a = h_a @ h_a.T
    diff = _frobenius_normalize(g_f_pooled) - _frobenius_normalize(g_a)
    return T.sum(diff * diff)


def _normalize_rows(x: Tensor) -> Tensor:
    norms = T.sqrt(T.sum(x * x, axis=1)) + EPS
    return T.scale_rows(x, T.power(norms, -1.0))


def cross_level_contrastive(
    h_a: Tensor,
    h_f: Tensor,
    A: Tensor,
    tau: float = 0.1,
    renormalize: bool = False,
    detach_weights: bool = False,
    mean: bool = False,
) -> Tensor:
    """Attention-weighted InfoNCE of every token against all frames.

    ``A`` is the frame-major L x M attention; its transpose supplies the soft
    positive weights of each token.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    weights = Tensor(A.data.T) if detach_weights else A.T
    if renormalize:
        weights = T.scale_rows(weights, T.power(T.sum(weights, axis=1) + EPS, -1.0))
    sim = _normalize_rows(h_a) @ _normalize_rows(h_f).T
    log_p = T.log_softmax_rows(sim * (1.0 / tau))
    loss = -T.sum(weights * log_p)
    return loss * (1.0 / h_a.shape[0]) if mean else loss


def _check_labels(y, rows: int, classes: int, what: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (rows,):
        raise DimensionError(f"{what}: {y.shape[0] if y.ndim else 0} labels for {rows} rows")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"{what}: labels must lie in [0, {classes})")
    return y


def softmax_cross_entropy(logits: Tensor, y) -> Tensor:
    y = _check_labels(y, logits.shape[0], logits.shape[1], "cross-entropy")
    return -T.mean(T.pick(T.log_softmax_rows(logits), y))


def cross_entropy_frames(P_f: Tensor, y_f) -> Tensor:
    return softmax_cross_entropy(P_f, y_f)


def cross_entropy_tokens(P_a: Tensor, y_a) -> Tensor:
    return softmax_cross_entropy(P_a, y_a)


def cycle_consistency(P_a: Tensor, P_f: Tensor, A: Tensor, rho: Tensor, y_f, y_a) -> tuple[Tensor, Tensor]:
    if A.shape != (P_f.shape[0], P_a.shape[0]) or rho.shape != (P_a.shape[0], P_f.shape[0]):
        raise DimensionError(f"attention shapes {A.shape}, {rho.shape} do not match logits {P_f.shape}, {P_a.shape}")
    frames_from_tokens = A @ P_a
    tokens_from_frames = rho @ P_f
    return softmax_cross_entropy(frames_from_tokens, y_f), softmax_cross_entropy(tokens_from_frames, y_a)


def combine(*terms) -> Tensor:
    """Unweighted sum of loss terms; plain numbers are accepted."""
    total = Tensor(0.0)
    for term in terms:
        total = total + (term if isinstance(term, Tensor) else Tensor(float(term)))
    return total


def total_loss(out, y_f, cfg: LossConfig | None = None, y_a=None) -> LossBreakdown:
    cfg = cfg or LossConfig()
    M = out.token_logits.shape[0]
    if y_a is None:
        y_a = token_pseudo_labels(y_f, M)
    ce_f = cross_entropy_frames(out.frame_logits, y_f)
    ce_a = cross_entropy_tokens(out.token_logits, y_a)
    rel = relational_consistency(out.h_f, out.h_a)
    clc = cross_level_contrastive(out.h_a, out.h_f, out.maps.A, cfg.tau, cfg.clc_renormalize, cfg.clc_detach_weights, cfg.clc_mean)
    cyc_f, cyc_a = cycle_consistency(out.token_logits, out.frame_logits, out.maps.A, out.maps.rho, y_f, y_a)
    terms = [
        (cfg.use_ce_f, ce_f),
        (cfg.use_ce_a, ce_a),
        (cfg.use_rel, rel),
        (cfg.use_clc, clc),
        (cfg.use_cyc, cyc_f + cyc_a),
    ]
    total = combine(*(term for enabled, term in terms if enabled))
    return LossBreakdown(ce_f=ce_f, ce_a=ce_a, rel=rel, clc=clc, cyc_f=cyc_f, cyc_a=cyc_a, total=total)
