"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
backward rule. Calling :func:`backward` on a scalar walks the recorded graph in
reverse topological order and writes ``.grad`` on every reachable tensor that
requires gradients. Gradients are recomputed from scratch on each call, so two
calls on the same graph give bit-identical results.

Broadcasting is deliberately narrow: elementwise operations need equal shapes,
except that a 0-d operand acts as a scalar and a 1-d ``(n,)`` operand may be
added to an ``(m, n)`` matrix as a row bias.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "DimensionError",
    "NumericalError",
    "tensor",
    "parameter",
    "uniform_init",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "matmul_sorted",
    "transpose",
    "activation",
    "exp",
    "log",
    "sqrt",
    "power",
    "softmax_rows",
    "log_softmax_rows",
    "sum",
    "mean",
    "scale_rows",
    "pick",
    "concat",
    "shift_rows",
    "reshape",
    "backward",
    "grad_check",
    "Tape",
]

ACTIVATIONS = ("tanh", "gelu", "sigmoid", "relu")
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericalError(FloatingPointError):
    """A non-finite value was produced or supplied."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _index(self, index)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], rule, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _shape_error(op: str, a: Tensor, b: Tensor) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # row bias (n,) against (m, n)
    return g.sum(axis=0)


def _check_elementwise(op: str, a: Tensor, b: Tensor, allow_bias: bool) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if allow_bias and a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if allow_bias and b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise _shape_error(op, a, b)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b, allow_bias=True)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b, allow_bias=True)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _reduce_to(g, sa), _reduce_to(-g, sb)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b, allow_bias=False)
    ad, bd = a.data, b.data

    def rule(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _make(ad * bd, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("div", a, b, allow_bias=False)
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        return _reduce_to(g / bd, ad.shape), _reduce_to(-g * out / bd, bd.shape)

    return _make(out, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    ad, bd = a.data, b.data

    def rule(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), rule, "matmul")


def matmul_sorted(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product whose inner sums run over sorted terms.

    The forward value is then independent of the order of the inner index, so
    permuting columns of ``a`` together with rows of ``b`` is bit-exact.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul_sorted", a, b)
    ad, bd = a.data, b.data
    terms = ad[:, :, None] * bd[None, :, :]
    out = np.sort(terms, axis=1).sum(axis=1)

    def rule(g):
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), rule, "matmul_sorted")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return x * cdf, cdf + x * pdf


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    if kind == "tanh":
        out = np.tanh(xd)
        deriv = 1.0 - out * out
    elif kind == "sigmoid":
        out = _sigmoid(xd)
        deriv = out * (1.0 - out)
    elif kind == "gelu":
        out, deriv = _gelu(xd)
    elif kind == "relu":
        out = np.maximum(xd, 0.0)
        deriv = (xd > 0).astype(np.float64)
    else:
        raise ValueError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")
    return _make(out, (x,), lambda g: (g * deriv,), kind)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericalError("log of non-positive value")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NumericalError("sqrt of negative value")
    out = np.sqrt(x.data)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _make(out, (x,), rule, "sqrt")


def power(x: Tensor, p: float) -> Tensor:
    xd = x.data
    return _make(xd**p, (x,), lambda g: (g * p * xd ** (p - 1),), "power")


def _check_matrix(op: str, x: Tensor) -> None:
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"{op}: expected an m x n matrix with n >= 1, got {x.shape}")


def softmax_rows(x: Tensor) -> Tensor:
    _check_matrix("softmax_rows", x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    # sorted denominator: bit-exact equivariance under column permutations
    out = e / np.sort(e, axis=1).sum(axis=1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), rule, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    _check_matrix("log_softmax_rows", x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def rule(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _make(out, (x,), rule, "log_softmax_rows")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), rule, "sum")


def mean(x: Tensor) -> Tensor:
    return sum(x) * (1.0 / x.size)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row ``i`` of an ``(m, n)`` matrix by ``s[i]``."""
    if x.ndim != 2 or s.shape != (x.shape[0],):
        raise _shape_error("scale_rows", x, s)
    xd, sd = x.data, s.data

    def rule(g):
        return g * sd[:, None], (g * xd).sum(axis=1)

    return _make(xd * sd[:, None], (x, s), rule, "scale_rows")


def pick(x: Tensor, index: Sequence[int]) -> Tensor:
    """Entry ``x[i, index[i]]`` of every row, as a vector."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"pick: {len(idx)} indices for matrix of shape {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError(f"pick: index out of range [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _make(x.data[rows, idx], (x,), rule, "pick")


def _index(x: Tensor, index) -> Tensor:
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), rule, "index")


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def rule(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts)))

    return _make(out, parts, rule, "concat")


def shift_rows(x: Tensor, offset: int) -> Tensor:
    """``out[t] = x[t + offset]`` with zero rows where that index is outside ``x``."""
    if x.ndim != 2:
        raise DimensionError(f"shift_rows: expected a matrix, got {x.shape}")
    n = x.shape[0]

    def shifted(a: np.ndarray, k: int) -> np.ndarray:
        out = np.zeros_like(a)
        if k >= 0 and k < n:
            out[: n - k] = a[k:]
        elif k < 0 and -k < n:
            out[-k:] = a[: n + k]
        return out

    return _make(shifted(x.data, offset), (x,), lambda g: (shifted(g, -offset),), "shift_rows")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


class Tape:
    """Operations reachable from an output, in topological order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def backward(self) -> None:
        root = self.output
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            if node.requires_grad:
                node.grad = g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    Tape(loss).backward()


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar objective from the current values of
    ``params``. Entries are compared as ``|a - fd| / max(1, |a|, |fd|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def probe(k: int, label: str) -> float:
        try:
            value = f().item()
        except NumericalError as exc:
            raise NumericalError(f"objective non-finite while probing {label}") from exc
        if not math.isfinite(value):
            raise NumericalError(f"objective non-finite while probing {label}")
        return value

    worst = 0.0
    for k, p in enumerate(params):
        label = p.name or f"param[{k}]"
        base = p.data
        flat = base.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + step
            p.data = bumped.reshape(base.shape)
            up = probe(k, f"{label}[{i}]")
            bumped[i] = flat[i] - step
            p.data = bumped.reshape(base.shape)
            down = probe(k, f"{label}[{i}]")
            p.data = base
            fd = (up - down) / (2.0 * step)
            a = analytic[k].reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
    return worst
