"""Exact statevector simulation of the modulation circuit.

The circuit on ``n_q`` qubits is

1. an embedding rotation ``RY(x_i)`` on every qubit ``i``;
2. ``n_ql`` entangling layers, each applying ``RY, RZ, RX`` (weights
   ``theta[l, i, 0:3]``) to every qubit followed by a CNOT chain
   ``0 -> 1 -> ... -> n_q - 1`` (optionally closed into a ring);
3. a Pauli-Z expectation readout per qubit.

Qubit 0 is the most significant bit of the amplitude index. Rotations use the
half-angle convention ``R_P(t) = exp(-i t P / 2)``.

Two gradient routes are provided. ``parameter-shift`` evaluates the circuit at
``t +/- pi/2`` for every angle and is the reference. ``adjoint`` walks the
gates backwards once per batch and is what training uses; the two agree to
round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .tensor import Tensor, _make

__all__ = [
    "MAX_QUBITS",
    "Gate",
    "QuantumConfig",
    "StateVector",
    "zero_state",
    "apply_gate",
    "embed_angles",
    "entangling_layers",
    "measure_z",
    "qactgm_circuit",
    "circuit_gradients",
    "batch_expectations",
    "batch_vjp",
    "quantum_layer",
]

MAX_QUBITS = 8
_SHIFT = np.pi / 2
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_ROTATION_AXIS = {"RX": "X", "RY": "Y", "RZ": "Z"}


class Gate(NamedTuple):
    name: str  # "RY", "RZ", "RX" or "CNOT"
    qubits: tuple[int, ...]
    angle: float = 0.0


@dataclass(frozen=True)
class QuantumConfig:
    n_q: int = 4
    n_ql: int = 3
    ring_entanglement: bool = False

    def __post_init__(self):
        if not 1 <= self.n_q <= MAX_QUBITS:
            raise ValueError(f"n_q must be in [1, {MAX_QUBITS}], got {self.n_q}")
        if self.n_ql < 0:
            raise ValueError(f"n_ql must be >= 0, got {self.n_ql}")

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.n_ql, self.n_q, 3)


@dataclass
class StateVector:
    n_q: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.n_q <= MAX_QUBITS:
            raise ValueError(f"n_q must be in [1, {MAX_QUBITS}], got {self.n_q}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if self.amplitudes.size != 2**self.n_q:
            raise ValueError(f"expected {2 ** self.n_q} amplitudes, got {self.amplitudes.size}")

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


def zero_state(n_q: int) -> StateVector:
    amps = np.zeros(2**n_q, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_q, amps)


# batched kernels: states have shape (B, 2**n)


def _rotation(name: str, theta) -> np.ndarray:
    t = np.asarray(theta, dtype=np.float64) / 2.0
    c, s = np.cos(t), np.sin(t)
    m = np.empty(t.shape + (2, 2), dtype=complex)
    if name == "RY":
        m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1] = c, -s, s, c
    elif name == "RZ":
        m[..., 0, 0], m[..., 1, 1] = c - 1j * s, c + 1j * s
        m[..., 0, 1] = m[..., 1, 0] = 0.0
    elif name == "RX":
        m[..., 0, 0], m[..., 1, 1] = c, c
        m[..., 0, 1] = m[..., 1, 0] = -1j * s
    else:
        raise ValueError(f"unknown rotation {name!r}")
    return m


def _apply_1q(states: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    b = states.shape[0]
    view = states.reshape(b, 2**q, 2, 2 ** (n - q - 1))
    if mat.ndim == 2:
        out = np.einsum("ij,bajc->baic", mat, view)
    else:
        out = np.einsum("bij,bajc->baic", mat, view)
    return out.reshape(b, -1)


def _apply_cnot(states: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    b = states.shape[0]
    view = states.reshape((b,) + (2,) * n)
    out = view.copy()
    sel = [slice(None)] * (n + 1)
    sel[1 + control] = 1
    sel = tuple(sel)
    axis = 1 + target if target < control else target
    out[sel] = np.flip(view[sel], axis=axis)
    return out.reshape(b, -1)


def _z_signs(n: int) -> np.ndarray:
    k = np.arange(2**n)
    bits = (k[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 1.0 - 2.0 * bits


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise IndexError(f"qubit {q} out of range for {n} qubits")


def _entangler_pairs(n: int, ring: bool) -> list[tuple[int, int]]:
    pairs = [(i, i + 1) for i in range(n - 1)]
    if ring and n > 2:
        pairs.append((n - 1, 0))
    return pairs


def _program(n: int, n_ql: int, ring: bool) -> list[tuple]:
    """Gate list; every parametrised gate carries ("x", i) or ("w", l, i, k)."""
    ops: list[tuple] = [("RY", i, ("x", i)) for i in range(n)]
    for layer in range(n_ql):
        for i in range(n):
            for k, name in enumerate(("RY", "RZ", "RX")):
                ops.append((name, i, ("w", layer, i, k)))
        for c, t in _entangler_pairs(n, ring):
            ops.append(("CNOT", (c, t), None))
    return ops


def _angles(ref, x: np.ndarray, theta: np.ndarray):
    if ref[0] == "x":
        return x[:, ref[1]]
    return theta[ref[1], ref[2], ref[3]]


def _check_inputs(x: np.ndarray, theta: np.ndarray) -> tuple[int, int]:
    if x.ndim != 2:
        raise ValueError(f"angles must be (batch, n_q), got {x.shape}")
    n = x.shape[1]
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"n_q must be in [1, {MAX_QUBITS}], got {n}")
    if theta.ndim != 3 or theta.shape[1:] != (n, 3):
        raise ValueError(f"weights must have shape (n_ql, {n}, 3), got {theta.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(theta))):
        raise ValueError("circuit angles must be finite")
    return n, theta.shape[0]


def _run(x: np.ndarray, theta: np.ndarray, ring: bool) -> tuple[np.ndarray, list[tuple], int]:
    n, n_ql = _check_inputs(x, theta)
    states = np.zeros((x.shape[0], 2**n), dtype=complex)
    states[:, 0] = 1.0
    program = _program(n, n_ql, ring)
    for name, q, ref in program:
        if name == "CNOT":
            states = _apply_cnot(states, q[0], q[1], n)
        else:
            states = _apply_1q(states, _rotation(name, _angles(ref, x, theta)), q, n)
    return states, program, n


def batch_expectations(x, theta, ring: bool = False) -> np.ndarray:
    """Pauli-Z expectations for a batch of embedding angles, shape (B, n_q)."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    states, _, n = _run(x, theta, ring)
    return (np.abs(states) ** 2) @ _z_signs(n).T


def batch_vjp(x, theta, upstream, ring: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint-method vector-Jacobian product.

    Returns ``(d/dx, d/dtheta)`` of ``sum(upstream * Z)``, where the weight
    gradient is summed over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    phi, program, n = _run(x, theta, ring)
    lam = (g @ _z_signs(n)) * phi
    gx = np.zeros_like(x)
    gw = np.zeros_like(theta)
    for name, q, ref in reversed(program):
        if name == "CNOT":
            # CNOT is self-inverse
            phi = _apply_cnot(phi, q[0], q[1], n)
            lam = _apply_cnot(lam, q[0], q[1], n)
            continue
        p_phi = _apply_1q(phi, _PAULI[_ROTATION_AXIS[name]], q, n)
        contrib = np.einsum("bk,bk->b", lam.conj(), p_phi).imag
        if ref[0] == "x":
            gx[:, ref[1]] += contrib
        else:
            gw[ref[1], ref[2], ref[3]] += contrib.sum()
        inv = _rotation(name, -np.asarray(_angles(ref, x, theta)))
        phi = _apply_1q(phi, inv, q, n)
        lam = _apply_1q(lam, inv, q, n)
    return gx, gw


def _shift_jacobian(x: np.ndarray, theta: np.ndarray, ring: bool) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift Jacobians: (B, n_q, n_q) for x and (B, n_q, *theta.shape)."""
    b, n = x.shape
    jx = np.zeros((b, n, n))
    for j in range(n):
        up, down = x.copy(), x.copy()
        up[:, j] += _SHIFT
        down[:, j] -= _SHIFT
        jx[:, :, j] = 0.5 * (batch_expectations(up, theta, ring) - batch_expectations(down, theta, ring))
    jw = np.zeros((b, n) + theta.shape)
    for idx in np.ndindex(*theta.shape):
        up, down = theta.copy(), theta.copy()
        up[idx] += _SHIFT
        down[idx] -= _SHIFT
        jw[(slice(None), slice(None)) + idx] = 0.5 * (
            batch_expectations(x, up, ring) - batch_expectations(x, down, ring)
        )
    return jx, jw


# single-register API


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    n = state.n_q
    amps = state.amplitudes[None, :]
    if gate.name == "CNOT":
        if len(gate.qubits) != 2:
            raise ValueError("CNOT needs (control, target)")
        c, t = gate.qubits
        _check_qubit(c, n)
        _check_qubit(t, n)
        if c == t:
            raise ValueError("CNOT control and target must differ")
        out = _apply_cnot(amps, c, t, n)
    elif gate.name in _ROTATION_AXIS:
        (q,) = gate.qubits
        _check_qubit(q, n)
        out = _apply_1q(amps, _rotation(gate.name, gate.angle), q, n)
    else:
        raise ValueError(f"unknown gate {gate.name!r}")
    return StateVector(n, out[0])


def embed_angles(x: Sequence[float], n_q: int | None = None) -> StateVector:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if n_q is not None and x.size != n_q:
        raise ValueError(f"expected {n_q} embedding angles, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding angles must be finite")
    state = zero_state(x.size)
    for i, angle in enumerate(x):
        state = apply_gate(state, Gate("RY", (i,), float(angle)))
    return state


def entangling_layers(state: StateVector, weights, ring: bool = False) -> StateVector:
    theta = np.asarray(weights, dtype=np.float64)
    if theta.ndim != 3 or theta.shape[1:] != (state.n_q, 3):
        raise ValueError(f"weights must have shape (n_ql, {state.n_q}, 3), got {theta.shape}")
    for layer in theta:
        for i in range(state.n_q):
            for name, angle in zip(("RY", "RZ", "RX"), layer[i]):
                state = apply_gate(state, Gate(name, (i,), float(angle)))
        for c, t in _entangler_pairs(state.n_q, ring):
            state = apply_gate(state, Gate("CNOT", (c, t)))
    return state


def measure_z(state: StateVector) -> np.ndarray:
    probs = np.abs(state.amplitudes) ** 2
    return _z_signs(state.n_q) @ probs


def qactgm_circuit(x, weights, ring: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return batch_expectations(x, weights, ring)[0]


def circuit_gradients(x, weights, ring: bool = False, method: str = "parameter-shift"):
    """Jacobians ``dZ/dx`` (n_q x n_q) and ``dZ/dtheta`` (n_q x n_ql*n_q*3)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    theta = np.asarray(weights, dtype=np.float64)
    n = x.shape[1]
    if method == "parameter-shift":
        jx, jw = _shift_jacobian(x, theta, ring)
        return jx[0], jw[0].reshape(n, -1)
    if method == "adjoint":
        _check_inputs(x, theta)
        jx = np.zeros((n, n))
        jw = np.zeros((n, theta.size))
        for i in range(n):
            sel = np.zeros((1, n))
            sel[0, i] = 1.0
            gx, gw = batch_vjp(x, theta, sel, ring)
            jx[i] = gx[0]
            jw[i] = gw.reshape(-1)
        return jx, jw
    raise ValueError(f"unknown gradient method {method!r}")


def quantum_layer(xq: Tensor, theta: Tensor, ring: bool = False, method: str = "adjoint") -> Tensor:
    """Differentiable row-wise circuit: (B, n_q) angles -> (B, n_q) expectations."""
    xd, td = xq.data, theta.data
    out = batch_expectations(xd, td, ring)

    if method == "adjoint":

        def rule(g):
            return batch_vjp(xd, td, g, ring)

    elif method == "parameter-shift":

        def rule(g):
            jx, jw = _shift_jacobian(xd, td, ring)
            gx = np.einsum("bi,bij->bj", g, jx)
            gw = np.einsum("bi,bi...->...", g, jw)
            return gx, gw

    else:
        raise ValueError(f"unknown gradient method {method!r}")
    return _make(out, (xq, theta), rule, "quantum_layer")
