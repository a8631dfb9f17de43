"""Dense statevector simulator.

Qubit 0 is the least-significant bit of the amplitude index, so basis state
``|q_{n-1} ... q_1 q_0>`` sits at index ``sum(q_k << k)``.

Kernels work on raw amplitude arrays of shape ``(..., 2**n)``; any leading
axes are treated as a batch, and rotation angles may carry the same leading
shape so that every row gets its own angle. ``StateVector``/``Gate``/``Circuit``
are the single-state interface on top of those kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 10
ORACLE_MAX_QUBITS = 8
GATE_KINDS = ("H", "RX", "RY", "RZ", "CNOT")
ROTATIONS = ("RX", "RY", "RZ")

H_MATRIX = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / np.sqrt(2.0)


def rotation_matrix(kind: str, theta) -> np.ndarray:
    """2x2 matrix of RX/RY/RZ; ``theta`` may be an array, giving shape (..., 2, 2)."""
    theta = np.asarray(theta, dtype=np.float64)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    m = np.empty(theta.shape + (2, 2), dtype=np.complex128)
    if kind == "RX":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif kind == "RY":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif kind == "RZ":
        m[..., 0, 0] = np.exp(-0.5j * theta)
        m[..., 0, 1] = 0.0
        m[..., 1, 0] = 0.0
        m[..., 1, 1] = np.exp(0.5j * theta)
    else:
        raise ValueError(f"not a rotation gate: {kind!r}")
    return m


def _check_n(n_qubits: int, limit: int = MAX_QUBITS) -> None:
    if not 1 <= n_qubits <= limit:
        raise ValueError(f"n_qubits must be in 1..{limit}, got {n_qubits}")


def _pair_view(amps: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    # (..., high, bit, low): the middle axis is the target qubit's bit
    return amps.reshape(amps.shape[:-1] + (1 << (n_qubits - qubit - 1), 2, 1 << qubit))


def apply_matrix(amps: np.ndarray, matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix to ``qubit`` in place.

    ``matrix`` is (2, 2) or (*batch, 2, 2) matching the leading axes of ``amps``.
    """
    v = _pair_view(amps, qubit, n_qubits)
    m = np.asarray(matrix)
    if m.ndim > 2:
        m = m[..., None, None, :, :]
    m00, m01, m10, m11 = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    a0 = v[..., 0, :].copy()
    a1 = v[..., 1, :]
    v[..., 0, :] = m00 * a0 + m01 * a1
    v[..., 1, :] = m10 * a0 + m11 * a1
    return amps


def apply_cnot(amps: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    """Flip ``target`` on the half of the register where ``control`` is 1, in place."""
    t = amps.reshape(amps.shape[:-1] + (2,) * n_qubits)
    ca = t.ndim - 1 - control
    ta = t.ndim - 1 - target
    lo = [slice(None)] * t.ndim
    hi = [slice(None)] * t.ndim
    lo[ca] = hi[ca] = 1
    lo[ta], hi[ta] = 0, 1
    lo, hi = tuple(lo), tuple(hi)
    tmp = t[lo].copy()
    t[lo] = t[hi]
    t[hi] = tmp
    return amps


def z_expectations(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """<Z_q> for every qubit; returns shape (..., n_qubits)."""
    probs = amps.real ** 2 + amps.imag ** 2
    out = np.empty(amps.shape[:-1] + (n_qubits,), dtype=np.float64)
    for q in range(n_qubits):
        v = _pair_view(probs, q, n_qubits)
        out[..., q] = v[..., 0, :].sum(axis=(-2, -1)) - v[..., 1, :].sum(axis=(-2, -1))
    return out


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_n(self.n_qubits)
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValueError(
                f"expected {1 << self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if (self.kind == "CNOT") != (self.control is not None):
            raise ValueError("control is required for CNOT and only for CNOT")
        if self.control is not None and self.control == self.target:
            raise ValueError("control and target must differ")
        if (self.kind in ROTATIONS) != (self.angle is not None):
            raise ValueError("angle is required for rotation gates and only for them")
        if self.target < 0 or (self.control is not None and self.control < 0):
            raise IndexError("qubit indices must be non-negative")

    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def matrix(self) -> np.ndarray:
        """2x2 matrix on the target (CNOT: the 4x4 matrix on (control, target))."""
        if self.kind == "H":
            return H_MATRIX
        if self.kind == "CNOT":
            # basis order |control target>: 00, 01, 10, 11
            return np.array(
                [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
            )
        return rotation_matrix(self.kind, self.angle)


def H(q: int) -> Gate:
    return Gate("H", q)


def RX(q: int, angle: float) -> Gate:
    return Gate("RX", q, angle=float(angle))


def RY(q: int, angle: float) -> Gate:
    return Gate("RY", q, angle=float(angle))


def RZ(q: int, angle: float) -> Gate:
    return Gate("RZ", q, angle=float(angle))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", target, control=control)


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        _check_n(self.n_qubits)
        for g in self.gates:
            self._check_gate(g)

    def _check_gate(self, gate: Gate) -> None:
        for q in gate.qubits():
            if q >= self.n_qubits:
                raise IndexError(f"qubit {q} out of range for {self.n_qubits} qubits")

    def add(self, gate: Gate) -> "Circuit":
        self._check_gate(gate)
        self.gates.append(gate)
        return self


def new_state(n_qubits: int) -> StateVector:
    _check_n(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Apply ``gate`` to ``state`` in place and return it."""
    n = state.n_qubits
    for q in gate.qubits():
        if q >= n:
            raise IndexError(f"qubit {q} out of range for {n} qubits")
    if gate.kind == "CNOT":
        apply_cnot(state.amplitudes, gate.control, gate.target, n)
    else:
        apply_matrix(state.amplitudes, gate.matrix(), gate.target, n)
    return state


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    probs = np.abs(state.amplitudes) ** 2
    v = _pair_view(probs, qubit, state.n_qubits)
    return float(v[:, 0, :].sum() - v[:, 1, :].sum())


def run_circuit(circuit: Circuit, initial: StateVector | None = None) -> StateVector:
    """Run ``circuit`` on a copy of ``initial`` (default ``|0...0>``)."""
    state = new_state(circuit.n_qubits) if initial is None else initial.copy()
    if state.n_qubits != circuit.n_qubits:
        raise ValueError(
            f"circuit has {circuit.n_qubits} qubits but state has {state.n_qubits}"
        )
    for g in circuit.gates:
        apply_gate(state, g)
    return state


def _embed(gate: Gate, n_qubits: int) -> np.ndarray:
    dim = 1 << n_qubits
    if gate.kind == "CNOT":
        full = np.zeros((dim, dim), dtype=np.complex128)
        for k in range(dim):
            j = k ^ (1 << gate.target) if (k >> gate.control) & 1 else k
            full[j, k] = 1.0
        return full
    # qubit q is bit q, i.e. kron(I_high, U, I_low)
    high = np.eye(1 << (n_qubits - gate.target - 1))
    low = np.eye(1 << gate.target)
    return np.kron(np.kron(high, gate.matrix()), low)


def circuit_unitary_oracle(circuit: Circuit) -> np.ndarray:
    """Full 2**n x 2**n unitary by multiplying Kronecker-embedded gate matrices.

    Slow and independent of the in-place kernels; meant for verification.
    """
    _check_n(circuit.n_qubits, ORACLE_MAX_QUBITS)
    u = np.eye(1 << circuit.n_qubits, dtype=np.complex128)
    for g in circuit.gates:
        u = _embed(g, circuit.n_qubits) @ u
    return u
