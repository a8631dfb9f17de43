"""Trainable variational circuit: per-layer RX/RY/RZ on every qubit, then a CNOT
entangler, read out as per-qubit <Z>.

Gradients use the two-term parameter-shift rule, which is exact here because
every trainable gate (and every RY encoding gate) is a Pauli rotation:
``dz/dp = (z(p + pi/2) - z(p - pi/2)) / 2``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import qsim
from .encoding import encode_batch, encoding_circuit
from .rng import Rng

ENTANGLERS = ("linear", "ring", "none")
ROT_KINDS = ("RX", "RY", "RZ")
SHIFT = math.pi / 2
INIT_SPREAD = 0.01


@dataclass
class CircuitParams:
    """Rotation angles indexed ``[layer, qubit, (alpha, beta, gamma)]``."""

    angles: np.ndarray
    entangler: str = "linear"

    def __post_init__(self):
        self.angles = np.array(self.angles, dtype=np.float64)
        if self.angles.ndim != 3 or self.angles.shape[2] != 3:
            raise ValueError(f"angles must have shape (layers, qubits, 3), got {self.angles.shape}")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("angles must be finite")
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"entangler must be one of {ENTANGLERS}")
        if self.angles.shape[1] < 1:
            raise ValueError("need at least one qubit")

    @property
    def n_layers(self) -> int:
        return self.angles.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.angles.shape[1]

    @property
    def n_params(self) -> int:
        return self.angles.size

    @classmethod
    def zeros(cls, n_qubits: int, n_layers: int, entangler: str = "linear") -> "CircuitParams":
        return cls(np.zeros((n_layers, n_qubits, 3)), entangler)

    @classmethod
    def random(cls, n_qubits: int, n_layers: int, rng: Rng, spread: float = INIT_SPREAD,
               entangler: str = "linear") -> "CircuitParams":
        return cls(rng.normal_array((n_layers, n_qubits, 3), std=spread), entangler)

    def with_flat(self, flat) -> "CircuitParams":
        return CircuitParams(np.asarray(flat, dtype=np.float64).reshape(self.angles.shape), self.entangler)


def entangler_pairs(n_qubits: int, entangler: str) -> list[tuple[int, int]]:
    if entangler == "none" or n_qubits < 2:
        return []
    pairs = [(q, q + 1) for q in range(n_qubits - 1)]
    if entangler == "ring" and n_qubits > 2:
        pairs.append((n_qubits - 1, 0))
    return pairs


def schedule(n_qubits: int, n_layers: int, entangler: str = "linear"):
    """Ordered ops: ``("rot", kind, qubit, flat_index)`` or ``("cnot", control, target)``."""
    ops = []
    pairs = entangler_pairs(n_qubits, entangler)
    for layer in range(n_layers):
        for q in range(n_qubits):
            for k, kind in enumerate(ROT_KINDS):
                ops.append(("rot", kind, q, (layer * n_qubits + q) * 3 + k))
        for c, t in pairs:
            ops.append(("cnot", c, t))
    return ops


def vqc_circuit(params: CircuitParams) -> qsim.Circuit:
    flat = params.angles.ravel()
    gates = []
    for op in schedule(params.n_qubits, params.n_layers, params.entangler):
        if op[0] == "rot":
            gates.append(qsim.Gate(op[1], op[2], angle=float(flat[op[3]])))
        else:
            gates.append(qsim.CNOT(op[1], op[2]))
    return qsim.Circuit(params.n_qubits, gates)


def vqc_forward(input_state: qsim.StateVector, params: CircuitParams) -> qsim.StateVector:
    if input_state.n_qubits != params.n_qubits:
        raise ValueError(
            f"state has {input_state.n_qubits} qubits, circuit has {params.n_qubits}"
        )
    return qsim.run_circuit(vqc_circuit(params), input_state)


def measure(state: qsim.StateVector) -> np.ndarray:
    return np.array([qsim.expectation_z(state, q) for q in range(state.n_qubits)])


def full_circuit(angles_in, params: CircuitParams) -> qsim.Circuit:
    """Encoding followed by the variational layers, as one gate list."""
    enc = encoding_circuit(angles_in, params.n_qubits)
    return qsim.Circuit(params.n_qubits, enc.gates + vqc_circuit(params).gates)


def expectations_batch(angles_in: np.ndarray, flat_params: np.ndarray, n_qubits: int,
                       n_layers: int, entangler: str = "linear") -> np.ndarray:
    """Encode + circuit + readout for many rows at once.

    ``angles_in`` is (R, n); ``flat_params`` is (P,) shared or (R, P) per row.
    """
    amps = encode_batch(angles_in)
    flat_params = np.asarray(flat_params, dtype=np.float64)
    for op in schedule(n_qubits, n_layers, entangler):
        if op[0] == "rot":
            theta = flat_params[..., op[3]]
            qsim.apply_matrix(amps, qsim.rotation_matrix(op[1], theta), op[2], n_qubits)
        else:
            qsim.apply_cnot(amps, op[1], op[2], n_qubits)
    return qsim.z_expectations(amps, n_qubits)


def _jacobians_chunk(angles_in, params, wrt_params, wrt_inputs):
    b, n = angles_in.shape
    p = params.n_params
    flat = params.angles.ravel()
    n_param_rows = 2 * p if wrt_params else 0
    k = 1 + n_param_rows + (2 * n if wrt_inputs else 0)
    theta = np.repeat(angles_in[:, None, :], k, axis=1)
    prm = np.repeat(flat[None, None, :], b, axis=0).repeat(k, axis=1)
    if wrt_params:
        j = np.arange(p)
        prm[:, 1 + 2 * j, j] += SHIFT
        prm[:, 2 + 2 * j, j] -= SHIFT
    if wrt_inputs:
        i = np.arange(n)
        theta[:, 1 + n_param_rows + 2 * i, i] += SHIFT
        theta[:, 2 + n_param_rows + 2 * i, i] -= SHIFT
    z_all = expectations_batch(
        theta.reshape(b * k, n), prm.reshape(b * k, p), n, params.n_layers, params.entangler
    ).reshape(b, k, n)
    z = z_all[:, 0, :]
    dzdp = dzdx = None
    if wrt_params:
        plus = z_all[:, 1:1 + n_param_rows:2, :]
        minus = z_all[:, 2:2 + n_param_rows:2, :]
        dzdp = np.transpose((plus - minus) / 2.0, (0, 2, 1))
    if wrt_inputs:
        plus = z_all[:, 1 + n_param_rows::2, :]
        minus = z_all[:, 2 + n_param_rows::2, :]
        dzdx = np.transpose((plus - minus) / 2.0, (0, 2, 1))
    return z, dzdp, dzdx, b * k


def circuit_jacobians(angles_in, params: CircuitParams, wrt_params: bool = True,
                      wrt_inputs: bool = True, threads: int = 1):
    """Batched readout and parameter-shift Jacobians.

    Returns ``(z, dz_dparams, dz_dangles, n_circuit_evals)`` with shapes (B, n),
    (B, n, P), (B, n, n). Unrequested Jacobians are ``None``. Rows are split
    into per-thread chunks and reassembled in sample order, so results do not
    depend on ``threads``.
    """
    angles_in = np.atleast_2d(np.asarray(angles_in, dtype=np.float64))
    if angles_in.shape[1] != params.n_qubits:
        raise ValueError(
            f"expected {params.n_qubits} input angles, got {angles_in.shape[1]}"
        )
    b = angles_in.shape[0]
    if threads <= 1 or b < 2:
        return _jacobians_chunk(angles_in, params, wrt_params, wrt_inputs)
    chunks = np.array_split(np.arange(b), min(threads, b))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(
            lambda idx: _jacobians_chunk(angles_in[idx], params, wrt_params, wrt_inputs), chunks
        ))
    z = np.concatenate([pt[0] for pt in parts])
    dzdp = np.concatenate([pt[1] for pt in parts]) if wrt_params else None
    dzdx = np.concatenate([pt[2] for pt in parts]) if wrt_inputs else None
    return z, dzdp, dzdx, sum(pt[3] for pt in parts)


def jacobian_param_shift(angles_in, params: CircuitParams) -> np.ndarray:
    """dz/dp for one input, shape (n_qubits, n_params)."""
    _, dzdp, _, _ = circuit_jacobians(np.asarray(angles_in)[None, :], params, True, False)
    return dzdp[0]


def jacobian_wrt_inputs(angles_in, params: CircuitParams) -> np.ndarray:
    """dz/d(angle) for one input, shape (n_qubits, n_qubits)."""
    _, _, dzdx, _ = circuit_jacobians(np.asarray(angles_in)[None, :], params, False, True)
    return dzdx[0]


def finite_diff_gradient(f: Callable[[np.ndarray], float], p, eps: float = 1e-6,
                         central: bool = False) -> np.ndarray:
    """Forward difference ``(f(p + eps e_i) - f(p)) / eps``; ``central`` uses
    ``(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)``. Works for vector-valued f."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    p = np.array(p, dtype=np.float64)
    flat = p.ravel()
    base = None if central else np.asarray(f(p), dtype=np.float64)
    cols = []
    for i in range(flat.size):
        up = flat.copy()
        up[i] += eps
        f_up = np.asarray(f(up.reshape(p.shape)), dtype=np.float64)
        if central:
            dn = flat.copy()
            dn[i] -= eps
            f_dn = np.asarray(f(dn.reshape(p.shape)), dtype=np.float64)
            cols.append((f_up - f_dn) / (2 * eps))
        else:
            cols.append((f_up - base) / eps)
    out = np.stack(cols, axis=-1)
    return out.reshape(out.shape[:-1] + p.shape) if out.ndim > 1 else out.reshape(p.shape)
