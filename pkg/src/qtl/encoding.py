"""Angle encoding: Hadamard on every qubit, then one RY data rotation per qubit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import qsim


@dataclass(frozen=True)
class EncodingSpec:
    """How reducer outputs become rotation angles.

    With ``use_tanh`` the angle is ``angle_scale * tanh(u)``; without it the
    angle is ``angle_scale * u`` (``angle_scale=pi`` gives the literal
    ``pi * theta`` scaling).
    """

    n_features: int
    angle_scale: float = math.pi / 2
    use_tanh: bool = True

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not self.angle_scale > 0:
            raise ValueError("angle_scale must be positive")


def squash(u, angle_scale: float = math.pi / 2) -> np.ndarray:
    return angle_scale * np.tanh(np.asarray(u, dtype=np.float64))


def angles_from(u, spec: EncodingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Angles and their elementwise derivative d(angle)/du."""
    u = np.asarray(u, dtype=np.float64)
    if spec.use_tanh:
        t = np.tanh(u)
        return spec.angle_scale * t, spec.angle_scale * (1.0 - t * t)
    return spec.angle_scale * u, np.full_like(u, spec.angle_scale)


def encode_batch(angles: np.ndarray) -> np.ndarray:
    """Amplitudes of shape (batch, 2**n) for angle rows of shape (batch, n)."""
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.shape[-1]
    amps = np.zeros(angles.shape[:-1] + (1 << n,), dtype=np.complex128)
    amps[..., 0] = 1.0
    for q in range(n):
        qsim.apply_matrix(amps, qsim.H_MATRIX, q, n)
    for q in range(n):
        qsim.apply_matrix(amps, qsim.rotation_matrix("RY", angles[..., q]), q, n)
    return amps


def encoding_circuit(angles, n_qubits: int) -> qsim.Circuit:
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (n_qubits,):
        raise ValueError(f"expected {n_qubits} angles, got shape {angles.shape}")
    gates = [qsim.H(q) for q in range(n_qubits)]
    gates += [qsim.RY(q, angles[q]) for q in range(n_qubits)]
    return qsim.Circuit(n_qubits, gates)


def encode(angles, n_qubits: int) -> qsim.StateVector:
    return qsim.run_circuit(encoding_circuit(angles, n_qubits))
