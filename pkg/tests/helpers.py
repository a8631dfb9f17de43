import math

import numpy as np

from qtl import qsim
from qtl.rng import Rng


def random_circuit(rng: Rng, n_qubits: int, depth: int) -> qsim.Circuit:
    """``depth`` layers, each a random gate on every qubit plus one CNOT."""
    gates = []
    for _ in range(depth):
        for q in range(n_qubits):
            kind = ("H", "RX", "RY", "RZ")[rng.below(4)]
            if kind == "H":
                gates.append(qsim.H(q))
            else:
                gates.append(qsim.Gate(kind, q, angle=rng.uniform() * 4 * math.pi - 2 * math.pi))
        if n_qubits > 1:
            c = rng.below(n_qubits)
            t = (c + 1 + rng.below(n_qubits - 1)) % n_qubits
            gates.append(qsim.CNOT(c, t))
    return qsim.Circuit(n_qubits, gates)


def random_state(rng: Rng, n_qubits: int) -> qsim.StateVector:
    amps = rng.normal_array((1 << n_qubits,)) + 1j * rng.normal_array((1 << n_qubits,))
    return qsim.StateVector(n_qubits, amps / np.linalg.norm(amps))


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
