"""Ready-made experiment declarations."""
from __future__ import annotations

import numpy as np

from .errors import Experiment, GateSet
from .linalg import PAULIS

__all__ = ["CNOT", "rotation", "two_qubit_gate_set", "two_qubit_experiment", "single_qubit_paulis"]

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
    dtype=complex,
)


def rotation(axis: int, angle: float = np.pi / 2) -> np.ndarray:
    """Single-qubit rotation ``exp(-i angle/2 sigma_axis)`` (axis 1, 2, 3 = x, y, z)."""
    return np.cos(angle / 2) * PAULIS[0] - 1j * np.sin(angle / 2) * PAULIS[axis]


def two_qubit_gate_set(signs=(1, 1, 1, 1)) -> GateSet:
    """CNOT (control on qubit 1) plus x/y quarter-turns on each qubit.

    Labels are ``g1`` (CNOT), ``g2``/``g3`` (x/y on qubit 1), ``g4``/``g5``
    (x/y on qubit 2) and ``id`` for the padding identity.  ``signs`` flips
    the rotation sense of g2..g5, which is only needed when reconciling
    against tables written in another convention.
    """
    I2 = np.eye(2)
    gates = [
        CNOT,
        np.kron(rotation(1, signs[0] * np.pi / 2), I2),
        np.kron(rotation(2, signs[1] * np.pi / 2), I2),
        np.kron(I2, rotation(1, signs[2] * np.pi / 2)),
        np.kron(I2, rotation(2, signs[3] * np.pi / 2)),
        np.eye(4),
    ]
    return GateSet(np.array(gates), ("g1", "g2", "g3", "g4", "g5", "id"), identity_index=5)


def two_qubit_experiment(max_length: int = 4, signs=(1, 1, 1, 1)) -> Experiment:
    """Gate set above, initial state ``|00>``, readout of Z on either qubit."""
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1
    Z, I2 = PAULIS[3], PAULIS[0]
    return Experiment(
        two_qubit_gate_set(signs),
        (rho,),
        (np.kron(Z, I2), np.kron(I2, Z)),
        max_length=max_length,
        state_labels=("00",),
        measurement_labels=("M1", "M2"),
    )


def single_qubit_paulis(n_qubits: int, qubit: int) -> list[int]:
    """Pauli indices acting non-trivially on ``qubit`` (0-based) only."""
    shift = 4 ** (n_qubits - 1 - qubit)
    return [a * shift for a in (1, 2, 3)]
