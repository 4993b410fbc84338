"""Dense complex linear algebra used throughout the package.

Pauli bases, Hermitian matrix exponentials, gate fidelity and leakage
metrics, and the pivoted QR used for sequence selection.  Matrices are
plain ``numpy`` arrays; nothing here holds state.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

__all__ = [
    "PAULIS",
    "PauliBasis",
    "pauli_basis",
    "pauli_label",
    "is_unitary",
    "is_hermitian",
    "expm_hermitian",
    "avg_gate_fidelity",
    "leakage",
    "pivoted_qr",
    "numerical_rank",
    "condition_number",
]

MAX_QUBITS = 4

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


@dataclass(frozen=True)
class PauliBasis:
    """Tensor-product Pauli basis on ``n_qubits`` qubits.

    ``elements[k]`` is the product of single-qubit Paulis given by the
    base-4 digits of ``k`` with qubit 1 as the most significant digit, so
    for two qubits ``k = 4 * i + j`` labels ``P_i (x) P_j``.
    """

    n_qubits: int
    elements: np.ndarray

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, k):
        return self.elements[k]

    def label(self, k: int) -> str:
        return pauli_label(k, self.n_qubits)


def pauli_label(k: int, n_qubits: int) -> str:
    """Digit string of Pauli index ``k``, e.g. ``7 -> "13"`` for two qubits."""
    digits = []
    for _ in range(n_qubits):
        k, r = divmod(k, 4)
        digits.append(str(r))
    return "".join(reversed(digits))


@lru_cache(maxsize=None)
def _pauli_elements(n_qubits: int) -> np.ndarray:
    elements = PAULIS
    for _ in range(n_qubits - 1):
        elements = np.einsum("aij,bkl->abikjl", elements, PAULIS).reshape(
            len(elements) * 4, elements.shape[1] * 2, elements.shape[2] * 2
        )
    elements = np.ascontiguousarray(elements)
    elements.setflags(write=False)
    return elements


def pauli_basis(n_qubits: int) -> PauliBasis:
    if n_qubits < 1:
        raise ValueError("n_qubits must be at least 1")
    if n_qubits > MAX_QUBITS:
        raise ValueError(f"at most {MAX_QUBITS} qubits are supported, got {n_qubits}")
    return PauliBasis(n_qubits, _pauli_elements(n_qubits))


def is_unitary(U: np.ndarray, tol: float = 1e-10) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(len(U)))) <= tol)


def is_hermitian(H: np.ndarray, tol: float = 1e-10) -> bool:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        return False
    return bool(np.max(np.abs(H - H.conj().T), initial=0.0) <= tol)


def expm_hermitian(H: np.ndarray, t: float | np.ndarray = 1.0) -> np.ndarray:
    """Return ``exp(-1j * H * t)`` for Hermitian ``H``.

    ``H`` may be a stack of matrices with shape ``(..., n, n)``; ``t`` is
    broadcast against the leading axes.  Uses an eigendecomposition, so the
    result is unitary to rounding.
    """
    H = np.asarray(H, dtype=complex)
    if np.max(np.abs(H - np.swapaxes(H.conj(), -1, -2)), initial=0.0) > 1e-10:
        raise ValueError("expm_hermitian requires a Hermitian matrix")
    w, v = np.linalg.eigh(H)
    t = np.asarray(t, dtype=float)[..., None]
    phases = np.exp(-1j * w * t)
    return (v * phases[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def _truncate(U: np.ndarray, subspace) -> np.ndarray:
    U = np.asarray(U)
    if subspace is None:
        return U
    idx = np.asarray(subspace, dtype=int)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= U.shape[-1]:
        raise IndexError("subspace index out of range")
    return U[..., idx[:, None], idx[None, :]]


def avg_gate_fidelity(U: np.ndarray, U_target: np.ndarray, subspace=None) -> float:
    """Average gate fidelity of ``U`` with respect to ``U_target``.

    ``U`` may live on a larger space than the target; ``subspace`` then lists
    the indices of the computational states and ``U`` is truncated to that
    block before evaluating ``(|tr(Vc^† Ut)|^2 + tr(Vc^† Vc)) / (d (d + 1))``.
    """
    U_target = np.asarray(U_target)
    d = U_target.shape[0]
    if subspace is None and np.shape(U)[-1] != d:
        if np.shape(U)[-1] < d:
            raise ValueError("U is smaller than the target")
        raise ValueError("subspace indices are required when U is larger than the target")
    Vc = _truncate(U, subspace)
    if Vc.shape[-2:] != (d, d):
        raise ValueError(f"dimension mismatch: {Vc.shape[-2:]} vs {(d, d)}")
    overlap = np.trace(Vc.conj().T @ U_target)
    norm = np.real(np.trace(Vc.conj().T @ Vc))
    return float((abs(overlap) ** 2 + norm) / (d * (d + 1)))


def leakage(U: np.ndarray, subspace) -> float:
    """Population lost from the subspace, ``1 - tr(Vc^† Vc) / dim``."""
    Vc = _truncate(U, subspace)
    return float(1.0 - np.real(np.trace(Vc.conj().T @ Vc)) / len(subspace))


def pivoted_qr(A: np.ndarray):
    """Column-pivoted QR, ``A[:, perm] = Q @ R`` with ``|R_kk|`` non-increasing."""
    Q, R, perm = scipy.linalg.qr(np.asarray(A), mode="economic", pivoting=True)
    return Q, R, perm


def numerical_rank(R: np.ndarray, rtol: float = 1e-10) -> int:
    """Rank read off the diagonal of a pivoted-QR ``R`` factor."""
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return 0
    return int(np.count_nonzero(diag > rtol * diag[0]))


def condition_number(A: np.ndarray) -> float:
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("condition number of a zero matrix is undefined")
    if s[-1] <= s[0] * np.finfo(float).eps:
        return float("inf")
    return float(s[0] / s[-1])
