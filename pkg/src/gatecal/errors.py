"""Coherent and stochastic gate-error models.

A gate ``G_g`` with coherent error row ``p_g`` acts as ``G_g @ E_g(p_g)``
where ``E_g`` is a product of normalised ``(I - i p_k sigma_k)`` factors over
the traceless Pauli basis.  State preparation and measurement errors are
modelled as extra identity "pseudo-gates" with their own rows, appended
after the regular gates: first one block per initial state, then one per
measurement operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import PauliBasis, is_hermitian, is_unitary, pauli_basis

__all__ = [
    "GateSet",
    "ErrorParameters",
    "Experiment",
    "PauliChannel",
    "coherent_error_op",
    "error_ops",
    "sequence_unitary",
    "batch_unitaries",
    "batch_responses",
    "response",
    "spam_extended_response",
    "apply_pauli_channel",
    "channel_infidelity",
    "channel_diamond",
    "coherent_bounds",
    "residual_error_bound",
    "t1_infidelity",
    "syndrome_error_bound",
]

# rows evaluated per chunk in batch_responses; keeps peak memory near 100 MB
_CHUNK = 65536


@dataclass(frozen=True)
class GateSet:
    """Ideal gate unitaries plus the identity used to pad table rows."""

    gates: np.ndarray
    labels: tuple[str, ...]
    identity_index: int | None = None

    def __post_init__(self):
        gates = np.asarray(self.gates, dtype=complex)
        if gates.ndim != 3 or gates.shape[1] != gates.shape[2]:
            raise ValueError("gates must have shape (n_gates, d, d)")
        if len(self.labels) != len(gates):
            raise ValueError("one label per gate is required")
        for label, G in zip(self.labels, gates):
            if not is_unitary(G, 1e-10):
                raise ValueError(f"gate {label} is not unitary")
        if self.identity_index is not None:
            if np.max(np.abs(gates[self.identity_index] - np.eye(gates.shape[1]))) > 1e-12:
                raise ValueError("identity_index does not point at the identity")
        gates.setflags(write=False)
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def dim(self) -> int:
        return self.gates.shape[1]

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.dim)))

    def __len__(self) -> int:
        return len(self.gates)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def active(self) -> list[int]:
        """Gate indices that sequences are built from (padding excluded)."""
        return [g for g in range(len(self)) if g != self.identity_index]


@dataclass
class ErrorParameters:
    """Matrix ``values[g, k]`` of coherent error strengths.

    Column ``k`` corresponds to Pauli element ``k + 1`` (the identity carries
    no error).  The flat vector form indexes ``u = g * (d**2 - 1) + k``.
    """

    values: np.ndarray
    d: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.d**2 - 1:
            raise ValueError(f"values must have shape (n_blocks, {self.d**2 - 1})")

    @classmethod
    def zeros(cls, n_blocks: int, d: int) -> "ErrorParameters":
        return cls(np.zeros((n_blocks, d * d - 1)), d)

    @classmethod
    def from_vector(cls, vector, d: int) -> "ErrorParameters":
        return cls(np.asarray(vector, dtype=float).reshape(-1, d * d - 1), d)

    @property
    def n_blocks(self) -> int:
        return self.values.shape[0]

    def vector(self) -> np.ndarray:
        return self.values.ravel().copy()

    def flat_index(self, g: int, k: int) -> int:
        """Flat position of Pauli element ``k`` (1-based, as in the basis) of block ``g``."""
        return g * (self.d**2 - 1) + (k - 1)

    def copy(self) -> "ErrorParameters":
        return ErrorParameters(self.values.copy(), self.d)


@dataclass(frozen=True)
class Experiment:
    """Gate set, preparable states and measurement operators of an experiment."""

    gate_set: GateSet
    initial_states: tuple
    measurements: tuple
    max_length: int = 4
    state_labels: tuple = ()
    measurement_labels: tuple = ()

    def __post_init__(self):
        d = self.gate_set.dim
        states = tuple(np.asarray(r, dtype=complex) for r in self.initial_states)
        meas = tuple(np.asarray(M, dtype=complex) for M in self.measurements)
        for rho in states:
            if rho.shape != (d, d):
                raise ValueError("initial state has the wrong dimension")
            if abs(np.trace(rho) - 1) > 1e-10 or not is_hermitian(rho, 1e-10):
                raise ValueError("initial states must be Hermitian with unit trace")
            if np.linalg.eigvalsh(rho).min() < -1e-10:
                raise ValueError("initial states must be positive semidefinite")
        for M in meas:
            if M.shape != (d, d) or not is_hermitian(M, 1e-10):
                raise ValueError("measurement operators must be Hermitian")
        object.__setattr__(self, "initial_states", states)
        object.__setattr__(self, "measurements", meas)
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(f"rho{i + 1}" for i in range(len(states))))
        if not self.measurement_labels:
            object.__setattr__(self, "measurement_labels", tuple(f"M{m + 1}" for m in range(len(meas))))

    @property
    def d(self) -> int:
        return self.gate_set.dim

    @property
    def n_gates(self) -> int:
        return len(self.gate_set)

    @property
    def n_states(self) -> int:
        return len(self.initial_states)

    @property
    def n_measurements(self) -> int:
        return len(self.measurements)

    @property
    def n_blocks_spam(self) -> int:
        return self.n_gates + self.n_states + self.n_measurements

    def init_block(self, i: int) -> int:
        return self.n_gates + i

    def meas_block(self, m: int) -> int:
        return self.n_gates + self.n_states + m

    @property
    def basis(self) -> PauliBasis:
        return pauli_basis(self.gate_set.n_qubits)


def coherent_error_op(p_g, basis: PauliBasis) -> np.ndarray:
    """Unitary error operator for one error row.

    Factors are multiplied in ascending Pauli index with the first factor
    applied first (rightmost).
    """
    p_g = np.asarray(p_g, dtype=float)
    d = basis.dim
    if p_g.shape != (d * d - 1,):
        raise ValueError(f"error row must have length {d * d - 1}")
    E = np.eye(d, dtype=complex)
    for k in np.flatnonzero(p_g):
        pk = p_g[k]
        E = ((np.eye(d) - 1j * pk * basis[k + 1]) / np.sqrt(1 + pk * pk)) @ E
    return E


def error_ops(p: ErrorParameters, basis: PauliBasis | None = None) -> np.ndarray:
    basis = basis or pauli_basis(int(round(np.log2(p.d))))
    return np.array([coherent_error_op(row, basis) for row in p.values])


def _perturbed_gates(gates: GateSet, p: ErrorParameters, basis: PauliBasis) -> np.ndarray:
    n = len(gates)
    if p.n_blocks < n:
        raise ValueError("error parameters have fewer blocks than gates")
    return np.einsum("gij,gjk->gik", gates.gates, error_ops(ErrorParameters(p.values[:n], p.d), basis))


def sequence_unitary(seq: Sequence[int], p: ErrorParameters | None, gates: GateSet) -> np.ndarray:
    """Unitary of a gate sequence applied left to right (first gate first)."""
    d = gates.dim
    if p is None:
        ops = gates.gates
    else:
        ops = _perturbed_gates(gates, p, pauli_basis(gates.n_qubits))
    U = np.eye(d, dtype=complex)
    for g in seq:
        if not 0 <= g < len(gates):
            raise IndexError(f"gate index {g} out of range")
        U = ops[g] @ U
    return U


def batch_unitaries(seqs: np.ndarray, ops: np.ndarray) -> np.ndarray:
    """Unitaries of many sequences at once.

    ``seqs`` is an integer array ``(n, L)`` padded with ``-1``; padding
    entries act as the identity.
    """
    seqs = np.asarray(seqs, dtype=int)
    d = ops.shape[-1]
    table = np.concatenate([ops, np.eye(d, dtype=complex)[None]])
    U = np.broadcast_to(np.eye(d, dtype=complex), (len(seqs), d, d)).copy()
    for t in range(seqs.shape[1] if seqs.ndim == 2 else 0):
        U = table[seqs[:, t]] @ U
    return U


def batch_responses(exp: Experiment, seqs, states, meas, p: ErrorParameters | None = None) -> np.ndarray:
    """Measurement responses ``tr(V rho V^† M)`` for many rows.

    ``p`` may hold only the gate blocks or the gate blocks followed by the
    state-preparation and measurement blocks.
    """
    seqs = np.asarray(seqs, dtype=int)
    if seqs.ndim != 2:
        raise ValueError("seqs must be a 2-d array padded with -1")
    states = np.asarray(states, dtype=int)
    meas = np.asarray(meas, dtype=int)
    basis = exp.basis
    d = exp.d
    rhos = np.array(exp.initial_states)
    Ms = np.array(exp.measurements)
    if p is None:
        ops = exp.gate_set.gates
        spam = False
    else:
        if p.d != d:
            raise ValueError("error parameters have the wrong dimension")
        if p.n_blocks not in (exp.n_gates, exp.n_blocks_spam):
            raise ValueError(
                f"expected {exp.n_gates} or {exp.n_blocks_spam} error blocks, got {p.n_blocks}"
            )
        ops = _perturbed_gates(exp.gate_set, p, basis)
        spam = p.n_blocks == exp.n_blocks_spam
    if spam:
        E_init = np.array([coherent_error_op(p.values[exp.init_block(i)], basis) for i in range(exp.n_states)])
        E_meas = np.array([coherent_error_op(p.values[exp.meas_block(m)], basis) for m in range(exp.n_measurements)])
        rhos = E_init @ rhos @ np.swapaxes(E_init.conj(), -1, -2)
        Ms = np.swapaxes(E_meas.conj(), -1, -2) @ Ms @ E_meas
    out = np.empty(len(seqs))
    for start in range(0, len(seqs), _CHUNK):
        sl = slice(start, start + _CHUNK)
        U = batch_unitaries(seqs[sl], ops)
        evolved = U @ rhos[states[sl]] @ np.swapaxes(U.conj(), -1, -2)
        out[sl] = np.real(np.einsum("nij,nji->n", evolved, Ms[meas[sl]]))
    return out


def spam_extended_response(seq, i: int, m: int, p_extended: ErrorParameters, exp: Experiment) -> float:
    """Response including coherent preparation and measurement errors."""
    if p_extended.n_blocks != exp.n_blocks_spam:
        raise ValueError(
            f"expected {exp.n_blocks_spam} blocks (gates, states, measurements), got {p_extended.n_blocks}"
        )
    return _single_response(seq, i, m, p_extended, exp)


def response(seq, i: int, m: int, p: ErrorParameters | None, exp: Experiment) -> float:
    """Ideal-readout response ``tr(U_s rho_i U_s^† M_m)``."""
    if p is not None and p.n_blocks != exp.n_gates:
        p = ErrorParameters(p.values[: exp.n_gates], p.d)
    return _single_response(seq, i, m, p, exp)


def _single_response(seq, i, m, p, exp) -> float:
    if not 0 <= i < exp.n_states or not 0 <= m < exp.n_measurements:
        raise IndexError("state or measurement index out of range")
    seq = list(seq)
    arr = np.array([seq], dtype=int) if seq else np.zeros((1, 0), dtype=int)
    for g in seq:
        if not 0 <= g < exp.n_gates:
            raise IndexError(f"gate index {g} out of range")
    return float(batch_responses(exp, arr, [i], [m], p)[0])


@dataclass(frozen=True)
class PauliChannel:
    """Stochastic Pauli channel ``rho -> sum_k a_k sigma_k rho sigma_k``."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        n = len(w)
        if n < 4 or 4 ** int(round(np.log(n) / np.log(4))) != n:
            raise ValueError("weights must have length 4**n_qubits")
        if np.any(w < -1e-15) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return int(round(np.sqrt(len(self.weights))))

    @classmethod
    def depolarizing(cls, infidelity: float, d: int) -> "PauliChannel":
        """Uniform Pauli channel with the given average infidelity."""
        error = infidelity * (d + 1) / d
        w = np.full(d * d, error / (d * d - 1))
        w[0] = 1 - error
        return cls(w)


def apply_pauli_channel(ch: PauliChannel, rho: np.ndarray, basis: PauliBasis | None = None) -> np.ndarray:
    basis = basis or pauli_basis(int(round(np.log2(ch.d))))
    els = basis.elements
    return np.einsum("k,kij,jl,klm->im", ch.weights.astype(complex), els, rho, els)


def channel_infidelity(ch: PauliChannel) -> float:
    d = ch.d
    return d / (d + 1) * (1 - ch.weights[0])


def channel_diamond(ch: PauliChannel) -> float:
    return 1 - ch.weights[0]


def coherent_bounds(p: ErrorParameters, g: int) -> tuple[float, float]:
    """Leading-order infidelity and diamond-distance bound of gate ``g``."""
    norm = np.linalg.norm(p.values[g])
    d = p.d
    return d / (d + 1) * norm**2, d * norm


def residual_error_bound(
    S_inv_norm: float, sequence_infidelities, d: int, rigorous: bool = False, spread: float = 1.0
) -> tuple[float, float]:
    """Worst-case coherent error left behind by stochastic sequence errors.

    ``S_inv_norm`` is the Frobenius norm of the inverse sensitivity matrix.
    Returns the infidelity bound ``|S^-1|^2 |I|^2`` and the diamond bound
    ``d |S^-1| |D|`` with ``D = (d + 1) / d * I`` per sequence.

    The short infidelity form assumes ``|delta_r| <= I_r``.  Syndrome errors
    are only guaranteed to satisfy ``|delta_r| <= spread * D_r``, so with
    ``rigorous=True`` the infidelity bound becomes
    ``spread^2 (d + 1) / d |S^-1|^2 |I|^2`` and the diamond bound picks up
    a factor ``spread``.
    """
    infid = np.asarray(sequence_infidelities, dtype=float)
    if S_inv_norm < 0 or np.any(infid < 0):
        raise ValueError("norms and infidelities must be non-negative")
    diamonds = infid * (d + 1) / d
    inf_bound = S_inv_norm**2 * float(infid @ infid)
    dia_bound = d * S_inv_norm * float(np.linalg.norm(diamonds))
    if rigorous:
        inf_bound *= spread**2 * (d + 1) / d
        dia_bound *= spread
    return inf_bound, dia_bound


def t1_infidelity(t: float, T1: float, d: int = 2) -> float:
    """Leading-order infidelity of energy relaxation for a time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t > T1:
        raise ValueError("leading-order formula requires t <= T1")
    return d / (d + 1) * t / (2 * T1)


def syndrome_error_bound(ch: PauliChannel, M: np.ndarray, unit_spread: bool = False) -> float:
    """Upper bound on ``|tr(E(rho) M) - tr(rho M)|`` over all states.

    The bound is ``lambda * (1 - a_0)`` with ``lambda`` the eigenvalue spread
    of ``M``; ``unit_spread=True`` uses ``lambda = 1`` (operators rescaled to
    unit spread).
    """
    if not is_hermitian(M):
        raise ValueError("measurement operator must be Hermitian")
    if unit_spread:
        spread = 1.0
    else:
        ev = np.linalg.eigvalsh(M)
        spread = ev[-1] - ev[0]
    return spread * (1 - ch.weights[0])
