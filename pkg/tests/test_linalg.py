import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatecal.linalg import (
    PAULIS,
    avg_gate_fidelity,
    condition_number,
    expm_hermitian,
    is_unitary,
    leakage,
    numerical_rank,
    pauli_basis,
    pauli_label,
    pivoted_qr,
)


def random_hermitian(rng, n):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (A + A.conj().T) / 2


def random_unitary(rng, n):
    Q, R = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def taylor_expm(A, terms=30):
    # scaling and squaring around a truncated Taylor series
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(A, 1), 1e-300)))) + 1)
    B = A / 2**s
    out = np.eye(len(A), dtype=complex)
    term = np.eye(len(A), dtype=complex)
    for k in range(1, terms):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


# --- Pauli basis


def test_single_qubit_basis():
    b = pauli_basis(1)
    assert len(b) == 4
    np.testing.assert_array_equal(b.elements, PAULIS)


def test_two_qubit_digit_order():
    b = pauli_basis(2)
    assert len(b) == 16
    np.testing.assert_array_equal(b[7], np.kron(PAULIS[1], PAULIS[3]))
    assert b.label(7) == "13"
    assert pauli_label(12, 2) == "30"


@pytest.mark.parametrize("n", [1, 2, 3])
def test_orthogonality(n):
    els = pauli_basis(n).elements
    d = 2**n
    gram = np.einsum("aij,bji->ab", els, els) / d
    np.testing.assert_allclose(gram, np.eye(len(els)), atol=1e-14)


def test_basis_rejects_bad_sizes():
    with pytest.raises(ValueError):
        pauli_basis(0)
    with pytest.raises(ValueError):
        pauli_basis(5)


# --- exponentials


def test_expm_zero_is_identity():
    np.testing.assert_allclose(expm_hermitian(np.zeros((3, 3))), np.eye(3), atol=1e-15)


def test_expm_pauli_x():
    U = expm_hermitian(np.pi / 2 * PAULIS[1])
    np.testing.assert_allclose(U, -1j * PAULIS[1], atol=1e-14)
    assert is_unitary(U)


def test_expm_matches_taylor_oracle():
    rng = np.random.default_rng(3)
    H = random_hermitian(rng, 6)
    ref = taylor_expm(-1j * 0.7 * H)
    assert np.max(np.abs(expm_hermitian(H, 0.7) - ref)) < 1e-9


def test_expm_batched_times():
    rng = np.random.default_rng(4)
    H = random_hermitian(rng, 4)
    t = np.array([0.1, 0.5, 2.0])
    Us = expm_hermitian(np.broadcast_to(H, (3, 4, 4)), t)
    for U, tt in zip(Us, t):
        np.testing.assert_allclose(U, expm_hermitian(H, tt), atol=1e-13)


def test_expm_rejects_non_hermitian():
    with pytest.raises(ValueError):
        expm_hermitian(np.array([[0, 1], [0, 0]]))


# --- fidelity and leakage


def test_fidelity_of_target_is_one():
    U = random_unitary(np.random.default_rng(0), 4)
    assert avg_gate_fidelity(U, U) == pytest.approx(1.0, abs=1e-14)


def test_fidelity_small_z_rotation():
    p = 0.01
    Ut = random_unitary(np.random.default_rng(1), 2)
    U = expm_hermitian(p * PAULIS[3]) @ Ut
    # the exponent here is exp(-i p Z), so the leading term is (2/3) p^2
    assert 1 - avg_gate_fidelity(U, Ut) == pytest.approx(6.667e-5, rel=1e-3)


@given(st.floats(0, 2 * np.pi))
def test_fidelity_phase_invariant(phi):
    Ut = random_unitary(np.random.default_rng(2), 4)
    assert avg_gate_fidelity(np.exp(1j * phi) * Ut, Ut) == pytest.approx(1.0, abs=1e-13)


def test_fidelity_requires_subspace_for_larger_u():
    with pytest.raises(ValueError):
        avg_gate_fidelity(np.eye(6), np.eye(4))


def test_leakage_block_diagonal():
    rng = np.random.default_rng(5)
    U = np.zeros((6, 6), dtype=complex)
    U[:4, :4] = random_unitary(rng, 4)
    U[4:, 4:] = random_unitary(rng, 2)
    assert leakage(U, range(4)) == pytest.approx(0.0, abs=1e-14)


def test_leakage_one_state_lost():
    P = np.eye(6)[[4, 1, 2, 3, 0, 5]]
    assert leakage(P, range(4)) == pytest.approx(0.25)


def test_leakage_against_summation():
    U = random_unitary(np.random.default_rng(6), 6)
    sub = [1, 2, 3, 4]
    total = 0.0
    for a in sub:
        for b in sub:
            total += abs(U[a, b]) ** 2
    assert leakage(U, sub) == pytest.approx(1 - total / 4, abs=1e-14)


# --- pivoted QR, rank, conditioning


def test_qr_identity():
    Q, R, perm = pivoted_qr(np.eye(5))
    np.testing.assert_allclose(np.abs(np.diag(R)), 1.0)
    np.testing.assert_allclose(np.eye(5)[:, perm], Q @ R, atol=1e-15)


def test_qr_duplicated_row():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(6, 6))
    A[5] = A[2]
    _, R, _ = pivoted_qr(A.T)
    assert np.min(np.abs(np.diag(R))) < 1e-12
    assert numerical_rank(R) == 5


def test_rank_matches_svd():
    rng = np.random.default_rng(8)
    U, _ = np.linalg.qr(rng.normal(size=(20, 15)))
    V, _ = np.linalg.qr(rng.normal(size=(15, 15)))
    s = np.logspace(1, -6, 15)
    s[-4:] = [1e-11, 1e-12, 1e-13, 1e-14]
    A = U @ np.diag(s) @ V.T
    _, R, _ = pivoted_qr(A)
    expected = int(np.count_nonzero(s > 1e-10 * s[0]))
    assert numerical_rank(R) == expected


def test_condition_numbers():
    assert condition_number(np.eye(4)) == pytest.approx(1.0)
    assert condition_number(np.diag([10.0, 0.1])) == pytest.approx(100.0)
    assert condition_number(np.diag([1.0, 0.0])) == np.inf
    with pytest.raises(ValueError):
        condition_number(np.zeros((2, 2)))


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_random_unitaries_are_unitary(seed):
    H = random_hermitian(np.random.default_rng(seed), 5)
    assert is_unitary(expm_hermitian(H, 1.3))
