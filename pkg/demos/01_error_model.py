"""
Coherent gate errors and what they do to a measurement
======================================================

A gate with a small systematic error is the ideal gate followed by a
unitary close to identity.  Here we build such errors on the two-qubit
gate set, watch a sequence response move, and compare two ways of
measuring how bad a stochastic error is.
"""

import numpy as np

from gatecal.errors import (
    ErrorParameters,
    PauliChannel,
    channel_diamond,
    channel_infidelity,
    coherent_bounds,
    coherent_error_op,
    response,
)
from gatecal.gatesets import two_qubit_experiment
from gatecal.linalg import avg_gate_fidelity, pauli_basis

exp = two_qubit_experiment()
print("gates:", exp.gate_set.labels)

# a 1e-3 rotation about sigma_x (x) I on the CNOT; ``values`` skips the
# identity, so Pauli index k = 4 sits in column k - 1
p = ErrorParameters.zeros(exp.n_gates, exp.d)
p.values[0, 3] = 1e-3
E = coherent_error_op(p.values[0], pauli_basis(2))
print("error operator deviates from identity by", np.abs(E - np.eye(4)).max())

# the leading-order infidelity agrees with the exact value
inf_exact = 1 - avg_gate_fidelity(E, np.eye(4))
print(f"infidelity exact {inf_exact:.3e}, leading order {coherent_bounds(p, 0)[0]:.3e}")

# prepare |00>, apply g2 then g1, read Z on qubit 1; the shift is -2 p
seq = (1, 0)
print("ideal response", response(seq, 0, 0, None, exp))
print("with error   ", response(seq, 0, 0, p, exp))

# stochastic errors: for a Pauli channel the diamond distance is a fixed
# multiple of the infidelity
ch = PauliChannel.depolarizing(1e-3, 4)
print(f"depolarizing: infidelity {channel_infidelity(ch):.3e}, diamond {channel_diamond(ch):.3e}")
