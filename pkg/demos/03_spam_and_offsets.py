"""
Living with imperfect preparation and readout
=============================================

State preparation and measurement have their own errors.  Two tricks
keep them out of the gate estimate: pick rows that do not see them at
first order, or measure pairs of rows whose difference cancels a
constant readout offset.
"""

import numpy as np

from gatecal.calibration import CalibrationOptions, LinearBackend, lma_minimize, residual
from gatecal.gatesets import single_qubit_paulis, two_qubit_experiment
from gatecal.sequences import ErrorColumn, sensitivity_matrix
from gatecal.witness import paired_witness_plan, witness_plan, witness_rows

exp = two_qubit_experiment()

# single-qubit SPAM directions, readout I (x) sigma_x excepted
q = single_qubit_paulis(2, 0) + single_qubit_paulis(2, 1)
spam = [ErrorColumn(exp.init_block(0), k) for k in q]
for m in range(exp.n_measurements):
    spam += [ErrorColumn(exp.meas_block(m), k) for k in q if k != 1]

rows = witness_rows("cnot_spam_insensitive", include_probes=False)
S = sensitivity_matrix(exp, rows, spam, step=1e-6)
print(f"largest SPAM derivative over the insensitive set: {np.abs(S.entries).max():.1e}")
print(f"its condition number: {witness_plan('cnot_spam_insensitive', exp).condition_number:.3f}")

# paired rows
plan = paired_witness_plan("cnot_offset_pair_a", exp)
print(f"paired set: condition {plan.condition_number:.3f}, difference condition {plan.diff_condition:.3f}")

opt = CalibrationOptions(use_pairs=True, tol=1e-12)
clean = LinearBackend.random(exp, plan.columns, seed=3)
biased = LinearBackend.random(exp, plan.columns, seed=3, offsets=[0.06, -0.09])
q0 = clean.q_ideal + 0.03
diff = residual(clean, plan, q0, opt) - residual(biased, plan, q0, opt)
print(f"offsets change the differenced residual by {np.abs(diff).max():.1e}")

q, trace = lma_minimize(biased, plan, q0, opt)
print(f"calibrating the biased device lands {np.abs(q - clean.q_ideal).max():.1e} from the clean optimum")
