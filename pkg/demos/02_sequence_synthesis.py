"""
Choosing sequences that reveal the CNOT errors
==============================================

Every sequence responds linearly to small gate errors.  Stacking those
derivatives gives the sensitivity matrix; a square, well conditioned
subset of its rows lets us read the 15 CNOT error parameters off 15
measurements.
"""

import numpy as np

from gatecal.gatesets import two_qubit_experiment
from gatecal.sequences import (
    all_rows,
    filter_zero_ideal,
    gate_columns,
    limit_occurrences,
    select_min_subset,
    sensitivity_matrix,
)
from gatecal.tables import emit_table, render_markdown
from gatecal.witness import witness_plan

exp = two_qubit_experiment()
cols = gate_columns(exp, [0])
rows = all_rows(exp)
print(len(rows), "candidate rows up to length", exp.max_length)

S = sensitivity_matrix(exp, rows, cols)
# rows with zero ideal response are blind to stochastic Pauli errors
S, removed = filter_zero_ideal(S)
print("dropped", removed, "rows with nonzero ideal response")

plan = select_min_subset(S, exp=exp)
print(f"free selection: condition {plan.condition_number:.3f}")

# allowing each gate at most once keeps sequences short and cheap
capped = select_min_subset(limit_occurrences(S, {0}, 1), exp=exp)
print(f"one CNOT per row: condition {capped.condition_number:.3f}")

# the stored reference set, printed with coefficients = S / 2
ref = witness_plan("cnot_basic", exp)
print(f"reference set: condition {ref.condition_number:.4f}, |S^-1| {2 * ref.inv_norm:.3f}")
print("\n".join(render_markdown(emit_table(ref, exp)).splitlines()[:6]))

# extraction: a random error is recovered up to second order
rng = np.random.default_rng(0)
from gatecal.calibration import CoherentBackend, residual  # noqa: E402

b = CoherentBackend(exp, ref.columns)
p = rng.normal(size=15) * 1e-3
p_hat = ref.extract(residual(b, ref, b.q_from_error(p)))
print(f"|p| = {np.linalg.norm(p):.2e}, extraction error {np.linalg.norm(p_hat - p):.2e}")
