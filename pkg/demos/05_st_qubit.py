"""
A pulse-level singlet-triplet device
====================================

Two singlet-triplet qubits share a six-dimensional spin sector.  Exchange
pulses, filtered by the control line, drive it; the four computational
states are embedded and the rest is leakage.  The built-in CNOT pulse is
perturbed and then recalibrated against the same witness sequences used
for the synthetic backends.
"""

from importlib import resources

import numpy as np

from gatecal.calibration import CalibrationOptions, lma_minimize
from gatecal.stqubit import STQubitBackend, hamiltonian, load_pulses, perturb_pulses
from gatecal.witness import witness_plan

np.set_printoptions(precision=3, suppress=True)
print("sector Hamiltonian for J = (1, 0, 1):")
print(hamiltonian([1.0, 0.0, 1.0]).real)

with resources.as_file(resources.files("gatecal").joinpath("data/cnot_pulse.json")) as path:
    blocks, config = load_pulses(path)
backend = STQubitBackend(blocks["g1"], config)
m = backend.metrics(backend.q_ideal)
print(f"built-in CNOT: infidelity {m['infidelity']:.1e}, leakage {m['leakage']:.1e}")

# kick the pulse, then let the sequences pull it back
block, clipped = perturb_pulses(backend.block, 0.1, config, seed=4)
q0 = block.params()
print(f"perturbed: infidelity {backend.metrics(q0)['infidelity']:.2e} ({clipped} samples clipped)")
plan = witness_plan("cnot_basic")
q, trace = lma_minimize(backend, plan, q0, CalibrationOptions(max_iterations=5))
for r in trace.records:
    if r.accepted:
        print(f"  iter {r.iteration}  infidelity {r.infidelity:.2e}  leakage {r.leakage:.1e}")
