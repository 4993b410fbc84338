"""
Closing the loop with Levenberg-Marquardt
=========================================

Calibration adjusts control parameters until every selected sequence
reads its ideal value.  The synthetic backends map controls to gate
errors through a hidden linear or nonlinear map, so the optimizer has
to work it out from measurements alone.
"""

import numpy as np

from gatecal.calibration import CalibrationOptions, CoherentBackend, lma_minimize, run_campaign
from gatecal.errors import PauliChannel
from gatecal.gatesets import two_qubit_experiment
from gatecal.witness import witness_plan

exp = two_qubit_experiment()
plan = witness_plan("cnot_basic", exp)
backend = CoherentBackend.random(exp, plan.columns, seed=1)

q0 = backend.sample_start(np.random.default_rng(2), 0.1)
print(f"start infidelity {backend.metrics(q0)['coherent_infidelity']:.3e}")
q, trace = lma_minimize(backend, plan, q0)
for r in trace.records:
    print(f"  iter {r.iteration:2d}  |r| {r.residual_norm:.2e}  infidelity {r.infidelity:.2e}")
print("status:", trace.status)

# many starts with up to 20% infidelity
rep = run_campaign(lambda i: backend, plan, 40, 0.2, seed=3, options=CalibrationOptions(max_iterations=15))
print(f"campaign: {rep.success_rate:.0%} reach 1e-4, median {np.median(rep.iterations()):g} iterations")
for lo, hi, n, rate in rep.bins(4):
    print(f"  start in [{lo:.3f}, {hi:.3f}): {n} runs, {rate:.0%} succeed")

# probe rows with a depolarizing model on a device that also decoheres
w = np.zeros(16)
w[0], w[3], w[12] = 1 - 4e-3, 2e-3, 2e-3
noisy = CoherentBackend.random(exp, plan.columns, seed=1, stochastic=PauliChannel(w))
q0 = noisy.sample_start(np.random.default_rng(5), 0.05)
for label, opt in [
    ("with probes", CalibrationOptions(use_probes=True, depolarizing_model=True, tol=1e-10)),
    ("without", CalibrationOptions(tol=1e-10)),
    ("drop on stall", CalibrationOptions(use_probes=True, depolarizing_model=True, drop_probes_on_stall=True, tol=1e-10)),
]:
    _, t = lma_minimize(noisy, plan, q0, opt)
    print(f"{label:14s} {t.status:10s} final |r| {t.accepted_norms()[-1]:.1e} after {t.iterations} iterations")
