"""Sequence-based characterisation and calibration of coherent gate errors.

Build a sensitivity matrix of measurement responses with respect to
coherent error parameters, select a small well-conditioned set of gate
sequences, and tune control parameters with a bounded Levenberg-Marquardt
loop against a synthetic or a singlet-triplet spin-qubit backend.
"""
from .errors import ErrorParameters, Experiment, GateSet, PauliChannel
from .gatesets import two_qubit_experiment
from .sequences import Row, SequencePlan, SynthesisError, select_min_subset, sensitivity_matrix

__all__ = [
    "ErrorParameters",
    "Experiment",
    "GateSet",
    "PauliChannel",
    "two_qubit_experiment",
    "Row",
    "SequencePlan",
    "SynthesisError",
    "select_min_subset",
    "sensitivity_matrix",
]

__version__ = "0.1.0"
