"""Stored reference sequence sets for the two-qubit gate set."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import Experiment
from .gatesets import single_qubit_paulis, two_qubit_experiment
from .sequences import ErrorColumn, Row, SequencePlan, gate_columns, gauge_constraint, plan_from_rows

__all__ = ["witness_names", "witness_rows", "witness_columns", "witness_plan", "paired_witness_plan"]

_PAIRS = {"cnot_offset_pair_a": "cnot_offset_pair_b", "cnot_offset_pair_ext_a": "cnot_offset_pair_ext_b"}


@lru_cache(maxsize=1)
def _load() -> dict:
    text = resources.files("gatecal").joinpath("data/witness_tables.json").read_text()
    return json.loads(text)


def witness_names() -> list[str]:
    return sorted(_load()["sets"])


def _entry(name: str) -> dict:
    sets = _load()["sets"]
    if name not in sets:
        raise KeyError(f"unknown witness set {name!r}; choose from {sorted(sets)}")
    return sets[name]


def witness_rows(name: str, include_probes: bool = True) -> list[Row]:
    entry = _entry(name)
    probes = set(entry.get("probe_rows", []))
    return [
        Row(tuple(r["sequence"]), r["state"], r["measurement"])
        for n, r in enumerate(entry["rows"])
        if include_probes or n not in probes
    ]


def witness_columns(name: str, exp: Experiment) -> list[ErrorColumn]:
    kind = _entry(name)["columns"]
    cols = gate_columns(exp, [0])
    if kind == "full":
        q1 = single_qubit_paulis(2, 0)
        q2 = single_qubit_paulis(2, 1)
        cols += gate_columns(exp, [1, 2], q1) + gate_columns(exp, [3, 4], q2)
    return cols


def witness_plan(name: str, exp: Experiment | None = None) -> SequencePlan:
    """Plan built from a stored set.

    Probe rows are moved to ``plan.probe_rows``; for ``full_gate_set`` the
    two shared complement rows pair up with the remaining rows by
    measurement and two gauge rows close the system.
    """
    exp = exp or two_qubit_experiment()
    entry = _entry(name)
    cols = witness_columns(name, exp)
    rows = witness_rows(name, include_probes=False)
    probes = [witness_rows(name)[i] for i in entry.get("probe_rows", [])]
    cons = None
    complements = None
    if "gauge_constraints" in entry:
        labels = exp.gate_set.labels
        fixed = [ErrorColumn(labels.index(g), int(k, 4)) for g, k in entry["gauge_constraints"]]
        cons = gauge_constraint(cols, fixed, entry["gauge_weight"])
    if "complement_rows" in entry:
        by_meas = {int(m): rows[i] for m, i in entry["complement_rows"].items()}
        drop = set(entry["complement_rows"].values())
        rows = [r for n, r in enumerate(rows) if n not in drop]
        complements = [by_meas[r.measurement] for r in rows]
    plan = plan_from_rows(exp, rows, cols, constraints=cons, complements=complements)
    if probes:
        plan.probe_rows = probes
        from .errors import batch_responses
        from .sequences import _pad

        plan.probe_ideal = list(
            batch_responses(exp, _pad(probes), [r.state for r in probes], [r.measurement for r in probes])
        )
    return plan


def paired_witness_plan(name: str, exp: Experiment | None = None) -> SequencePlan:
    """Primary set ``name`` paired row by row with its stored complement set."""
    if name not in _PAIRS:
        raise KeyError(f"{name!r} has no stored complement set")
    exp = exp or two_qubit_experiment()
    return plan_from_rows(
        exp, witness_rows(name), witness_columns(name, exp), complements=witness_rows(_PAIRS[name])
    )


def reference_final_states(exp: Experiment, rows) -> np.ndarray:
    from .errors import sequence_unitary

    out = []
    for r in rows:
        U = sequence_unitary(r.sequence, None, exp.gate_set)
        out.append(U @ exp.initial_states[r.state] @ U.conj().T)
    return np.array(out)
