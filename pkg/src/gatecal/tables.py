"""Plan tables (markdown and TSV) and versioned plan files.

Table coefficients are half the sensitivities, i.e. the expansion of the
response in ``p/2``; this keeps most entries at small integers.  Terms are
ordered by block, then by the Pauli digit of the last qubit, then by the
earlier digits.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import Experiment
from .linalg import pauli_label
from .sequences import ErrorColumn, Row, SensitivityMatrix, SequencePlan, sensitivity_matrix, spam_columns

__all__ = [
    "SCHEMA_VERSION",
    "TableRow",
    "TableDocument",
    "emit_table",
    "render_markdown",
    "render_tsv",
    "parse_markdown",
    "parse_tsv",
    "format_polynomial",
    "parse_polynomial",
    "experiment_digest",
    "plan_to_dict",
    "plan_from_dict",
    "save_plan",
    "load_plan",
]

SCHEMA_VERSION = 1
PAD = "—"
MINUS = "−"
_TSV_HEADER = ["s", "sequence", "state", "measurement", "gates", "initialization", "measurement_errors"]


@dataclass(frozen=True)
class TableRow:
    index: int
    sequence: tuple  # gate labels, padded with PAD
    state: str
    measurement: str
    ideal: float
    gates: tuple  # ((label, coefficient), ...)
    init: tuple
    meas: tuple


@dataclass
class TableDocument:
    length: int
    rows: list = field(default_factory=list)


def _coef_str(c: float) -> str:
    a = abs(c)
    if abs(a - round(a)) < 1e-9:
        a_s = str(int(round(a)))
    else:
        a_s = f"{a:.6g}"
    return "" if a_s == "1" else a_s


def _const_str(c: float) -> str:
    return str(int(round(c))) if abs(c - round(c)) < 1e-9 else f"{c:.6g}"


def format_polynomial(terms, constant: float = 0.0) -> str:
    """``[("1,11", -1.0), ("1,22", 1.0)] -> "−p_{1,11} +p_{1,22}"``."""
    parts = []
    if constant != 0 or not terms:
        parts.append(_const_str(constant))
    for label, c in terms:
        sign = MINUS if c < 0 else "+"
        parts.append(f"{sign}{_coef_str(c)}p_{{{label}}}")
    return " ".join(parts)


_TERM = re.compile(r"([+−-])([0-9.eE+-]*?)p_\{([^}]*)\}")


def parse_polynomial(text: str) -> tuple[float, tuple]:
    text = text.strip()
    terms = []
    pos = 0
    constant = 0.0
    first = text.split(" ", 1)[0] if text else ""
    if first and "p_" not in first:
        constant = float(first.replace(MINUS, "-"))
        pos = len(first)
    for m in _TERM.finditer(text, pos):
        sign = -1.0 if m.group(1) in (MINUS, "-") else 1.0
        mag = float(m.group(2)) if m.group(2) else 1.0
        terms.append((m.group(3), sign * mag))
    return constant, tuple(terms)


def _sort_key(col: ErrorColumn, n_qubits: int):
    digits = pauli_label(col.k, n_qubits)
    return (col.block, tuple(reversed(digits)))


def _terms(exp: Experiment, row_entries, columns, prefix_for) -> tuple:
    items = []
    for c, v in zip(columns, row_entries):
        if abs(v) < 1e-7:
            continue
        label = prefix_for(c)
        if label is None:
            continue
        items.append((_sort_key(c, exp.gate_set.n_qubits), label, round(float(v) / 2, 6)))
    items.sort()
    return tuple((lab, c) for _, lab, c in items)


def emit_table(plan: SequencePlan, exp: Experiment, spam: bool = True) -> TableDocument:
    """Table document for a plan; SPAM columns are recomputed when ``spam``."""
    rows = plan.rows + list(plan.probe_rows)
    for r in plan.complements or []:
        if r not in rows:
            rows.append(r)
    length = max([len(r.sequence) for r in rows], default=0)
    doc = TableDocument(length)
    if not rows:
        return doc
    n_g = exp.n_gates
    S = sensitivity_matrix(exp, rows, list(plan.columns) + (spam_columns(exp) if spam else []))
    labels = exp.gate_set.labels
    nq = exp.gate_set.n_qubits
    for n, r in enumerate(rows):
        def gate_label(c):
            return f"{c.block + 1},{pauli_label(c.k, nq)}" if c.block < n_g else None

        def init_label(c):
            if n_g <= c.block < n_g + exp.n_states and c.block - n_g == r.state:
                return f"i,{pauli_label(c.k, nq)}"
            return None

        def meas_label(c):
            if c.block - n_g - exp.n_states == r.measurement:
                return f"m,{pauli_label(c.k, nq)}"
            return None

        seq = tuple(labels[g] for g in r.sequence) + (PAD,) * (length - len(r.sequence))
        doc.rows.append(
            TableRow(
                n + 1,
                seq,
                exp.state_labels[r.state],
                exp.measurement_labels[r.measurement],
                round(float(S.ideal[n]), 6),
                _terms(exp, S.entries[n], S.columns, gate_label),
                _terms(exp, S.entries[n], S.columns, init_label),
                _terms(exp, S.entries[n], S.columns, meas_label),
            )
        )
    return doc


def render_markdown(doc: TableDocument) -> str:
    head = ["s"] + [f"γ{j + 1}" for j in range(doc.length)] + ["M", "gates", "initialization", "measurement"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in doc.rows:
        cells = (
            [str(r.index)]
            + list(r.sequence)
            + [r.measurement, format_polynomial(r.gates, r.ideal), format_polynomial(r.init), format_polynomial(r.meas)]
        )
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_tsv(doc: TableDocument) -> str:
    lines = ["\t".join(_TSV_HEADER)]
    for r in doc.rows:
        lines.append(
            "\t".join(
                [
                    str(r.index),
                    " ".join(r.sequence),
                    r.state,
                    r.measurement,
                    format_polynomial(r.gates, r.ideal),
                    format_polynomial(r.init),
                    format_polynomial(r.meas),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _row_from_cells(index, seq, state, meas, g, i, m) -> TableRow:
    const, gates = parse_polynomial(g)
    _, init = parse_polynomial(i)
    _, mterms = parse_polynomial(m)
    return TableRow(int(index), tuple(seq), state, meas, const, gates, init, mterms)


def parse_tsv(text: str) -> TableDocument:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0].split("\t") != _TSV_HEADER:
        raise ValueError("not a plan table (bad header)")
    rows = []
    for ln in lines[1:]:
        c = ln.split("\t")
        rows.append(_row_from_cells(c[0], c[1].split(" ") if c[1] else (), c[2], c[3], c[4], c[5], c[6]))
    length = max((len(r.sequence) for r in rows), default=0)
    return TableDocument(length, rows)


def parse_markdown(text: str, state: str = "") -> TableDocument:
    """Inverse of :func:`render_markdown`; the state label is not rendered there."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip().startswith("|")]
    if len(lines) < 2:
        raise ValueError("not a markdown table")
    head = [c.strip() for c in lines[0].strip("|").split("|")]
    length = len(head) - 5
    rows = []
    for ln in lines[2:]:
        c = [x.strip() for x in ln.strip("|").split("|")]
        rows.append(_row_from_cells(c[0], c[1 : 1 + length], state, *c[1 + length :]))
    return TableDocument(length, rows)


def experiment_digest(exp: Experiment) -> str:
    """Stable hash of gates, states and measurements (rounded to 1e-12)."""
    h = hashlib.sha256()
    for arr in (exp.gate_set.gates, np.array(exp.initial_states), np.array(exp.measurements)):
        a = np.round(np.asarray(arr, dtype=complex), 12) + 0.0  # drop negative zeros
        h.update(np.ascontiguousarray(a.real).tobytes())
        h.update(np.ascontiguousarray(a.imag).tobytes())
    h.update("\x00".join(exp.gate_set.labels).encode())
    return h.hexdigest()[:16]


def _rows_out(rows):
    return [{"sequence": list(r.sequence), "state": r.state, "measurement": r.measurement} for r in rows]


def _rows_in(items):
    return [Row(tuple(x["sequence"]), int(x["state"]), int(x["measurement"])) for x in items]


def plan_to_dict(plan: SequencePlan, exp: Experiment, extra: dict | None = None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sequence_plan",
        "experiment_digest": experiment_digest(exp),
        "columns": [[c.block, c.k] for c in plan.columns],
        "rows": _rows_out(plan.rows),
        "entries": plan.sensitivity.entries.tolist(),
        "ideal": plan.sensitivity.ideal.tolist(),
        "constraints": plan.constraints.tolist(),
        "condition_number": plan.condition_number,
        "inv_norm": plan.inv_norm,
        "complements": None if plan.complements is None else _rows_out(plan.complements),
        "complement_entries": None if plan.complement_entries is None else plan.complement_entries.tolist(),
        "complement_ideal": None if plan.complement_ideal is None else plan.complement_ideal.tolist(),
        "diff_condition": plan.diff_condition,
        "probe_rows": _rows_out(plan.probe_rows),
        "probe_ideal": [float(x) for x in plan.probe_ideal],
        "report": plan.report,
    }
    if extra:
        out.update(extra)
    return out


def plan_from_dict(data: dict, exp: Experiment | None = None) -> SequencePlan:
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "sequence_plan":
        raise ValueError("unsupported plan file")
    if exp is not None and data["experiment_digest"] != experiment_digest(exp):
        raise ValueError("plan was synthesized for a different experiment")
    cols = [ErrorColumn(b, k) for b, k in data["columns"]]
    rows = _rows_in(data["rows"])
    S = SensitivityMatrix(np.array(data["entries"], dtype=float).reshape(len(rows), len(cols)), rows, cols, data["ideal"])
    cons = np.array(data["constraints"], dtype=float)
    plan = SequencePlan(
        S,
        float(data["condition_number"]),
        float(data["inv_norm"]),
        constraints=cons if cons.size else np.zeros((0, 0)),
        probe_rows=_rows_in(data.get("probe_rows", [])),
        probe_ideal=list(data.get("probe_ideal", [])),
        report=dict(data.get("report", {})),
    )
    if data.get("complements") is not None:
        plan.complements = _rows_in(data["complements"])
        plan.complement_entries = np.array(data["complement_entries"], dtype=float).reshape(len(rows), len(cols))
        plan.complement_ideal = np.array(data["complement_ideal"], dtype=float)
        plan.diff_condition = data["diff_condition"]
    return plan


def save_plan(plan: SequencePlan, exp: Experiment, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan, exp, extra), indent=1, sort_keys=True) + "\n")


def load_plan(path, exp: Experiment | None = None) -> SequencePlan:
    return plan_from_dict(json.loads(Path(path).read_text()), exp)
