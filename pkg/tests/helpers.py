"""Shared helpers for the test modules (not collected by pytest)."""
import json
from pathlib import Path

import numpy as np

from gatecal.sequences import column_label, sensitivity_matrix, spam_columns
from gatecal.witness import witness_columns, witness_rows

DATA = Path(__file__).parent / "data"


def reference_coefficients() -> dict:
    return json.loads((DATA / "reference_coefficients.json").read_text())


def _generic(label: str) -> str:
    # "m2,10" -> "m,10"; gate and preparation labels are unchanged
    head, tail = label.split(",")
    return (head[0] + "," + tail) if head[0] in "im" else label


def coefficient_deviation(exp, name: str, row_ids=None, spam: bool = True) -> tuple[float, list]:
    """Max |S - 2 * printed| over gate and SPAM columns of a stored set.

    Returns the deviation and the indices of rows that deviate by more than
    1e-6.  Measurement-block entries of the measurement not used by a row
    are compared against zero.
    """
    ref = reference_coefficients()[name]
    rows = witness_rows(name)
    ids = range(len(rows)) if row_ids is None else row_ids
    cols = witness_columns(name, exp) + (spam_columns(exp) if spam else [])
    S = sensitivity_matrix(exp, [rows[i] for i in ids], cols, step=1e-6)
    worst, bad = 0.0, []
    for n, i in enumerate(ids):
        want = {**ref[i]["gate"], **ref[i]["init"], **ref[i]["meas"]}
        expected = np.zeros(len(cols))
        for j, c in enumerate(cols):
            lab = column_label(c, exp)
            if lab.startswith("m") and int(lab[1]) - 1 != rows[i].measurement:
                continue
            expected[j] = 2 * want.get(_generic(lab), 0.0)
        dev = float(np.max(np.abs(S.entries[n] - expected)))
        dev = max(dev, abs(S.ideal[n] - ref[i]["ideal"]))
        worst = max(worst, dev)
        if dev > 1e-6:
            bad.append(i)
    return worst, bad
