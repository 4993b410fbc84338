"""Sequence enumeration, sensitivity matrices and minimal-plan selection.

A *row* is a (gate sequence, initial state, measurement) triple and a
*column* is one coherent error parameter ``(block, k)``.  Blocks below
``n_gates`` are gates; higher blocks are preparation and measurement
pseudo-gates (see :mod:`gatecal.errors`).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ErrorParameters, Experiment, batch_responses, sequence_unitary
from .linalg import condition_number, numerical_rank, pauli_label, pivoted_qr

__all__ = [
    "Row",
    "ErrorColumn",
    "SensitivityMatrix",
    "SequencePlan",
    "SynthesisError",
    "MAX_ENUMERATION",
    "enumerate_sequences",
    "all_rows",
    "gate_columns",
    "spam_columns",
    "column_label",
    "sensitivity_matrix",
    "select_min_subset",
    "filter_zero_ideal",
    "limit_occurrences",
    "probe_rows",
    "select_spam_insensitive",
    "build_complementary_pairs",
    "gauge_constraint",
    "plan_from_rows",
]

MAX_ENUMERATION = 10**6


class Row(NamedTuple):
    sequence: tuple
    state: int
    measurement: int


class ErrorColumn(NamedTuple):
    block: int
    k: int  # Pauli index, 1-based


class SynthesisError(RuntimeError):
    """Raised when no plan satisfies the rank or conditioning requirement.

    ``directions`` lists unobservable (or nearly so) error directions as
    ``{column label: weight}`` dictionaries; ``detail`` carries extra
    diagnostics such as the protected columns that had to be released.
    """

    def __init__(self, message: str, directions=(), detail=None):
        super().__init__(message)
        self.directions = list(directions)
        self.detail = detail or {}

    def report(self) -> str:
        lines = [str(self)]
        for i, d in enumerate(self.directions, 1):
            terms = " ".join(f"{w:+.3f}*p_{{{lab}}}" for lab, w in d.items())
            lines.append(f"  direction {i}: {terms}")
        for key, val in self.detail.items():
            lines.append(f"  {key}: {val}")
        return "\n".join(lines)


def enumerate_sequences(exp: Experiment, max_length: int | None = None) -> list[tuple]:
    """All sequences of the active gates up to ``max_length``, shortest first.

    Within one length the order is lexicographic in gate index.
    """
    n_l = exp.max_length if max_length is None else max_length
    alphabet = exp.gate_set.active
    if n_l < 1:
        return []
    if len(alphabet) ** n_l > MAX_ENUMERATION:
        raise ValueError(
            f"{len(alphabet)}**{n_l} sequences exceed the enumeration guard of {MAX_ENUMERATION}"
        )
    out = []
    for length in range(1, n_l + 1):
        out.extend(itertools.product(alphabet, repeat=length))
    return out


def all_rows(exp: Experiment, sequences: Iterable[tuple] | None = None) -> list[Row]:
    """Every (sequence, state, measurement) combination, sequence-major."""
    seqs = enumerate_sequences(exp) if sequences is None else sequences
    return [
        Row(tuple(s), i, m)
        for s in seqs
        for i in range(exp.n_states)
        for m in range(exp.n_measurements)
    ]


def gate_columns(exp: Experiment, gates: Sequence[int] | None = None, paulis: Sequence[int] | None = None):
    """Columns for the given gates (default: all active) and Pauli indices."""
    gates = exp.gate_set.active if gates is None else gates
    paulis = range(1, exp.d**2) if paulis is None else paulis
    return [ErrorColumn(g, k) for g in gates for k in paulis]


def spam_columns(exp: Experiment):
    return [ErrorColumn(b, k) for b in range(exp.n_gates, exp.n_blocks_spam) for k in range(1, exp.d**2)]


def column_label(col: ErrorColumn, exp: Experiment) -> str:
    """Label such as ``1,11`` (gate 1), ``i,22`` (preparation) or ``m,10``."""
    pl = pauli_label(col.k, exp.gate_set.n_qubits)
    b = col.block
    if b < exp.n_gates:
        return f"{b + 1},{pl}"
    if b < exp.n_gates + exp.n_states:
        i = b - exp.n_gates
        return f"i,{pl}" if exp.n_states == 1 else f"i{i + 1},{pl}"
    m = b - exp.n_gates - exp.n_states
    return f"m{m + 1},{pl}"


def _pad(rows: Sequence[Row]) -> np.ndarray:
    length = max((len(r.sequence) for r in rows), default=0)
    arr = np.full((len(rows), length), -1, dtype=int)
    for n, r in enumerate(rows):
        arr[n, : len(r.sequence)] = r.sequence
    return arr


@dataclass
class SensitivityMatrix:
    entries: np.ndarray
    rows: list
    columns: list
    ideal: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float).reshape(len(self.rows), len(self.columns))
        self.ideal = np.asarray(self.ideal, dtype=float).reshape(len(self.rows))

    @property
    def shape(self):
        return self.entries.shape

    def take_rows(self, idx) -> "SensitivityMatrix":
        idx = list(idx)
        return SensitivityMatrix(self.entries[idx], [self.rows[i] for i in idx], list(self.columns), self.ideal[idx])

    def take_columns(self, cols: Sequence[ErrorColumn]) -> "SensitivityMatrix":
        pos = {c: n for n, c in enumerate(self.columns)}
        idx = [pos[c] for c in cols]
        return SensitivityMatrix(self.entries[:, idx], list(self.rows), list(cols), self.ideal)


def sensitivity_matrix(
    exp: Experiment,
    rows: Sequence[Row],
    columns: Sequence[ErrorColumn] | None = None,
    include_spam: bool = False,
    step: float = 1e-5,
) -> SensitivityMatrix:
    """Central-difference derivatives of every row response at zero error.

    With ``columns=None`` all active-gate columns are used, plus every
    preparation/measurement column when ``include_spam`` is set.
    """
    rows = [Row(tuple(r[0]), int(r[1]), int(r[2])) for r in rows]
    if columns is None:
        columns = gate_columns(exp) + (spam_columns(exp) if include_spam else [])
    columns = [ErrorColumn(int(c[0]), int(c[1])) for c in columns]
    need_spam = include_spam or any(c.block >= exp.n_gates for c in columns)
    n_blocks = exp.n_blocks_spam if need_spam else exp.n_gates
    for c in columns:
        if not (0 <= c.block < n_blocks and 1 <= c.k < exp.d**2):
            raise IndexError(f"column {c} out of range")
    seqs = _pad(rows)
    states = np.array([r.state for r in rows], dtype=int)
    meas = np.array([r.measurement for r in rows], dtype=int)
    ideal = batch_responses(exp, seqs, states, meas) if rows else np.zeros(0)
    entries = np.zeros((len(rows), len(columns)))
    if not rows:
        return SensitivityMatrix(entries, rows, columns, ideal)
    for n, c in enumerate(columns):
        if c.block < exp.n_gates:
            # only rows containing the gate can depend on it
            mask = np.any(seqs == c.block, axis=1)
        else:
            mask = np.ones(len(rows), dtype=bool)
        if not mask.any():
            continue
        p = ErrorParameters.zeros(n_blocks, exp.d)
        p.values[c.block, c.k - 1] = step
        plus = batch_responses(exp, seqs[mask], states[mask], meas[mask], p)
        p.values[c.block, c.k - 1] = -step
        minus = batch_responses(exp, seqs[mask], states[mask], meas[mask], p)
        entries[mask, n] = (plus - minus) / (2 * step)
    return SensitivityMatrix(entries, rows, columns, ideal)


@dataclass
class SequencePlan:
    """Selected rows with their square sensitivity matrix and diagnostics.

    ``constraints`` are extra rows on the error parameters only (no
    sequence attached) appended below the selected rows to close gauge
    freedoms.  ``complements`` holds, when pairing is used, one partner row
    per selected row; ``complement_entries`` their sensitivities.
    """

    sensitivity: SensitivityMatrix
    condition_number: float
    inv_norm: float
    constraints: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    complements: list | None = None
    complement_entries: np.ndarray | None = None
    complement_ideal: np.ndarray | None = None
    diff_condition: float | None = None
    probe_rows: list = field(default_factory=list)
    probe_ideal: list = field(default_factory=list)
    report: dict = field(default_factory=dict)

    @property
    def rows(self) -> list:
        return self.sensitivity.rows

    @property
    def columns(self) -> list:
        return self.sensitivity.columns

    @property
    def n_params(self) -> int:
        return len(self.sensitivity.columns)

    def matrix(self) -> np.ndarray:
        """Square system matrix (selected rows plus constraints)."""
        if self.constraints.size == 0:
            return self.sensitivity.entries
        return np.vstack([self.sensitivity.entries, self.constraints])

    def diff_matrix(self) -> np.ndarray:
        if self.complement_entries is None:
            raise ValueError("plan has no complementary rows")
        D = self.sensitivity.entries - self.complement_entries
        if self.constraints.size == 0:
            return D
        return np.vstack([D, self.constraints])

    def extract(self, delta_r) -> np.ndarray:
        """First-order error estimate solving ``S_min p = delta_r``."""
        rhs = np.asarray(delta_r, dtype=float)
        if self.constraints.size:
            rhs = np.concatenate([rhs, np.zeros(len(self.constraints))])
        return np.linalg.solve(self.matrix(), rhs)


def _null_directions(A: np.ndarray, columns, exp, rtol=1e-10, top=6):
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    s_full = np.zeros(vt.shape[0])
    s_full[: len(s)] = s
    smax = s_full.max(initial=0.0)
    out = []
    for n in np.flatnonzero(s_full <= rtol * max(smax, 1e-300)):
        v = vt[n]
        order = np.argsort(-np.abs(v))[:top]
        lab = (lambda c: column_label(c, exp)) if exp is not None else str
        out.append({lab(columns[j]): float(v[j]) for j in order if abs(v[j]) > 1e-8})
    return out


def _batch_cond(stack: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(stack, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.where(sv[:, -1] > 0, sv[:, 0] / sv[:, -1], np.inf)


def _swap_polish(A: np.ndarray, sel: list[int], fixed: np.ndarray, max_sweeps: int = 20):
    """Single-row swaps that lower the condition number, best swap per position.

    ``fixed`` rows stay at the bottom of every trial matrix.
    """
    sel = list(sel)
    best = condition_number(np.vstack([A[sel], fixed]))
    pool = np.arange(len(A))
    for _ in range(max_sweeps):
        improved = False
        for pos in range(len(sel)):
            cand = pool[~np.isin(pool, sel)]
            if cand.size == 0:
                return sel, best
            base = np.vstack([A[sel], fixed])
            stack = np.repeat(base[None], len(cand), axis=0)
            stack[:, pos] = A[cand]
            conds = _batch_cond(stack)
            j = int(np.argmin(conds))  # ties resolve to the earliest candidate row
            if conds[j] < best * (1 - 1e-9):
                best, sel[pos], improved = float(conds[j]), int(cand[j]), True
        if not improved:
            break
    return sel, best


def select_min_subset(
    S: SensitivityMatrix,
    cond_threshold: float = 1e3,
    rank_rtol: float = 1e-10,
    refine: bool = True,
    constraints: np.ndarray | None = None,
    exp: Experiment | None = None,
) -> SequencePlan:
    """Pick ``N_p`` rows of ``S`` by column-pivoted QR on ``S^T``.

    ``constraints`` (optional) are fixed rows always appended to the system;
    then only ``N_p - len(constraints)`` sequence rows are chosen.  Condition-
    lowering row swaps polish the pivoted choice (``refine``).
    """
    cons = np.zeros((0, S.shape[1])) if constraints is None else np.atleast_2d(constraints)
    n_p = S.shape[1]
    n_need = n_p - len(cons)
    if S.shape[0] < n_need:
        raise SynthesisError(
            f"need at least {n_need} rows, got {S.shape[0]}",
            _null_directions(np.vstack([S.entries, cons]), S.columns, exp, rank_rtol),
        )
    if n_need == 0:
        A = cons
        sel: list[int] = []
    else:
        if len(cons):
            # project out the constrained directions so pivoting ranks what is left
            _, _, vt = np.linalg.svd(cons)
            basis = vt[len(cons):].T
            work = S.entries @ basis
        else:
            work = S.entries
        _, R, perm = pivoted_qr(work.T)
        rank = numerical_rank(R, rank_rtol)
        if rank < n_need:
            raise SynthesisError(
                f"sensitivity matrix has rank {rank + len(cons)} < {n_p}; "
                "additional gates, states or measurements are needed",
                _null_directions(np.vstack([S.entries, cons]), S.columns, exp, rank_rtol),
            )
        sel = [int(i) for i in perm[:n_need]]
        A = np.vstack([S.entries[sel], cons])
    cond = condition_number(A)
    if refine and n_need:
        sel, cond = _swap_polish(S.entries, sel, cons)
        A = np.vstack([S.entries[sel], cons])
    if not np.isfinite(cond) or cond > cond_threshold:
        raise SynthesisError(
            f"best subset has condition number {cond:.4g} above threshold {cond_threshold:g}",
            _null_directions(A, S.columns, exp, 1.0 / cond_threshold),
        )
    sel = sorted(sel)
    sub = S.take_rows(sel)
    A = np.vstack([sub.entries, cons])
    return SequencePlan(
        sub,
        condition_number(A),
        float(np.linalg.norm(np.linalg.inv(A))),
        constraints=cons if len(cons) else np.zeros((0, 0)),
        report={"candidates": S.shape[0]},
    )


def plan_from_rows(
    exp: Experiment,
    rows: Sequence[Row],
    columns: Sequence[ErrorColumn],
    constraints: np.ndarray | None = None,
    complements: Sequence[Row] | None = None,
    include_spam_columns: bool = False,
) -> SequencePlan:
    """Wrap a fixed list of rows (e.g. a stored witness set) as a plan."""
    S = sensitivity_matrix(exp, rows, columns)
    cons = np.zeros((0, 0)) if constraints is None else np.atleast_2d(constraints)
    A = S.entries if cons.size == 0 else np.vstack([S.entries, cons])
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"plan matrix must be square, got {A.shape}")
    cond = condition_number(A)
    inv_norm = float(np.linalg.norm(np.linalg.inv(A))) if np.isfinite(cond) else float("inf")
    plan = SequencePlan(S, cond, inv_norm, constraints=cons)
    if complements is not None:
        C = sensitivity_matrix(exp, complements, columns)
        plan.complements = list(C.rows)
        plan.complement_entries = C.entries
        plan.complement_ideal = C.ideal
        plan.diff_condition = condition_number(plan.diff_matrix())
    return plan


def limit_occurrences(S: SensitivityMatrix, gates: Iterable[int], max_count: int) -> SensitivityMatrix:
    """Drop rows using any of ``gates`` more than ``max_count`` times."""
    gates = set(gates)
    keep = [n for n, r in enumerate(S.rows) if all(r.sequence.count(g) <= max_count for g in gates)]
    return S.take_rows(keep)


def filter_zero_ideal(S: SensitivityMatrix, tol: float = 1e-10) -> tuple[SensitivityMatrix, int]:
    """Keep rows whose ideal response vanishes; also return the removed count."""
    keep = np.flatnonzero(np.abs(S.ideal) < tol)
    return S.take_rows(keep), S.shape[0] - len(keep)


def probe_rows(exp: Experiment, target_gate: int, max_length: int = 2) -> list[Row]:
    """Rows whose ideal sequence returns the initial state to itself.

    Only sequences containing ``target_gate`` are considered, so the probe
    responds to that gate's stochastic errors.  The shortest such sequence
    is used, once per (state, measurement) pair where the ideal response is
    non-zero.
    """
    out = []
    for seq in enumerate_sequences(exp, max_length):
        if target_gate not in seq:
            continue
        U = sequence_unitary(seq, None, exp.gate_set)
        for i, rho in enumerate(exp.initial_states):
            if np.max(np.abs(U @ rho @ U.conj().T - rho)) > 1e-12:
                continue
            for m, M in enumerate(exp.measurements):
                if abs(np.real(np.trace(rho @ M))) > 1e-10:
                    out.append(Row(tuple(seq), i, m))
        if out:
            break
    return out


def select_spam_insensitive(
    S_ext: SensitivityMatrix,
    protected: Callable[[ErrorColumn], bool] | Sequence[ErrorColumn],
    gate_cols: Sequence[ErrorColumn],
    cond_threshold: float = 1e3,
    budget: int = 5000,
    tol: float = 1e-8,
    exp: Experiment | None = None,
) -> SequencePlan:
    """Minimal plan over ``gate_cols`` using only rows blind to protected columns.

    Rows with any protected entry above ``tol`` are discarded; the rest are
    ranked by pivoted QR and the best ``budget`` of them go through
    :func:`select_min_subset`.  On failure the error's ``detail`` names the
    protected columns that would have to be given up, found greedily.
    """
    if callable(protected):
        prot = [c for c in S_ext.columns if protected(c)]
    else:
        prot = [ErrorColumn(*c) for c in protected]
    G = S_ext.take_columns(gate_cols)
    P = S_ext.take_columns(prot).entries if prot else np.zeros((S_ext.shape[0], 0))
    clean = np.flatnonzero(np.all(np.abs(P) < tol, axis=1))
    n_p = len(gate_cols)

    def rank_of(rows):
        if len(rows) == 0:
            return 0
        _, R, _ = pivoted_qr(G.entries[rows].T)
        return numerical_rank(R)

    cand = G.take_rows(clean)
    if len(clean) >= n_p:
        _, R, perm = pivoted_qr(cand.entries.T)
        order = list(perm[: min(budget, len(perm))])
        # keep the remaining budget in enumeration order after the pivots
        rest = [i for i in range(len(clean)) if i not in set(order)]
        order += rest[: max(0, budget - len(order))]
        try:
            plan = select_min_subset(cand.take_rows(sorted(order)), cond_threshold, exp=exp)
        except SynthesisError:
            pass
        else:
            plan.report.update({"protected": len(prot), "clean_rows": len(clean)})
            return plan
    if rank_of(np.arange(S_ext.shape[0])) < n_p:
        raise SynthesisError(
            "candidate rows are rank deficient even without protected columns",
            _null_directions(G.entries, list(gate_cols), exp),
            detail={"clean_rows": len(clean)},
        )
    released = []
    remaining = list(range(len(prot)))
    current = clean
    while rank_of(current) < n_p and remaining:
        best, best_rank, best_rows = None, -1, None
        for j in remaining:
            keep = [i for i in remaining if i != j]
            rows = np.flatnonzero(np.all(np.abs(P[:, keep]) < tol, axis=1))
            r = rank_of(rows)
            if r > best_rank:
                best, best_rank, best_rows = j, r, rows
        released.append(prot[best])
        remaining.remove(best)
        current = best_rows
    lab = (lambda c: column_label(c, exp)) if exp is not None else str
    raise SynthesisError(
        "no plan is insensitive to every protected column",
        detail={
            "clean_rows": len(clean),
            "must_release": [lab(c) for c in released],
            "still_protected": [lab(prot[i]) for i in remaining],
        },
    )


def build_complementary_pairs(
    plan: SequencePlan,
    candidates: SensitivityMatrix,
    cond_threshold: float = 1e3,
    final_states: Sequence[np.ndarray] | None = None,
    max_sweeps: int = 10,
) -> SequencePlan:
    """Assign a same-measurement partner to every plan row.

    Starts from the least sensitive admissible candidate for each row and
    then does coordinate descent on ``cond(S1 - S2)``.  ``final_states``,
    if given, holds the ideal output state of every plan row followed by
    every candidate row; pairs must then agree on it.
    """
    S1 = plan.sensitivity.entries
    cols = plan.columns
    C = candidates.take_columns(cols)
    n = len(plan.rows)
    admissible = []
    for r, row in enumerate(plan.rows):
        ok = [
            j for j, c in enumerate(C.rows)
            if c.measurement == row.measurement and c.state == row.state and c != row
        ]
        if final_states is not None:
            ref = final_states[r]
            ok = [j for j in ok if np.max(np.abs(final_states[n + j] - ref)) < 1e-10]
        if not ok:
            raise SynthesisError(f"no admissible complement for row {r} {row}")
        admissible.append(ok)
    norms = np.linalg.norm(C.entries, axis=1)
    choice = [min(ok, key=lambda j: (norms[j], j)) for ok in admissible]
    cons = plan.constraints

    def cond_of(ch):
        D = S1 - C.entries[ch]
        if cons.size:
            D = np.vstack([D, cons])
        try:
            return condition_number(D)
        except ValueError:
            return float("inf")

    best = cond_of(choice)
    for _ in range(max_sweeps):
        improved = False
        for r in range(n):
            for j in admissible[r]:
                if j == choice[r]:
                    continue
                trial = list(choice)
                trial[r] = j
                c = cond_of(trial)
                if c < best * (1 - 1e-12):
                    best, choice, improved = c, trial, True
        if not improved:
            break
    if not np.isfinite(best) or best > cond_threshold:
        raise SynthesisError(f"best pairing has condition number {best:.4g} above {cond_threshold:g}")
    return replace(
        plan,
        complements=[C.rows[j] for j in choice],
        complement_entries=C.entries[choice],
        complement_ideal=C.ideal[choice],
        diff_condition=best,
    )


def gauge_constraint(columns: Sequence[ErrorColumn], fixed: Sequence[ErrorColumn], weight: float = 1.0) -> np.ndarray:
    """Rows pinning selected error parameters to zero, one per entry of ``fixed``."""
    pos = {c: n for n, c in enumerate(columns)}
    out = np.zeros((len(fixed), len(columns)))
    for n, c in enumerate(fixed):
        out[n, pos[ErrorColumn(*c)]] = weight
    return out
