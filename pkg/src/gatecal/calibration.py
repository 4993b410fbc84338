"""Iterative calibration: residuals, finite-difference Jacobians and a
bounded Levenberg-Marquardt loop, plus synthetic backends and campaigns.

A backend exposes ``n_params``, ``lower``/``upper`` bounds, the error-free
setting ``q_ideal``, ``responses(q, rows)`` and ``metrics(q)``.  Campaigns
additionally call ``sample_start(rng, scale)``.
"""
from __future__ import annotations

import hashlib
import io
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ErrorParameters,
    Experiment,
    PauliChannel,
    apply_pauli_channel,
    batch_responses,
    coherent_error_op,
    sequence_unitary,
)
from .linalg import avg_gate_fidelity
from .sequences import ErrorColumn, Row, SequencePlan, _pad, sensitivity_matrix

__all__ = [
    "CalibrationOptions",
    "IterationRecord",
    "CalibrationTrace",
    "ConvergenceError",
    "SyntheticBackend",
    "LinearBackend",
    "QuadraticBackend",
    "CoherentBackend",
    "DepolarizingModel",
    "update_depolarizing_model",
    "residual",
    "fd_jacobian",
    "levenberg_marquardt",
    "lma_minimize",
    "CampaignRecord",
    "CampaignReport",
    "run_campaign",
]

TRACE_SCHEMA = 1


class ConvergenceError(RuntimeError):
    pass


@dataclass
class CalibrationOptions:
    max_iterations: int = 50
    tol: float = 1e-6
    lambda_init: float = 1e-3
    max_rejections: int = 12
    rel_step: float = 1e-4
    stall_window: int = 5
    stall_rel: float = 1e-4
    use_pairs: bool = False
    use_probes: bool = False
    depolarizing_model: bool = False
    drop_probes_on_stall: bool = False
    shot_noise: float = 0.0
    seed: int = 0


@dataclass
class IterationRecord:
    iteration: int
    residual_norm: float
    damping: float
    accepted: bool
    infidelity: float | None = None
    leakage: float | None = None
    q_digest: str = ""
    event: str = ""


@dataclass
class CalibrationTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    iterations: int = 0

    def accepted_norms(self) -> list[float]:
        return [r.residual_norm for r in self.records if r.accepted]

    def to_jsonl(self, digest: str = "") -> str:
        out = io.StringIO()
        head = {"schema_version": TRACE_SCHEMA, "kind": "calibration_trace", "config_digest": digest}
        out.write(json.dumps(head) + "\n")
        for r in self.records:
            out.write(json.dumps(asdict(r)) + "\n")
        out.write(json.dumps({"status": self.status, "iterations": self.iterations}) + "\n")
        return out.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "CalibrationTrace":
        lines = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].get("kind") != "calibration_trace" or lines[0].get("schema_version") != TRACE_SCHEMA:
            raise ValueError("not a calibration trace")
        tail = lines[-1]
        return cls([IterationRecord(**d) for d in lines[1:-1]], tail["status"], tail["iterations"])


def _digest(q: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(q, dtype=float).tobytes()).hexdigest()[:12]


# ---------------------------------------------------------------- backends


class SyntheticBackend:
    """Error parameters ``p = mixing @ (q - q_ideal)`` on a set of columns.

    Subclasses decide how responses depend on ``p``.  ``offsets`` adds a
    constant per measurement index to every response (readout bias).
    """

    def __init__(
        self,
        exp: Experiment,
        columns: Sequence[ErrorColumn],
        mixing: np.ndarray | None = None,
        q_ideal: np.ndarray | None = None,
        bound: float = 2.0,
        offsets: Sequence[float] | None = None,
    ):
        self.exp = exp
        self.columns = [ErrorColumn(*c) for c in columns]
        n = len(self.columns)
        self.mixing = np.eye(n) if mixing is None else np.asarray(mixing, dtype=float)
        if self.mixing.shape != (n, n) or abs(np.linalg.det(self.mixing)) < 1e-12:
            raise ValueError("mixing must be an invertible square matrix")
        self.q_ideal = np.zeros(n) if q_ideal is None else np.asarray(q_ideal, dtype=float)
        self.lower = self.q_ideal - bound
        self.upper = self.q_ideal + bound
        self.offsets = np.zeros(exp.n_measurements) if offsets is None else np.asarray(offsets, dtype=float)
        self._sens = {}

    @classmethod
    def random(cls, exp, columns, seed: int = 0, spread: float = 0.3, **kw):
        """Backend with a random, well-conditioned ``mixing`` close to the identity."""
        rng = np.random.default_rng(seed)
        n = len(columns)
        A = rng.normal(size=(n, n))
        mixing = np.eye(n) + spread * A / np.linalg.norm(A, 2)
        return cls(exp, columns, mixing=mixing, q_ideal=rng.uniform(-0.5, 0.5, n), **kw)

    @property
    def n_params(self) -> int:
        return len(self.columns)

    def error_vector(self, q) -> np.ndarray:
        return self.mixing @ (np.asarray(q, dtype=float) - self.q_ideal)

    def error_parameters(self, q) -> ErrorParameters:
        p = ErrorParameters.zeros(self.exp.n_gates, self.exp.d)
        for c, v in zip(self.columns, self.error_vector(q)):
            p.values[c.block, c.k - 1] = v
        return p

    def q_from_error(self, p_vec) -> np.ndarray:
        return self.q_ideal + np.linalg.solve(self.mixing, p_vec)

    def _sensitivity(self, rows):
        key = tuple(rows)
        if key not in self._sens:
            self._sens[key] = sensitivity_matrix(self.exp, rows, self.columns)
        return self._sens[key]

    def responses(self, q, rows) -> np.ndarray:
        raise NotImplementedError

    def _offset(self, rows):
        return self.offsets[[r.measurement for r in rows]]

    def gate_infidelities(self, q) -> dict:
        p = self.error_parameters(q)
        basis = self.exp.basis
        out = {}
        for g in sorted({c.block for c in self.columns}):
            E = coherent_error_op(p.values[g], basis)
            out[g] = 1 - avg_gate_fidelity(E, np.eye(self.exp.d))
        return out

    def metrics(self, q) -> dict:
        inf = max(self.gate_infidelities(q).values(), default=0.0)
        return {"infidelity": inf, "coherent_infidelity": inf, "leakage": 0.0}

    def sample_start(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        """Random start whose coherent infidelity is uniform in ``[0, scale]``."""
        target = rng.uniform(0, scale)
        direction = rng.normal(size=self.n_params)
        direction /= np.linalg.norm(direction)
        p_dir = self.mixing @ direction

        def inf(t):
            return self.metrics(self.q_ideal + t * direction)["coherent_infidelity"]

        # p per unit t; infidelity ~ 0.8 |p|^2 for two qubits at small |p|
        hi = np.sqrt(max(target, 1e-300)) * 2 / np.linalg.norm(p_dir)
        while inf(hi) < target and hi < 1e3:
            hi *= 2
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if inf(mid) < target else (lo, mid)
        q = self.q_ideal + 0.5 * (lo + hi) * direction
        return np.clip(q, self.lower, self.upper)


class LinearBackend(SyntheticBackend):
    """Responses are exactly first order in ``p``: ``R0 + S p + offset``."""

    def responses(self, q, rows) -> np.ndarray:
        rows = list(rows)
        S = self._sensitivity(rows)
        return S.ideal + S.entries @ self.error_vector(q) + self._offset(rows)

    def jacobian(self, rows) -> np.ndarray:
        return self._sensitivity(list(rows)).entries @ self.mixing


class QuadraticBackend(LinearBackend):
    """Linear responses plus a fixed random quadratic form per row."""

    def __init__(self, *args, curvature: float = 0.5, seed: int = 0, **kw):
        super().__init__(*args, **kw)
        self.curvature = curvature
        self.seed = seed

    def _form(self, row) -> np.ndarray:
        key = zlib.crc32(repr(tuple(row)).encode())
        rng = np.random.default_rng([self.seed, key])
        B = rng.normal(size=(self.n_params, self.n_params))
        return self.curvature * (B + B.T) / (2 * self.n_params)

    def responses(self, q, rows) -> np.ndarray:
        rows = list(rows)
        dq = np.asarray(q, dtype=float) - self.q_ideal
        quad = np.array([dq @ self._form(r) @ dq for r in rows])
        return super().responses(q, rows) + quad

    def analytic_jacobian(self, q, rows) -> np.ndarray:
        rows = list(rows)
        dq = np.asarray(q, dtype=float) - self.q_ideal
        return self.jacobian(rows) + np.array([2 * self._form(r) @ dq for r in rows])


class CoherentBackend(SyntheticBackend):
    """Exact unitary simulation of the coherent error model.

    ``stochastic`` optionally attaches a Pauli channel that acts after every
    occurrence of ``stochastic_gate``; responses are then computed with the
    density matrix.
    """

    def __init__(self, *args, stochastic: PauliChannel | None = None, stochastic_gate: int = 0, **kw):
        super().__init__(*args, **kw)
        self.stochastic = stochastic
        self.stochastic_gate = stochastic_gate

    def responses(self, q, rows) -> np.ndarray:
        rows = list(rows)
        p = self.error_parameters(q)
        if self.stochastic is None:
            seqs = _pad(rows)
            out = batch_responses(self.exp, seqs, [r.state for r in rows], [r.measurement for r in rows], p)
        else:
            out = self._noisy_responses(p, rows)
        return out + self._offset(rows)

    def _noisy_responses(self, p, rows) -> np.ndarray:
        exp = self.exp
        basis = exp.basis
        ops = np.einsum(
            "gij,gjk->gik", exp.gate_set.gates, np.array([coherent_error_op(v, basis) for v in p.values])
        )
        out = np.empty(len(rows))
        for n, r in enumerate(rows):
            rho = exp.initial_states[r.state]
            for g in r.sequence:
                rho = ops[g] @ rho @ ops[g].conj().T
                if g == self.stochastic_gate:
                    rho = apply_pauli_channel(self.stochastic, rho, basis)
            out[n] = np.real(np.trace(rho @ exp.measurements[r.measurement]))
        return out

    def metrics(self, q) -> dict:
        m = super().metrics(q)
        if self.stochastic is not None:
            d = self.exp.d
            p = self.error_parameters(q)
            E = coherent_error_op(p.values[self.stochastic_gate], self.exp.basis)
            basis = self.exp.basis
            # process fidelity of channel after unitary error, then average fidelity
            fe = sum(w * abs(np.trace(basis[k] @ E)) ** 2 for k, w in enumerate(self.stochastic.weights)) / d**2
            m["infidelity"] = float(1 - (d * fe + 1) / (d + 1))
        return m


# -------------------------------------------------- depolarizing probe model


@dataclass
class DepolarizingModel:
    """Per-probe-row depolarizing strength used to predict probe responses."""

    exp: Experiment
    target_gate: int = 0
    strengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    predicted: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _occurrences(row: Row, gate: int) -> int:
    return sum(1 for g in row.sequence if g == gate)


def update_depolarizing_model(state: DepolarizingModel, infidelity: float, plan: SequencePlan) -> DepolarizingModel:
    """Strength of every probe row = ``infidelity`` x occurrences of the target gate."""
    if not 0 <= infidelity <= 1:
        raise ValueError("infidelity must lie in [0, 1]")
    exp = state.exp
    strengths = np.array([infidelity * _occurrences(r, state.target_gate) for r in plan.probe_rows], dtype=float)
    basis = exp.basis
    predicted = []
    d = exp.d
    for r, s in zip(plan.probe_rows, strengths):
        U = sequence_unitary(r.sequence, None, exp.gate_set)
        rho = U @ exp.initial_states[r.state] @ U.conj().T
        # beyond (d - 1) / d the channel would overshoot the fully mixed state
        ch = PauliChannel.depolarizing(min(s, (d - 1) / d), d)
        rho = apply_pauli_channel(ch, rho, basis)
        predicted.append(float(np.real(np.trace(rho @ exp.measurements[r.measurement]))))
    return DepolarizingModel(exp, state.target_gate, strengths, np.array(predicted))


# ------------------------------------------------------------ the LMA loop


def residual(
    backend,
    plan: SequencePlan,
    q,
    options: CalibrationOptions | None = None,
    probe_targets: np.ndarray | None = None,
) -> np.ndarray:
    """``R(q) - R0`` over the plan rows, differenced over pairs if enabled.

    Probe rows are appended when ``options.use_probes``; their targets are
    ``probe_targets`` (default: the stored ideal responses).
    """
    opt = options or CalibrationOptions()
    q = np.asarray(q, dtype=float)
    if np.any(q < backend.lower - 1e-12) or np.any(q > backend.upper + 1e-12):
        raise ValueError("q outside the parameter bounds")
    rows = list(plan.rows)
    r = backend.responses(q, rows) - plan.sensitivity.ideal
    if opt.use_pairs:
        if plan.complements is None:
            raise ValueError("plan has no complementary rows")
        r = r - (backend.responses(q, plan.complements) - plan.complement_ideal)
    if opt.use_probes and plan.probe_rows:
        target = np.asarray(plan.probe_ideal if probe_targets is None else probe_targets, dtype=float)
        r = np.concatenate([r, backend.responses(q, plan.probe_rows) - target])
    if opt.shot_noise > 0:
        rng = np.random.default_rng([opt.seed, zlib.crc32(q.tobytes())])
        r = r + rng.normal(0, opt.shot_noise, r.shape)
    if not np.all(np.isfinite(r)):
        bad = int(np.flatnonzero(~np.isfinite(r))[0])
        raise FloatingPointError(f"non-finite response in row {bad}")
    return r


def fd_jacobian(fun: Callable, q, lower, upper, rel_step: float = 1e-4, f0=None):
    """Central-difference Jacobian with one-sided steps near the bounds.

    Returns ``(J, one_sided)`` where ``one_sided`` flags the parameters that
    could not use a central step.
    """
    q = np.asarray(q, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    h = rel_step * (upper - lower)
    if np.any(h <= 0) or np.any(q + h == q):
        raise FloatingPointError("finite-difference step underflow")
    cols = []
    one_sided = np.zeros(len(q), dtype=bool)
    for j in range(len(q)):
        up = q[j] + h[j] <= upper[j]
        down = q[j] - h[j] >= lower[j]
        qp = q.copy()
        qm = q.copy()
        if up and down:
            qp[j] += h[j]
            qm[j] -= h[j]
            cols.append((fun(qp) - fun(qm)) / (2 * h[j]))
            continue
        one_sided[j] = True
        base = fun(q) if f0 is None else f0
        if up:
            qp[j] += h[j]
            cols.append((fun(qp) - base) / h[j])
        else:
            qm[j] -= h[j]
            cols.append((base - fun(qm)) / h[j])
    return np.array(cols).T, one_sided


def levenberg_marquardt(
    fun: Callable,
    q0,
    lower,
    upper,
    options: CalibrationOptions | None = None,
    metrics: Callable | None = None,
    jacobian: Callable | None = None,
    on_stall: Callable | None = None,
):
    """Minimise ``|fun(q)|^2`` inside a box.

    ``on_stall`` may return a new residual function to continue with (used
    to drop probe rows); returning ``None`` ends the run as stalled.
    """
    opt = options or CalibrationOptions()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    q = np.clip(np.asarray(q0, dtype=float), lower, upper)
    trace = CalibrationTrace()
    lam = opt.lambda_init
    r = fun(q)
    cost = float(r @ r)

    def record(it, accepted, event=""):
        m = metrics(q) if metrics else {}
        trace.records.append(
            IterationRecord(it, float(np.sqrt(cost)), lam, accepted, m.get("infidelity"), m.get("leakage"), _digest(q), event)
        )

    record(0, True, "start")
    if np.sqrt(cost) < opt.tol:
        trace.status = "converged"
        return q, trace
    history = [np.sqrt(cost)]
    for it in range(1, opt.max_iterations + 1):
        trace.iterations = it
        if jacobian is not None:
            J = jacobian(q)
        else:
            J, _ = fd_jacobian(fun, q, lower, upper, opt.rel_step, f0=r)
        if not np.all(np.isfinite(J)) or np.linalg.matrix_rank(J) == 0:
            trace.status = "rank_collapse"
            record(it, False, "jacobian has no usable direction")
            return q, trace
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        accepted = False
        for _ in range(opt.max_rejections):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            q_new = np.clip(q + step, lower, upper)
            r_new = fun(q_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                q, r, cost = q_new, r_new, cost_new
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
        record(it, accepted)
        if not accepted:
            trace.status = "no_descent"
            return q, trace
        norm = np.sqrt(cost)
        history.append(norm)
        if norm < opt.tol:
            trace.status = "converged"
            return q, trace
        w = opt.stall_window
        if len(history) > w and history[-1 - w] - history[-1] < opt.stall_rel * history[-1 - w]:
            new_fun = on_stall(q) if on_stall else None
            if new_fun is None:
                trace.status = "stalled"
                return q, trace
            fun = new_fun
            r = fun(q)
            cost = float(r @ r)
            history = [np.sqrt(cost)]
            trace.records[-1].event = "probe rows dropped"
    trace.status = "max_iterations"
    return q, trace


def lma_minimize(backend, plan: SequencePlan, q_init, options: CalibrationOptions | None = None):
    """Calibrate ``backend`` against ``plan`` starting from ``q_init``."""
    opt = options or CalibrationOptions()
    q_init = np.asarray(q_init, dtype=float)
    if np.any(q_init < backend.lower) or np.any(q_init > backend.upper):
        raise ValueError("q_init outside the parameter bounds")
    state = {"probes": opt.use_probes, "model": None}
    if opt.use_probes and opt.depolarizing_model:
        state["model"] = DepolarizingModel(backend.exp)

    def make_fun():
        o = CalibrationOptions(**{**asdict(opt), "use_probes": state["probes"]})

        def fun(q):
            targets = None
            if state["probes"] and state["model"] is not None:
                inf = backend.metrics(q)["infidelity"]
                targets = update_depolarizing_model(state["model"], min(max(inf, 0.0), 1.0), plan).predicted
            return residual(backend, plan, q, o, targets)

        return fun

    def on_stall(q):
        if opt.drop_probes_on_stall and state["probes"]:
            state["probes"] = False
            return make_fun()
        return None

    return levenberg_marquardt(make_fun(), q_init, backend.lower, backend.upper, opt, backend.metrics, on_stall=on_stall)


# --------------------------------------------------------------- campaigns

_REPORT_FIELDS = ["start", "initial_infidelity", "final_infidelity", "final_leakage", "iterations", "success", "status"]


@dataclass
class CampaignRecord:
    start: int
    initial_infidelity: float
    final_infidelity: float
    final_leakage: float
    iterations: int
    success: bool
    status: str


@dataclass
class CampaignReport:
    records: list
    threshold: float
    seed: int
    scale: float

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.records])) if self.records else 0.0

    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.records])

    def bins(self, n_bins: int = 10):
        """Success rate per equal-width bin of initial infidelity."""
        x = np.array([r.initial_infidelity for r in self.records])
        ok = np.array([r.success for r in self.records])
        edges = np.linspace(0, max(x.max(initial=0.0), 1e-12), n_bins + 1)
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
        rows = []
        for b in range(n_bins):
            sel = idx == b
            rows.append((float(edges[b]), float(edges[b + 1]), int(sel.sum()), float(ok[sel].mean()) if sel.any() else float("nan")))
        return rows

    def iteration_histogram(self):
        it = self.iterations()
        vals, counts = np.unique(it, return_counts=True)
        return list(zip(vals.tolist(), counts.tolist()))

    def to_tsv(self) -> str:
        lines = ["\t".join(_REPORT_FIELDS)]
        for r in self.records:
            lines.append(
                "\t".join(
                    [str(r.start), repr(r.initial_infidelity), repr(r.final_infidelity), repr(r.final_leakage),
                     str(r.iterations), str(int(r.success)), r.status]
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def records_from_tsv(text: str) -> list:
        lines = text.splitlines()
        if not lines or lines[0].split("\t") != _REPORT_FIELDS:
            raise ValueError("not a campaign table")
        out = []
        for ln in lines[1:]:
            c = ln.split("\t")
            out.append(CampaignRecord(int(c[0]), float(c[1]), float(c[2]), float(c[3]), int(c[4]), c[5] == "1", c[6]))
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": TRACE_SCHEMA, "kind": "campaign_report", "threshold": self.threshold,
             "seed": self.seed, "scale": self.scale, "records": [asdict(r) for r in self.records]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CampaignReport":
        d = json.loads(text)
        if d.get("kind") != "campaign_report":
            raise ValueError("not a campaign report")
        return cls([CampaignRecord(**r) for r in d["records"]], d["threshold"], d["seed"], d["scale"])


def run_campaign(
    backend_factory: Callable[[int], object],
    plan: SequencePlan,
    n_starts: int,
    perturbation_scale: float,
    seed: int = 0,
    options: CalibrationOptions | None = None,
    threshold: float = 1e-4,
    metric: str = "coherent_infidelity",
    threads: int = 1,
) -> CampaignReport:
    """Calibrate from ``n_starts`` random starting points.

    Start ``i`` draws from ``default_rng([seed, i])`` so results do not
    depend on ``threads``.  A run succeeds if ``metric`` ends below
    ``threshold``.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    opt = options or CalibrationOptions()

    def one(i):
        rng = np.random.default_rng([seed, i])
        backend = backend_factory(i)
        q0 = backend.sample_start(rng, perturbation_scale) if perturbation_scale > 0 else backend.q_ideal.copy()
        m0 = backend.metrics(q0)
        try:
            q, trace = lma_minimize(backend, plan, q0, opt)
            status, iters = trace.status, trace.iterations
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            q, status, iters = q0, f"error: {exc}", 0
        m = backend.metrics(q)
        return CampaignRecord(
            i, float(m0[metric]), float(m[metric]), float(m.get("leakage", 0.0)), iters, bool(m[metric] < threshold), status
        )

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, range(n_starts)))
    else:
        records = [one(i) for i in range(n_starts)]
    return CampaignReport(records, threshold, seed, perturbation_scale)
