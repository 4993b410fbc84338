"""Command line entry point: ``gatecal <verb> --config run.json``.

Verbs: ``synth``, ``calibrate``, ``campaign``, ``tables``, ``validate``.
Exit codes: 0 success, 2 synthesis or rank failure, 3 convergence
failure, 4 I/O or configuration error.  The output directory is taken
from ``--out``, else ``$GATECAL_OUT``, else the config's ``out`` entry.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import calibration as cal
from .errors import Experiment, GateSet
from .gatesets import single_qubit_paulis, two_qubit_experiment
from .sequences import (
    ErrorColumn,
    SynthesisError,
    all_rows,
    build_complementary_pairs,
    filter_zero_ideal,
    limit_occurrences,
    gate_columns,
    probe_rows,
    select_min_subset,
    select_spam_insensitive,
    sensitivity_matrix,
)
from .tables import emit_table, experiment_digest, load_plan, render_markdown, render_tsv, save_plan

__all__ = ["RunConfig", "ConfigError", "build_experiment", "main"]

EXIT_OK, EXIT_SYNTH, EXIT_CONVERGE, EXIT_IO = 0, 2, 3, 4
SCHEMA_VERSION = 1
ENV_OUT = "GATECAL_OUT"

DEFAULTS = {
    "experiment": {"preset": "two_qubit", "max_length": 4},
    "columns": "g1",
    "synthesis": {
        "mode": "min_subset",
        "witness": None,
        "cond_threshold": 1e3,
        "zero_ideal": True,
        "probes": True,
        "pairs": False,
        "protect_single_qubit_spam": False,
        "unprotected": ["m,01"],
        "budget": 5000,
        "max_repeats": 1,
    },
    "plan": None,
    "backend": "synthetic",
    "synthetic": {"kind": "coherent", "seed": 1, "offsets": None, "spread": 0.3},
    "stqubit": {"pulses": None},
    "solver": {},
    "calibrate": {"scale": 0.01, "fidelity_threshold": 0.996},
    "campaign": {"n_starts": 100, "scale": 0.2, "threshold": 1e-4, "metric": "coherent_infidelity", "bins": 10},
    "seed": 0,
    "threads": 1,
    "out": "gatecal-out",
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict) and k not in ("experiment", "solver"):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(_merge(DEFAULTS, d))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def __getitem__(self, key):
        return self.data[key]

    def digest(self) -> str:
        d = {k: v for k, v in self.data.items() if k not in ("out", "threads")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def solver_options(self) -> cal.CalibrationOptions:
        try:
            return cal.CalibrationOptions(**{"seed": self.data["seed"], **self.data["solver"]})
        except TypeError as exc:
            raise ConfigError(f"bad solver option: {exc}") from exc


def _matrix(obj) -> np.ndarray:
    if isinstance(obj, dict):
        return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj.get("im", 0.0), dtype=float)
    return np.asarray(obj, dtype=complex)


def build_experiment(spec: dict) -> Experiment:
    """Preset ``{"preset": "two_qubit"}`` or an explicit declaration.

    Explicit form: ``gates`` (label -> matrix), optional ``identity`` label,
    ``initial_states`` and ``measurements`` (label -> matrix), ``max_length``.
    Matrices are nested real lists or ``{"re": ..., "im": ...}``.
    """
    try:
        if spec.get("preset") == "two_qubit":
            return two_qubit_experiment(int(spec.get("max_length", 4)))
        if "preset" in spec:
            raise ConfigError(f"unknown preset {spec['preset']!r}")
        labels = list(spec["gates"])
        gates = np.array([_matrix(spec["gates"][k]) for k in labels])
        ident = spec.get("identity")
        gs = GateSet(gates, tuple(labels), labels.index(ident) if ident else None)
        states = spec["initial_states"]
        meas = spec["measurements"]
        return Experiment(
            gs,
            tuple(_matrix(v) for v in states.values()),
            tuple(_matrix(v) for v in meas.values()),
            max_length=int(spec.get("max_length", 4)),
            state_labels=tuple(states),
            measurement_labels=tuple(meas),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad experiment declaration: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad experiment declaration: {exc}") from exc


def _columns(cfg: RunConfig, exp: Experiment):
    kind = cfg["columns"]
    if kind == "all":
        return gate_columns(exp)
    if kind == "full":
        cols = gate_columns(exp, [0])
        cols += gate_columns(exp, [1, 2], single_qubit_paulis(2, 0)) + gate_columns(exp, [3, 4], single_qubit_paulis(2, 1))
        return cols
    if isinstance(kind, str) and kind in exp.gate_set.labels:
        return gate_columns(exp, [exp.gate_set.index(kind)])
    if isinstance(kind, list):
        return gate_columns(exp, [exp.gate_set.index(g) for g in kind])
    raise ConfigError(f"unknown column selection {kind!r}")


def _out_dir(cfg: RunConfig, flag: str | None) -> Path:
    out = flag or os.environ.get(ENV_OUT) or cfg["out"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _header(cfg: RunConfig) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest()}


def _spam_protected(exp: Experiment, unprotected):
    from .sequences import column_label

    sq = single_qubit_paulis(exp.gate_set.n_qubits, 0) + single_qubit_paulis(exp.gate_set.n_qubits, 1)
    cols = [ErrorColumn(exp.init_block(i), k) for i in range(exp.n_states) for k in sq]
    cols += [ErrorColumn(exp.meas_block(m), k) for m in range(exp.n_measurements) for k in sq]
    skip = set(unprotected)
    keep = []
    for c in cols:
        lab = column_label(c, exp)
        generic = lab.split(",")[0][0] + "," + lab.split(",")[1]
        if lab not in skip and generic not in skip:
            keep.append(c)
    return keep


def synthesize(cfg: RunConfig, exp: Experiment):
    """Plan according to ``cfg["synthesis"]``; raises :class:`SynthesisError`."""
    from .witness import witness_plan

    syn = cfg["synthesis"]
    if syn["mode"] == "witness":
        return witness_plan(syn["witness"], exp)
    cols = _columns(cfg, exp)
    rows = all_rows(exp)
    protected = _spam_protected(exp, syn["unprotected"]) if syn["protect_single_qubit_spam"] else []
    if protected:
        pre = sensitivity_matrix(exp, rows, protected)
        clean = np.flatnonzero(np.all(np.abs(pre.entries) < 1e-8, axis=1))
        rows = [rows[i] for i in clean]
    S = sensitivity_matrix(exp, rows, cols + protected)
    removed = 0
    if syn["zero_ideal"]:
        S, removed = filter_zero_ideal(S)
    # SPAM-blind rows often need repeated gates, so the cap is skipped there
    if syn["max_repeats"] is not None and not protected:
        S = limit_occurrences(S, {c.block for c in cols}, int(syn["max_repeats"]))
    if protected:
        plan = select_spam_insensitive(S, protected, cols, syn["cond_threshold"], syn["budget"], exp=exp)
    else:
        plan = select_min_subset(S.take_columns(cols), syn["cond_threshold"], exp=exp)
    plan.report["zero_ideal_removed"] = removed
    if syn["pairs"]:
        plan = build_complementary_pairs(plan, S.take_columns(cols), syn["cond_threshold"])
    if syn["probes"] and cols and len({c.block for c in cols}) >= 1:
        plan.probe_rows = probe_rows(exp, cols[0].block)
        ideal = sensitivity_matrix(exp, plan.probe_rows, []).ideal
        plan.probe_ideal = [float(x) for x in ideal]
    return plan


def _plan_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg["plan"]) if cfg["plan"] else out / "plan.json"


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    exp = build_experiment(cfg["experiment"])
    try:
        plan = synthesize(cfg, exp)
    except SynthesisError as exc:
        print(exc.report(), file=sys.stderr)
        return EXIT_SYNTH
    save_plan(plan, exp, out / "plan.json", extra={"config_digest": cfg.digest()})
    _write_tables(cfg, plan, exp, out)
    diff = f" diff-condition={plan.diff_condition:.4f}" if plan.diff_condition is not None else ""
    print(f"rows={len(plan.rows)} condition={plan.condition_number:.4f} |S^-1|={plan.inv_norm:.4f}{diff}")
    return EXIT_OK


def _write_tables(cfg, plan, exp, out: Path) -> None:
    doc = emit_table(plan, exp)
    tag = f"schema_version={SCHEMA_VERSION} config_digest={cfg.digest()}"
    _write(out / "plan_table.md", f"<!-- {tag} -->\n" + render_markdown(doc))
    _write(out / "plan_table.tsv", f"# {tag}\n" + render_tsv(doc))


def _builtin_pulses():
    from .stqubit import load_pulses

    with resources.as_file(resources.files("gatecal").joinpath("data/cnot_pulse.json")) as p:
        return load_pulses(p)


def make_backend(cfg: RunConfig, exp: Experiment, plan, index: int = 0):
    """Backend for the config; synthetic backends are identical for every ``index``."""
    name = cfg["backend"]
    if name == "synthetic":
        s = cfg["synthetic"]
        kinds = {"coherent": cal.CoherentBackend, "linear": cal.LinearBackend, "quadratic": cal.QuadraticBackend}
        if s["kind"] not in kinds:
            raise ConfigError(f"unknown synthetic backend {s['kind']!r}")
        return kinds[s["kind"]].random(exp, plan.columns, seed=s["seed"], spread=s["spread"], offsets=s["offsets"])
    if name == "st-qubit":
        from .stqubit import STQubitBackend, load_pulses

        if any(c.block != 0 for c in plan.columns):
            raise ConfigError("the st-qubit backend calibrates g1 only; the plan tracks other gates")
        path = cfg["stqubit"]["pulses"]
        blocks, config = load_pulses(path) if path else _builtin_pulses()
        return STQubitBackend(blocks["g1"], config)
    raise ConfigError(f"unknown backend {name!r}")


def _load_plan(cfg, exp, out):
    path = _plan_path(cfg, out)
    try:
        return load_plan(path, exp)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read plan: {exc}") from exc


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    exp = build_experiment(cfg["experiment"])
    plan = _load_plan(cfg, exp, out)
    backend = make_backend(cfg, exp, plan)
    opt = cfg.solver_options()
    scale = cfg["calibrate"]["scale"]
    rng = np.random.default_rng([cfg["seed"], 0])
    q0 = backend.sample_start(rng, scale) if scale > 0 else backend.q_ideal.copy()
    m0 = backend.metrics(q0)
    q, trace = cal.lma_minimize(backend, plan, q0, opt)
    m = backend.metrics(q)
    fidelity = 1 - m["infidelity"]
    ok = trace.status == "converged" and fidelity >= cfg["calibrate"]["fidelity_threshold"]
    _write(out / "trace.jsonl", trace.to_jsonl(cfg.digest()))
    report = {
        **_header(cfg),
        "kind": "calibration_result",
        "status": trace.status,
        "iterations": trace.iterations,
        "initial": m0,
        "final": m,
        "fidelity": fidelity,
        "success": ok,
        "q_final": q.tolist(),
    }
    _write(out / "calibration.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"status={trace.status} iterations={trace.iterations} infidelity {m0['infidelity']:.3e} -> {m['infidelity']:.3e}")
    return EXIT_OK if ok else EXIT_CONVERGE


def cmd_campaign(cfg: RunConfig, out: Path) -> int:
    exp = build_experiment(cfg["experiment"])
    plan = _load_plan(cfg, exp, out)
    c = cfg["campaign"]
    make_backend(cfg, exp, plan)  # fail early on a mismatch
    report = cal.run_campaign(
        lambda i: make_backend(cfg, exp, plan, i),
        plan,
        int(c["n_starts"]),
        float(c["scale"]),
        seed=int(cfg["seed"]),
        options=cfg.solver_options(),
        threshold=float(c["threshold"]),
        metric=c["metric"],
        threads=int(cfg["threads"]),
    )
    tag = f"# schema_version={SCHEMA_VERSION} config_digest={cfg.digest()}\n"
    _write(out / "campaign.tsv", tag + report.to_tsv())
    _write(out / "campaign.json", report.to_json() + "\n")
    lines = ["bin_low\tbin_high\tcount\tsuccess_rate"]
    lines += [f"{float(a)!r}\t{float(b)!r}\t{n}\t{float(r)!r}" for a, b, n, r in report.bins(int(c["bins"]))]
    _write(out / "campaign_bins.tsv", tag + "\n".join(lines) + "\n")
    lines = ["iterations\tcount"] + [f"{i}\t{n}" for i, n in report.iteration_histogram()]
    _write(out / "campaign_iterations.tsv", tag + "\n".join(lines) + "\n")
    print(f"starts={len(report.records)} success_rate={report.success_rate:.3f} median_iterations={np.median(report.iterations()):g}")
    return EXIT_OK


def cmd_tables(cfg: RunConfig, out: Path) -> int:
    exp = build_experiment(cfg["experiment"])
    plan = _load_plan(cfg, exp, out)
    _write_tables(cfg, plan, exp, out)
    return EXIT_OK


def validation_checks(cfg: RunConfig, exp: Experiment, plan) -> list[tuple[str, bool, str]]:
    """Invariant checks of a plan and its backend as ``(name, ok, detail)``."""
    checks = []
    A = plan.matrix()
    square = A.shape[0] == A.shape[1]
    checks.append(("plan matrix square", square, str(A.shape)))
    thr = cfg["synthesis"]["cond_threshold"]
    checks.append(("condition below threshold", plan.condition_number <= thr, f"{plan.condition_number:.4g}"))
    S = sensitivity_matrix(exp, plan.rows, plan.columns)
    dev = float(np.max(np.abs(S.entries - plan.sensitivity.entries), initial=0.0))
    checks.append(("stored sensitivities reproduce", dev < 1e-6, f"{dev:.2e}"))
    if cfg["synthesis"]["zero_ideal"] and cfg["synthesis"]["mode"] != "witness":
        z = float(np.max(np.abs(S.ideal), initial=0.0))
        checks.append(("selected rows have zero ideal response", z < 1e-10, f"{z:.2e}"))
    backend = make_backend(cfg, exp, plan)
    r0 = cal.residual(backend, plan, backend.q_ideal)
    checks.append(("residual vanishes at the ideal setting", float(np.max(np.abs(r0), initial=0)) < 1e-6, f"{np.max(np.abs(r0), initial=0):.2e}"))
    if square and cfg["backend"] == "synthetic":
        rng = np.random.default_rng(cfg["seed"])
        worst = 0.0
        for _ in range(20):
            p = rng.normal(size=len(plan.columns))
            p *= 1e-3 / np.linalg.norm(p)
            q = backend.q_from_error(p)
            p_hat = plan.extract(cal.residual(backend, plan, q))
            worst = max(worst, np.linalg.norm(p_hat - p) / np.linalg.norm(p) ** 2)
        checks.append(("first-order extraction error <= 50 |p|^2", worst <= 50, f"{worst:.3g}"))
    return checks


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    exp = build_experiment(cfg["experiment"])
    plan = _load_plan(cfg, exp, out)
    checks = validation_checks(cfg, exp, plan)
    lines = []
    for name, ok, detail in checks:
        lines.append(f"{'PASS' if ok else 'FAIL'}\t{name}\t{detail}")
        print(lines[-1])
    _write(out / "validate.tsv", f"# schema_version={SCHEMA_VERSION} config_digest={cfg.digest()}\n" + "\n".join(lines) + "\n")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_SYNTH


COMMANDS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "campaign": cmd_campaign,
    "tables": cmd_tables,
    "validate": cmd_validate,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatecal", description="Gate-set sequence synthesis and calibration.")
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--backend", choices=["synthetic", "st-qubit"])
    p.add_argument("--threads", type=int)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--tol", type=float)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg.data["seed"] = args.seed
        if args.backend:
            cfg.data["backend"] = args.backend
        if args.threads:
            cfg.data["threads"] = args.threads
        if args.max_iters is not None:
            cfg.data["solver"] = {**cfg.data["solver"], "max_iterations": args.max_iters}
        if args.tol is not None:
            cfg.data["solver"] = {**cfg.data["solver"], "tol": args.tol}
        out = _out_dir(cfg, args.out)
        return COMMANDS[args.verb](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
