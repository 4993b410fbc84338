import json

import numpy as np
import pytest

from gatecal.calibration import CalibrationTrace
from gatecal.cli import RunConfig, main
from gatecal.tables import load_plan, parse_tsv
from gatecal.gatesets import two_qubit_experiment

EXP = two_qubit_experiment()


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out)]) == 0
    return out


def test_synth_default_plan(synth_dir):
    plan = load_plan(synth_dir / "plan.json", EXP)
    assert len(plan.rows) == 15 and plan.condition_number < 8.4
    doc = parse_tsv((synth_dir / "plan_table.tsv").read_text())
    assert len(doc.rows) == 15 + len(plan.probe_rows)
    assert (synth_dir / "plan_table.md").read_text().startswith("<!-- schema_version=1")


def test_synth_is_byte_identical(tmp_path, synth_dir):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    for name in ("plan.json", "plan_table.md", "plan_table.tsv"):
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_witness_mode_table(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"synthesis": {"mode": "witness", "witness": "cnot_basic"}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "plan_table.md").read_text().splitlines()
    assert lines[4].startswith("| 2 | g2 | g1 |")


def test_rank_deficient_declaration(tmp_path, capsys):
    # a phase gate read out along Z cannot reveal its own errors to first order
    cfg = write_config(
        tmp_path / "toy.json",
        {
            "experiment": {
                "gates": {"z": [[1, 0], [0, -1]]},
                "initial_states": {"0": [[1, 0], [0, 0]]},
                "measurements": {"Z": [[1, 0], [0, -1]]},
                "max_length": 2,
            },
            "columns": "all",
            "synthesis": {"probes": False, "zero_ideal": False},
        },
    )
    assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "direction 1" in err and "p_{1,3}" in err
    assert not (tmp_path / "plan.json").exists()


def test_calibrate_small_perturbation(synth_dir):
    assert main(["calibrate", "--out", str(synth_dir)]) == 0
    result = json.loads((synth_dir / "calibration.json").read_text())
    assert result["status"] == "converged" and result["iterations"] <= 15
    assert result["final"]["infidelity"] < 1e-8


def test_calibrate_from_the_ideal_setting(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", {"calibrate": {"scale": 0.0}, "plan": str(synth_dir / "plan.json")})
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "calibration.json").read_text())["iterations"] <= 1


def test_calibrate_iteration_budget_keeps_trace(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", {"plan": str(synth_dir / "plan.json")})
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path), "--max-iters", "1"]) == 3
    trace = CalibrationTrace.from_jsonl((tmp_path / "trace.jsonl").read_text())
    assert trace.status == "max_iterations" and trace.iterations == 1


def test_campaign_bins_and_determinism(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", {"plan": str(synth_dir / "plan.json")})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["campaign", "--config", cfg, "--out", str(a)]) == 0
    rep = json.loads((a / "campaign.json").read_text())
    assert len(rep["records"]) == 100
    rows = [line.split("\t") for line in (a / "campaign_bins.tsv").read_text().splitlines()[2:]]
    assert sum(int(r[2]) for r in rows) == 100
    assert np.mean([r["success"] for r in rep["records"]]) >= 0.9
    # larger starting errors never help
    rates = [float(r[3]) for r in rows]
    assert rates[0] >= rates[-1]
    assert main(["campaign", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    assert (a / "campaign.tsv").read_bytes() == (b / "campaign.tsv").read_bytes()


def test_single_start_campaign(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", {"plan": str(synth_dir / "plan.json"), "campaign": {"n_starts": 1}})
    assert main(["campaign", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "campaign.json").read_text())["records"]) == 1
    hist = (tmp_path / "campaign_iterations.tsv").read_text().splitlines()
    assert len(hist) == 3


def test_tables_and_validate(tmp_path, synth_dir, capsys):
    cfg = write_config(tmp_path / "c.json", {"plan": str(synth_dir / "plan.json")})
    assert main(["tables", "--config", cfg, "--out", str(tmp_path)]) == 0
    # the header carries the config digest, which includes the plan path
    body = lambda d: (d / "plan_table.md").read_text().split("\n", 1)[1]  # noqa: E731
    assert body(tmp_path) == body(synth_dir)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_stqubit_backend_reduces_infidelity(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "c.json", {"plan": str(synth_dir / "plan.json"), "backend": "st-qubit"})
    code = main(["calibrate", "--config", cfg, "--out", str(tmp_path), "--max-iters", "2"])
    result = json.loads((tmp_path / "calibration.json").read_text())
    assert code in (0, 3)
    assert result["final"]["infidelity"] < 0.1 * result["initial"]["infidelity"]


def test_missing_inputs_exit_four(tmp_path):
    assert main(["calibrate", "--out", str(tmp_path / "empty")]) == 4
    assert main(["synth", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 4
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["synth", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 4


def test_unknown_keys_are_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"synthesis": {"mdoe": "witness"}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 4
    assert "synthesis.mdoe" in capsys.readouterr().err
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.json", {"out": str(tmp_path / "from_config")})
    monkeypatch.setenv("GATECAL_OUT", str(tmp_path / "from_env"))
    assert main(["synth", "--config", cfg]) == 0
    assert (tmp_path / "from_env" / "plan.json").exists()
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "plan.json").exists()
    monkeypatch.delenv("GATECAL_OUT")
    assert main(["synth", "--config", cfg]) == 0
    assert (tmp_path / "from_config" / "plan.json").exists()


def test_config_digest_ignores_output_location():
    a = RunConfig.from_dict({"out": "x", "threads": 4})
    b = RunConfig.from_dict({"out": "y"})
    assert a.digest() == b.digest() != RunConfig.from_dict({"seed": 3}).digest()
