"""Command-line interface: exit codes, JSON payloads, trace files."""

import json
from pathlib import Path

import numpy as np
import pytest

from marketeq import cli, market

FIX = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_solve_nsw_writes_certified_payload(tmp_path, capsys):
    out = tmp_path / "eq.json"
    code, stdout, stderr = run(
        capsys, "solve", FIX / "lindahl_linear.json", "--method", "nsw", "--out", out
    )
    assert code == 0
    assert stdout == ""
    assert "certified" in stderr
    payload = json.loads(out.read_text())
    assert payload["method"] == "nsw"
    assert payload["certified"] is True
    assert payload["verification"]["certified"] is True
    assert "allocation" in payload["equilibrium"]


def test_solve_without_out_prints_json(capsys):
    code, stdout, stderr = run(
        capsys, "solve", FIX / "lindahl_linear.json", "--method", "shmyrev"
    )
    assert code == 0
    payload = json.loads(stdout)
    assert payload["certified"] is True


def test_solve_chores_kkt(tmp_path, capsys):
    out = tmp_path / "eq.json"
    code, _, stderr = run(
        capsys, "solve", FIX / "chores_2x2.json", "--method", "chores-kkt", "--out", out
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["kkt"]["max"] <= 1e-9
    np.testing.assert_allclose(payload["equilibrium"]["prices"], [1.0, 1.0], atol=1e-6)


def test_solve_oracle_mode(tmp_path, capsys):
    out = tmp_path / "eq.json"
    code, _, _ = run(
        capsys,
        "solve", FIX / "fisher_tree.json", "--method", "eg", "--oracle", "--out", out,
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["oracle"] == "eg-dual"
    assert payload["certified"] is True


def test_solve_method_instance_mismatch(capsys):
    code, _, stderr = run(capsys, "solve", FIX / "lindahl_linear.json", "--method", "eg")
    assert code == 3
    assert "needs" in stderr
    code, _, _ = run(capsys, "solve", FIX / "fisher_tree.json", "--method", "chores-kkt")
    assert code == 3


def test_schema_errors_are_pointered(tmp_path, capsys):
    code, _, stderr = run(capsys, "solve", FIX / "malformed.json", "--method", "nsw")
    assert code == 2
    assert "invalid JSON" in stderr

    bad = tmp_path / "bad.json"
    bad.write_text(
        json.dumps({"market": "auction", "items": "goods", "goods": 2, "agents": []})
    )
    code, _, stderr = run(capsys, "solve", bad, "--method", "nsw")
    assert code == 2
    assert "$.market" in stderr

    code, _, stderr = run(capsys, "solve", tmp_path / "missing.json", "--method", "nsw")
    assert code == 2
    assert "cannot read" in stderr


def test_solve_output_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "solve", FIX / "lindahl_linear.json", "--method", "nsw", "--out", a)
    run(capsys, "solve", FIX / "lindahl_linear.json", "--method", "nsw", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_dynamics_trace_and_payload(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    out = tmp_path / "run.json"
    code, _, stderr = run(
        capsys,
        "dynamics", FIX / "lindahl_linear.json",
        "--rule", "prd-lindahl-gs", "--iters", "20", "--record-every", "5",
        "--trace", trace, "--state", "--out", out,
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["rule"] == "prd-lindahl-gs"
    assert payload["iterations"] <= 20
    assert np.array(payload["state"]).shape == (2, 2)
    lines = trace.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[:4] == ["iter", "potential", "kl", "residual"]
    assert "b_1_1" in header
    assert 2 <= len(lines) <= 7


def test_dynamics_zero_iterations(tmp_path, capsys):
    out = tmp_path / "run.json"
    code, _, _ = run(
        capsys,
        "dynamics", FIX / "fisher_tree.json",
        "--rule", "tat-fisher", "--iters", "0", "--out", out,
    )
    assert code == 0
    assert json.loads(out.read_text())["iterations"] == 0


def test_dynamics_rule_mismatch(capsys):
    code, _, stderr = run(
        capsys, "dynamics", FIX / "lindahl_linear.json", "--rule", "prd-fisher-gs"
    )
    assert code == 3


def test_dynamics_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        run(
            capsys,
            "dynamics", FIX / "lindahl_linear.json",
            "--rule", "prd-ces", "--iters", "40", "--seed", "7", "--out", out,
        )
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_dualize_twice_preserves_demands(tmp_path, capsys):
    once = tmp_path / "dual.json"
    twice = tmp_path / "dual2.json"
    code, _, _ = run(capsys, "dualize", FIX / "lindahl_linear.json", "--out", once)
    assert code == 0
    code, _, _ = run(capsys, "dualize", once, "--out", twice)
    assert code == 0

    orig = market.instance_from_dict(json.loads((FIX / "lindahl_linear.json").read_text()))
    dual = market.instance_from_dict(json.loads(once.read_text()))
    back = market.instance_from_dict(json.loads(twice.read_text()))
    assert dual.market == market.FISHER and back.market == market.LINDAHL
    rng = np.random.default_rng(0)
    for fam, fam2 in zip(orig.families, back.families):
        for _ in range(5):
            p = rng.uniform(0.5, 2.0, orig.m)
            np.testing.assert_allclose(fam2.demand(p, 1.3), fam.demand(p, 1.3), atol=1e-10)


def test_verify_certified_and_perturbed(tmp_path, capsys):
    code, stdout, stderr = run(
        capsys,
        "verify", FIX / "tight_ratio_1e3.json", FIX / "tight_ratio_1e3_equilibrium2.json",
        "--tol", "1e-6",
    )
    assert code == 0
    assert json.loads(stdout)["certified"] is True
    assert "certified" in stderr

    eq = json.loads((FIX / "tight_ratio_1e3_equilibrium2.json").read_text())
    eq["allocation"] = [v * 1.1 for v in eq["allocation"]]
    bad = tmp_path / "bad_eq.json"
    bad.write_text(json.dumps(eq))
    code, stdout, _ = run(
        capsys, "verify", FIX / "tight_ratio_1e3.json", bad, "--tol", "1e-6"
    )
    assert code == 4
    assert json.loads(stdout)["certified"] is False


def test_verify_rejects_wrong_market_side(capsys):
    code, _, stderr = run(
        capsys,
        "verify", FIX / "fisher_tree.json", FIX / "tight_ratio_1e3_equilibrium2.json",
    )
    assert code == 3
    assert "market side" in stderr


def test_verify_accepts_solver_payloads(tmp_path, capsys):
    out = tmp_path / "solved.json"
    run(capsys, "solve", FIX / "chores_2x2.json", "--method", "chores-kkt", "--out", out)
    code, stdout, _ = run(capsys, "verify", FIX / "chores_2x2.json", out, "--tol", "1e-6")
    assert code == 0
    assert json.loads(stdout)["certified"] is True


def test_verify_schema_error(tmp_path, capsys):
    bad = tmp_path / "eq.json"
    bad.write_text(json.dumps({"prices": [1.0, 1.0]}))
    code, _, stderr = run(capsys, "verify", FIX / "chores_2x2.json", bad)
    assert code == 2
