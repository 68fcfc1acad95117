import csv
import json
import subprocess
import sys

import pytest

from blab import cli

VERIFY = """
[model]
m = 9

[verify]
convention = "{conv}"
"""

FIT = """
[model]
kind = "flat"
m = 9

[ladder]
k_min = 6
k_max = 14
"""

REDUCE = """
[model]
kind = "flat"
m = 9
a_hess = 2.0
h0 = 1.0

[ladder]
eps = [0.0009765625, 0.000244140625]

[reduce]
convention = "{conv}"
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, command, text, *extra, out="out"):
    code = cli.main([command, "--config", _write(tmp_path, text), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_verify_stated_fails_on_named_invariants(tmp_path, capsys):
    code, out = _run(tmp_path, "verify-identities", VERIFY.format(conv="stated"))
    assert code == 1
    err = capsys.readouterr().err
    assert "lock_A[m=9]" in err and "fourth_moment_decomposition[m=9]" in err
    assert "[reduced_energy]" in err and "[bubble_calculus]" in err
    summary = json.loads((out / "summary.json").read_text())
    failing = {c["name"] for c in summary["checks"] if not c["passed"]}
    assert failing == {"lock_A[m=9]", "fourth_moment_decomposition[m=9]"}
    rows = list(csv.DictReader(open(out / "identities.csv")))
    assert {"name", "module", "value", "tol", "passed"} == set(rows[0])


def test_verify_corrected_passes(tmp_path):
    code, _ = _run(tmp_path, "verify-identities", VERIFY.format(conv="corrected"))
    assert code == 0


def test_summary_is_deterministic(tmp_path):
    _run(tmp_path, "verify-identities", VERIFY.format(conv="corrected"), out="a")
    _run(tmp_path, "verify-identities", VERIFY.format(conv="corrected"), out="b")
    assert (tmp_path / "a/summary.json").read_bytes() == (tmp_path / "b/summary.json").read_bytes()
    assert "runtime" not in (tmp_path / "a/summary.json").read_text()
    assert "runtime_seconds" in (tmp_path / "a/timing.json").read_text()


def test_fit_expansion(tmp_path):
    code, out = _run(tmp_path, "fit-expansion", FIT, "--workers", "2")
    assert code == 0
    rows = list(csv.DictReader(open(out / "expansion.csv")))
    assert list(rows[0]) == ["eps", "J_exact", "fit_residual"] and len(rows) == 18
    assert (out / "energy.svg").read_text().startswith("<?xml")
    summary = json.loads((out / "summary.json").read_text())
    assert {c["name"] for c in summary["checks"]} == {"a_m", "log_ratio", "h_shift"}


def test_reduce_outputs_and_t0_check(tmp_path):
    code, out = _run(tmp_path, "reduce", REDUCE.format(conv="corrected"))
    assert code == 0
    rows = list(csv.DictReader(open(out / "ladder.csv")))
    assert len(rows) == 2 and "multiplier_sum" in rows[0]
    for name in ("t_eps.svg", "correction.svg", "cross_section.svg", "cross_section.csv"):
        assert (out / name).exists()
    code, out = _run(tmp_path, "reduce", REDUCE.format(conv="stated"), out="stated")
    assert code == 1
    summary = json.loads((out / "summary.json").read_text())
    assert [c["name"] for c in summary["checks"] if not c["passed"]] == ["t_eps_vs_t0"]


def test_continuation(tmp_path):
    code, out = _run(tmp_path, "continuation", REDUCE.format(conv="corrected"))
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "multiplier_exponent" in summary["results"]
    assert (out / "multipliers.svg").exists()


def test_regime_mismatch_exits_one(tmp_path, capsys):
    text = '[model]\nm = 9\na_hess = -0.05\n[ladder]\neps = [0.001]\n'
    code, out = _run(tmp_path, "reduce", text)
    assert code == 1
    assert "regime mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "[model\nm = 9",
    "[model]\nkind = 'flat'\n",
    "[model]\nm = 9\n[grid]\ncolour = 1\n",
    "[mystery]\nx = 1\n[model]\nm = 9\n",
    "[model]\nm = 9\n[ladder]\neps = [0.01, 0.02]\n",
    "[model]\nm = 9\n[tolerances]\na_m = -1.0\n",
    "[model]\nm = 9\nkind = 'torus'\n",
])
def test_config_errors_exit_two(tmp_path, text):
    code, _ = _run(tmp_path, "reduce", text)
    assert code == 2


def test_missing_config_exits_two(tmp_path):
    assert cli.main(["verify-identities", "--config", str(tmp_path / "none.toml")]) == 2


def test_unwritable_output_exits_three(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = cli.main(["verify-identities", "--config", _write(tmp_path, VERIFY.format(conv="corrected")),
                     "--out", str(blocker / "sub")])
    assert code == 3


def test_console_script_and_log_level(tmp_path):
    cfg = _write(tmp_path, VERIFY.format(conv="corrected"))
    res = subprocess.run([sys.executable, "-m", "blab.cli", "verify-identities", "--config", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True,
                         env={"BLAB_LOG": "DEBUG", "PATH": ""}, check=False)
    assert res.returncode == 0
