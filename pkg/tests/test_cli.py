import json
import subprocess
import sys

import pytest

from dplab.cli import EXIT_INVALID, EXIT_OK, EXIT_QUORUM, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify_both_modes(capsys):
    code, out, _ = run(capsys, "classify", "∀ρ:ℝ ∃m:ℕ ∀n:ℕ [matrix]")
    assert code == EXIT_OK
    assert out.splitlines() == ["strict: Π¹₁", "as-written: Π¹₂"]


def test_classify_single_mode(capsys):
    code, out, _ = run(capsys, "classify", "A n:N E m:N [m > n]", "--mode", "strict")
    assert code == EXIT_OK and out.strip() == "strict: arithmetical (Π⁰₂)"


def test_classify_parse_error(capsys):
    code, _, err = run(capsys, "classify", "∀x:ℂ [m]")
    assert code == EXIT_INVALID and "position 3" in err


def test_protocol_run_with_overrides(capsys, tmp_path):
    code, out, err = run(capsys, "ising", "--ensemble-size", "2", "--seed", "5", "--set", "params.steps=4",
                         "--out", str(tmp_path))
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["protocol"] == "ising" and len(summary["config_hash"]) == 64
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["provenance"]["config"]["params"]["steps"] == 4
    assert report["provenance"]["config"]["seed"] == 5


def test_protocol_from_config_file(capsys, tmp_path):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("protocol: pointer\nensemble_size: 2\nlevels: 2\n")
    code, out, _ = run(capsys, "pointer", "--config", str(cfg))
    assert code == EXIT_OK and json.loads(out)["levels"]


def test_config_for_other_protocol(capsys, tmp_path):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("protocol: pointer\n")
    code, _, err = run(capsys, "ising", "--config", str(cfg))
    assert code == EXIT_INVALID


@pytest.mark.parametrize(
    "argv",
    [
        ("ising", "--levels", "1"),
        ("ising", "--set", "params.rule=coin"),
        ("ising", "--set", "noequals"),
        ("ising", "--set", "colour=red"),
        ("ising", "--config", "/nonexistent/dplab.yaml"),
        ("pointer", "--set", "params.model=lindblad"),
    ],
)
def test_invalid_input_exit_code(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_INVALID


def test_quorum_exit_code(capsys):
    code, _, err = run(capsys, "horizon", "--ensemble-size", "2", "--set", "params.potential=unstable",
                       "--set", "params.strength=4", "--set", "params.v_max=10")
    assert code == EXIT_QUORUM and "quorum" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dplab", "classify", "E f:R A n:N [m]", "--mode", "as-written"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.strip() == "as-written: Σ¹₂"
