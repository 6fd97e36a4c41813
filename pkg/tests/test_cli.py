import csv
import io
import json

import numpy as np
import pytest

from qmd.channels import depolarizing_channel, unitary_channel
from qmd.cli import EXIT_INPUT, EXIT_OK, EXIT_SIZE, main
from qmd.numerics import haar_unitary, matrix_to_json
from qmd.quantum import chrysler_povm, computational_pvm


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def files(tmp_path):
    state = tmp_path / "state.json"
    state.write_text(json.dumps(matrix_to_json(np.eye(2) / 2)))
    chry = tmp_path / "chrysler.json"
    chry.write_text(json.dumps(chrysler_povm().to_json()))
    pvm = tmp_path / "pvm.json"
    pvm.write_text(json.dumps(computational_pvm(2).to_json()))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    dep = tmp_path / "dep.json"
    dep.write_text(json.dumps(depolarizing_channel(2, 1.0).to_json()))
    uni = tmp_path / "uni.json"
    uni.write_text(json.dumps(unitary_channel(haar_unitary(2, np.random.default_rng(0))).to_json()))
    return {p.stem: str(p) for p in (state, chry, pvm, bad, dep, uni)}


def test_analyze_chrysler(capsys, files):
    code, out, _ = run(capsys, "analyze", files["state"], files["chrysler"])
    rep = json.loads(out)
    assert code == EXIT_OK
    assert abs(rep["entropy_defect"] - 1.0) < 1e-9
    assert rep["extremal"] is False and rep["perturbation_dim"] == 2


def test_analyze_pvm_extremal(capsys, files):
    _, out, _ = run(capsys, "analyze", files["state"], files["pvm"])
    assert json.loads(out)["extremal"] is True


def test_malformed_input(capsys, files):
    code, _, err = run(capsys, "analyze", files["bad"], files["pvm"])
    assert code == EXIT_INPUT and "malformed JSON" in err
    code, _, _ = run(capsys, "analyze", files["state"] + ".missing", files["pvm"])
    assert code == EXIT_INPUT
    code, _, _ = run(capsys, "separate", "--l", "x-y")
    assert code == EXIT_INPUT


def test_size_limit(capsys):
    code, _, err = run(capsys, "separate", "--l", "40", "--trials", "0")
    assert code == EXIT_SIZE and "size limit" in err


def test_separate_csv(capsys):
    code, out, _ = run(capsys, "separate", "--l", "2-3", "--trials", "6", "--seed", "4")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0].startswith("# config: ")
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert [r["l"] for r in rows] == ["2", "3"]
    assert set(rows[0]) == {"l", "delta", "M", "N", "cm_error", "cp_error_max", "bound_error", "seed"}
    for r in rows:
        assert float(r["cp_error_max"]) <= float(r["cm_error"]) + 1e-9


def test_reruns_are_byte_identical(capsys):
    _, a, _ = run(capsys, "separate", "--l", "3", "--trials", "3")
    _, b, _ = run(capsys, "separate", "--l", "3", "--trials", "3")
    assert a == b


def test_output_file(capsys, tmp_path):
    target = tmp_path / "out.json"
    code, out, _ = run(capsys, "chrysler", "--out", str(target))
    assert code == EXIT_OK and out == ""
    rep = json.loads(target.read_text())
    assert abs(rep["beta"] - 0.552786) < 1e-6 and rep["all_extremal"] is True


def test_chrysler_csv(capsys):
    code, out, _ = run(capsys, "chrysler", "--format", "csv")
    assert code == EXIT_OK
    assert len(out.splitlines()) == 7


def test_channel_depolarizing(capsys, files):
    code, out, _ = run(capsys, "channel", files["dep"], "--l", "2", "--trials", "1")
    rep = json.loads(out)
    assert code == EXIT_OK
    assert abs(rep["entropy_exchange"] - 2) < 1e-9
    assert rep["max_kraus_operators"] <= rep["M"]


def test_channel_unitary(capsys, files):
    code, out, _ = run(capsys, "channel", files["uni"], files["state"])
    assert code == EXIT_OK
    assert abs(json.loads(out)["entropy_exchange"]) < 1e-9


def test_small_commands(capsys, files):
    code, out, _ = run(capsys, "holevo", "--trials", "20")
    assert code == EXIT_OK
    code, out, _ = run(capsys, "purify", files["state"])
    assert code == EXIT_OK and json.loads(out)
    code, out, _ = run(capsys, "typicality", "--l", "5")
    assert code == EXIT_OK
    code, out, _ = run(capsys, "chernoff", "--M", "50", "--dim-k", "1", "--eta", "0.3", "--s", "0.5", "--trials", "200")
    assert code == EXIT_OK and "# config:" in out


def test_default_format_per_command(capsys):
    _, out, _ = run(capsys, "chrysler")
    json.loads(out)
