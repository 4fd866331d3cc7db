import json
import subprocess
import sys

import pytest

from covara.cli import run_command
from covara.corpus import AFFINE_GE, CONVEX_MARGINAL, CORPUS, SQUARE_MAP, JUMP_MARGINAL, PROJECTION_GE


@pytest.fixture
def write_doc(tmp_path):
    def write(data, name="doc.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return str(path)

    return write


def run(capsys, *argv):
    code = run_command(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_at_nominal_parameter(capsys, write_doc):
    doc = write_doc({**PROJECTION_GE, "problem": {"xbar": [0.0, 0.0], "pbar": [0.0, 0.0]}})
    code, out, _ = run(capsys, "solve", "--doc", doc, "--p", "0,0")
    res = json.loads(out)["result"]
    assert code == 0
    assert res["sigma"] == [0.0, 0.0] and res["iterations"] == 0


def test_solve_projection(capsys, write_doc):
    code, out, _ = run(capsys, "solve", "--doc", write_doc(PROJECTION_GE), "--p=0.3,-0.4")
    assert code == 0
    assert json.loads(out)["result"]["sigma"] == pytest.approx([0.3, 0.0])


def test_solve_csv_report_file(capsys, write_doc, tmp_path):
    out_dir = tmp_path / "reports"
    code, out, _ = run(capsys, "solve", "--doc", write_doc(AFFINE_GE), "--p=1,2", "--format", "csv", "--out", str(out_dir))
    assert code == 0
    text = (out_dir / "solve.csv").read_text()
    assert text == out and text.startswith("sigma0,sigma1,sigma2,residual")


def test_implicit(capsys, write_doc):
    doc = {
        "maps": {"g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [["add", ["mul", 2.0, ["x", 0]], ["sin", ["p", 0]]]]}},
        "problem": {"xbar": [0.0], "pbar": [0.0]},
        "solver": {"alpha": 2.0, "ell": 0.0, "trust_radius_r": 1.0},
    }
    code, out, _ = run(capsys, "implicit", "--doc", write_doc(doc), "--p", "0.5")
    assert code == 0
    import math

    assert json.loads(out)["result"]["sigma"] == pytest.approx([-math.sin(0.5) / 2], abs=1e-10)


def test_moduli(capsys, write_doc):
    code, out, _ = run(capsys, "moduli", "--doc", write_doc(SQUARE_MAP))
    est = json.loads(out)["estimates"]
    assert code == 0
    assert est["alpha_point"]["value"] == 0.0 and "theta" in est


def test_sweep_csv(capsys, write_doc):
    code, out, _ = run(capsys, "sweep", "--doc", write_doc(PROJECTION_GE), "--format", "csv")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 26
    assert lines[0].startswith("p0,p1,sigma0,sigma1")


def test_sweep_mu_grid(capsys, write_doc):
    code, out, _ = run(capsys, "sweep", "--doc", write_doc(JUMP_MARGINAL))
    rows = json.loads(out)["mu_grid"]["rows"]
    assert code == 0
    assert {r[1] for r in rows} == {-1.0, 0.0}


def test_certify(capsys, write_doc):
    code, out, err = run(capsys, "certify", "--doc", write_doc(CONVEX_MARGINAL))
    assert code == 0
    assert json.loads(out)["report"]["verdicts"]["lipschitz"] == "certified"
    assert "Lipschitz theorem" in err


def test_corpus_list(capsys):
    code, out, _ = run(capsys, "corpus", "list")
    assert code == 0
    assert [line.split()[0] for line in out.splitlines()] == list(CORPUS)


@pytest.mark.parametrize("name", ["example-5-2", "example-4-2-loop"])
def test_corpus_run_entry(capsys, name):
    code, out, err = run(capsys, "corpus", "run", name, "--seed", "7")
    assert code == 0
    assert "FAIL" not in err and json.loads(out)["entries"][0]["passed"]


def test_invalid_document_exits_2(capsys, write_doc, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(capsys, "solve", "--doc", str(bad))[0] == 2
    code, _, err = run(capsys, "solve", "--doc", write_doc({**PROJECTION_GE, "extra": 1}))
    assert code == 2 and "extra" in err
    assert run(capsys, "solve", "--doc", str(tmp_path / "missing.json"))[0] == 2
    assert run(capsys, "solve", "--doc", write_doc(PROJECTION_GE), "--p", "1")[0] == 2
    assert run(capsys, "corpus", "run", "no-such-entry")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


def test_contraction_failure_exits_1_with_assumption(capsys, write_doc):
    doc = {**PROJECTION_GE, "solver": {"alpha": 1.0, "ell": 1.0, "trust_radius_r": 10.0}}
    code, _, err = run(capsys, "solve", "--doc", write_doc(doc), "--p=0.3,0.3")
    assert code == 1
    assert "assumption failed: contraction assumption violated: ell >= alpha" in err


def test_reports_are_byte_identical(capsys, write_doc, tmp_path):
    doc = write_doc(CONVEX_MARGINAL)
    texts = []
    for k in range(2):
        out_dir = tmp_path / f"run{k}"
        assert run(capsys, "certify", "--doc", doc, "--seed", "7", "--out", str(out_dir))[0] == 0
        texts.append((out_dir / "certify.json").read_bytes())
    assert texts[0] == texts[1]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "covara", "corpus", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "branch-vi" in proc.stdout
