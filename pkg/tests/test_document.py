import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covara.corpus import AFFINE_GE, CORPUS, SQUARE_MAP, SQUARE_MAP_LOOP, PROJECTION_GE
from covara.document import load_document, loads, parse_document
from covara.errors import ParseError, ValidationError
from covara.setmaps import Affine, IdentityPlusNormalCone, Smooth

MINIMAL = {
    "maps": {"F": {"type": "identity", "dim": 1}, "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [["p", 0]]}},
    "problem": {"xbar": [0.0], "pbar": [0.0]},
}


def test_minimal_document_defaults():
    doc = parse_document(MINIMAL)
    cfg = doc.solver_config()
    assert cfg.tol == 1e-10 and cfg.max_iter == 200 and cfg.alpha is None
    sch = doc.sampling_schedule()
    assert sch.eta_sequence[0] == 0.5 and len(sch.eta_sequence) == 10
    assert doc.sampling_schedule(3).seed == 3
    assert doc.output.format == "json" and doc.sweep is None
    assert doc.ybar() == pytest.approx([0.0])


def test_square_map_loads_with_analytic_jacobian():
    doc = parse_document(SQUARE_MAP)
    F = doc.F()
    assert isinstance(F, Smooth) and F.jac is not None
    assert F.jacobian([0.6, 0.8]) == pytest.approx(np.array([[0.6, -0.8], [0.8, 0.6]]))
    assert doc.g().point([1.0, 2.0], [0.3, 0.4]) == pytest.approx([0.3, 0.4])


def test_map_builders():
    assert isinstance(parse_document(PROJECTION_GE).F(), IdentityPlusNormalCone)
    doc = parse_document(AFFINE_GE)
    assert isinstance(doc.F(), Affine)
    assert doc.g().point([1.0, 1.0, 1.0], [0.5, -0.5]) == pytest.approx([0.5, -0.5])


def test_sweep_points():
    loop = parse_document(SQUARE_MAP_LOOP).sweep_points()
    assert len(loop) == 64
    assert loop[0] == pytest.approx([0.02, 0.0])
    assert all(np.linalg.norm(p) == pytest.approx(0.02) for p in loop)
    grid = parse_document(PROJECTION_GE).sweep_points()
    assert len(grid) == 25
    assert grid[0] == pytest.approx([-0.5, -0.5]) and grid[1] == pytest.approx([-0.5, 0.0])


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match="problem.extra"):
        parse_document({**MINIMAL, "problem": {**MINIMAL["problem"], "extra": 1}})


def test_dimension_mismatch_names_key():
    bad = {**MINIMAL, "problem": {"xbar": [0.0, 0.0], "pbar": [0.0]}}
    with pytest.raises(ValidationError) as err:
        parse_document(bad)
    assert err.value.key.startswith("maps")


def test_matrix_shape_checked():
    bad = {**AFFINE_GE, "maps": {**AFFINE_GE["maps"], "F": {"type": "affine", "A": [[1.0, 0.0], [0.0]]}}}
    with pytest.raises(ValidationError):
        parse_document(bad)


def test_expression_whitelist():
    bad = {**MINIMAL, "maps": {**MINIMAL["maps"], "g": {"type": "single_valued", "dim_x": 1, "dim_p": 1, "components": [["exp", ["p", 0]]]}}}
    with pytest.raises(ValidationError):
        parse_document(bad)


def test_parse_error_position():
    with pytest.raises(ParseError) as err:
        loads('{\n    "maps": ,\n}')
    assert (err.value.line, err.value.column) == (2, 13)


def test_nonfinite_literal_rejected():
    with pytest.raises(ParseError):
        loads('{"maps": {}, "problem": {"xbar": [NaN], "pbar": [0]}}')


def test_unreadable_file(tmp_path):
    with pytest.raises(ParseError):
        load_document(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_bytes(b"\xff\xfe")
    with pytest.raises(ParseError):
        load_document(tmp_path / "bad.json")


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_documents_round_trip(name, tmp_path):
    doc = CORPUS[name].doc
    path = tmp_path / "doc.json"
    path.write_text(doc.dumps())
    again = load_document(path)
    assert again == doc and again.dumps() == doc.dumps()


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=4), finite, st.integers(0, 2**64 - 1), st.sampled_from(["csv", "json"]))
def test_round_trip_property(xbar, p, seed, fmt):
    n = len(xbar)
    data = {
        "maps": {
            "F": {"type": "identity", "dim": n},
            "g": {"type": "single_valued", "dim_x": n, "dim_p": 1, "components": [["mul", ["p", 0], ["x", i]] for i in range(n)]},
        },
        "problem": {"xbar": xbar, "pbar": [p]},
        "schedule": {"seed": seed},
        "output": {"format": fmt},
    }
    doc = loads(json.dumps(data))
    assert loads(doc.dumps()) == doc
