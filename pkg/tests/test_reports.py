import csv
import io
import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from covara.reports import dump_csv, dump_json, format_cell, jsonable, write_report


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
def test_csv_floats_round_trip(values):
    text = dump_csv([f"c{i}" for i in range(len(values))], [values])
    row = list(csv.reader(io.StringIO(text)))[1]
    assert [float(v) for v in row] == values


def test_cell_formatting():
    assert format_cell(None) == ""
    assert format_cell(True) == "true" and format_cell(np.bool_(False)) == "false"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell(np.float64(0.1)) == "0.1"
    assert format_cell(float("inf")) == "inf"


def test_json_nonfinite_and_numpy():
    text = dump_json({"b": np.array([1.0, np.inf]), "a": -np.inf, "c": float("nan"), "d": np.int32(2)})
    assert json.loads(text) == {"a": "-inf", "b": [1.0, "inf"], "c": "nan", "d": 2}
    assert text.index('"a"') < text.index('"b"') and text.endswith("\n")


@given(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=False) | st.integers() | st.booleans(), max_size=6))
def test_json_is_deterministic(d):
    reordered = dict(reversed(list(d.items())))
    assert dump_json(d) == dump_json(reordered)
    assert json.loads(dump_json(d)) == jsonable(d)


def test_write_report_creates_directories(tmp_path):
    path = write_report(tmp_path / "a" / "b", "r.csv", dump_csv(["x"], [[1.5]]))
    assert path.read_text() == "x\n1.5\n"
