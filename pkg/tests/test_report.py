import json
import math

import numpy as np

from conleyflow import report
from conleyflow.analysis import CSV_HEADER
from conleyflow.cubegrid import CellSet, CubicalGrid


def test_json_is_sorted_and_finite():
    text = report.dumps_json({"b": math.nan, "a": [np.float64(1.5), math.inf], "c": np.int64(3)})
    doc = json.loads(text)
    assert list(doc) == ["a", "b", "c"]
    assert doc == {"a": [1.5, None], "b": None, "c": 3}


def test_verdict_document_header():
    doc = report.verdict_document("sweep", {"config": {}}, {"x": 1})
    assert doc["schema"] == report.SCHEMA and doc["command"] == "sweep" and doc["result"] == {"x": 1}


def test_csv_cells():
    text = report.dumps_csv([[0.5, 3, None, 0.1, True, False, None, None, np.bool_(True)]])
    header, row = text.splitlines()
    assert header == ",".join(CSV_HEADER)
    assert row == "0.5,3,,0.1,true,false,,,true"


def test_cellset_plot_runs():
    g = CubicalGrid.cube(1.0, 2, 4)
    S = CellSet.from_indices(g, [0, 1, 2, 8])
    svg = report.cellset_plot([(S, "#000")], timestamp=False)
    # column 0 holds one run of three cells, column 2 one cell
    assert svg.count("<rect x=") == 2
    assert "generated" not in svg


def test_diameter_plot_points():
    svg = report.diameter_plot([(0.25, 8.0), (0.5, 4.0)], timestamp=True)
    assert svg.count("<circle") == 2 and "generated" in svg
    assert "<polyline" not in report.diameter_plot([], timestamp=False)
