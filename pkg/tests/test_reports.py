import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinna_n1 import reports
from pinna_n1.experiments import ErrorReport, OverlapRow, RunResult, aggregate


def rep(dataset="d", model="m", values=((100.0, 0.01), (300.0, 0.03)), size=None):
    runs = [RunResult(i, hz, oc, 10, 30, size) for i, (hz, oc) in enumerate(values)]
    return aggregate(dataset, "repeated", model, runs, size=size)


class TestRender:
    def test_header_lines(self):
        text = reports.render("runs", ("a", "b"), [(1, 2.5)], {"z": 1, "a": [1, 2]})
        lines = text.splitlines()
        assert lines[0] == "# schema: pinna-n1/runs v1"
        assert lines[1] == '# config: {"a":[1,2],"z":1}'
        assert lines[2:] == ["a,b", "1,2.5"]

    def test_formatting(self):
        assert reports._fmt(None) == ""
        assert reports._fmt(True) == "true"
        assert reports._fmt(np.float64(0.1)) == "0.1"
        assert reports._fmt(1 / 3) == repr(1 / 3)

    @settings(max_examples=60)
    @given(x=st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, tmp_path_factory, x):
        p = tmp_path_factory.mktemp("r") / "f.csv"
        reports.write_csv(p, "t", ("x",), [(x,)], {})
        _, _, rows = reports.read_csv(p)
        assert float(rows[0]["x"]) == x

    def test_read_rejects_foreign(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(reports.ReportError):
            reports.read_csv(tmp_path / "x.csv")

    def test_write_is_atomic(self, tmp_path):
        p = reports.write_csv(tmp_path / "sub" / "o.csv", "t", ("a",), [(1,)], {"k": "v"})
        assert p.exists()
        assert [q.name for q in p.parent.iterdir()] == ["o.csv"]
        schema, cfg, rows = reports.read_csv(p)
        assert (schema, cfg, rows) == ("pinna-n1/t v1", {"k": "v"}, [{"a": "1"}])


class TestRows:
    def test_run_and_summary(self):
        r = rep()
        assert len(reports.run_rows([r, r])) == 4
        (row,) = reports.summary_rows([r])
        d = dict(zip(reports.SUMMARY_COLUMNS, row))
        assert d["rms_hz"] == 200.0 and d["n_runs"] == 2 and d["seeds"] == "0 1"
        assert d["jnd"] == "below_jnd"

    def test_overlap_rows(self):
        row = OverlapRow("d1", 0.5, 10, 0.1, 0, 1, 0.5, 0, 2, 1.0)
        assert reports.overlap_rows([row]) == [("d1", 0.5, 10, 0.1, 0, 1, 0.5, 0, 2, 1.0)]

    def test_curves(self):
        rows = []
        for size, vals in ((50, [900.0, 1100.0, 1000.0]), (700, [200.0, 220.0, 180.0])):
            for s, v in enumerate(vals):
                rows.append({"dataset": "d", "model": "m", "size": str(size), "rms_hz": repr(v), "rms_octave": "0.15"})
        rows.append({"dataset": "d", "model": "m", "size": "", "rms_hz": "1", "rms_octave": "1"})
        out = reports.curves_from_runs(rows)
        assert [c[2] for c in out] == [50, 700]
        assert out[0][4] == pytest.approx(1000.0)
        assert out[0][5] == pytest.approx(100.0 / math.sqrt(3))
        assert out[1][7] == "within_jnd"

    def test_curves_need_sizes(self):
        with pytest.raises(reports.ReportError):
            reports.curves_from_runs([{"dataset": "d", "model": "m", "size": "", "rms_hz": "1", "rms_octave": "1"}])

    def test_table1_layout(self):
        cells = {("Naive", "A"): rep("A"), ("Naive", "B"): rep("B"), ("Mix", "B"): rep("B")}
        cols, rows = reports.table1_rows(["Naive", "Mix"], ["A", "B"], cells)
        assert cols == ["method", "A_rms_hz", "A_octave", "B_rms_hz", "B_octave"]
        assert rows[0] == ("Naive", 200.0, 0.02, 200.0, 0.02)
        assert rows[1][:3] == ("Mix", "N/A", "N/A")

    def test_error_report_jnd(self):
        assert isinstance(rep(), ErrorReport) and rep(values=((1.0, 0.5),)).jnd == "above_jnd"
