import math

import numpy as np

from sln_otto.io import fmt, provenance_line, read_csv, svg_heatmap, svg_lines, write_csv


class TestFormat:
    def test_cells(self):
        assert fmt(True) == "1" and fmt(False) == "0"
        assert fmt(3) == "3" and fmt(np.int64(4)) == "4"
        assert fmt(0.1) == "1.000000000000e-01"
        assert fmt(np.float64(0.1)) == fmt(0.1)
        assert fmt(math.nan) == "nan" and fmt(-math.inf) == "-inf"
        assert fmt("heat-engine") == "heat-engine"

    def test_float_roundtrip_precision(self):
        x = 1 / 3
        assert abs(float(fmt(x)) - x) < 1e-12 * x


class TestCsv:
    def test_roundtrip(self, tmp_path):
        h = provenance_line("ledger", "abc", 5)
        assert h == "# sln-otto ledger config_hash=abc seed=5"
        p = write_csv(tmp_path / "sub" / "t.csv", h, ["a", "b"], [[1, 0.5], [2, "x,y"]])
        header, cols, rows = read_csv(p)
        assert header == h
        assert cols == ["a", "b"]
        assert rows == [["1", "5.000000000000e-01"], ["2", "x,y"]]

    def test_byte_stable(self, tmp_path):
        rows = [[0.1 * k, k] for k in range(5)]
        a = write_csv(tmp_path / "a.csv", "# h", ["x", "k"], rows).read_bytes()
        b = write_csv(tmp_path / "b.csv", "# h", ["x", "k"], rows).read_bytes()
        assert a == b and b"\r" not in a


class TestSvg:
    def test_lines(self, tmp_path):
        p = svg_lines(tmp_path / "l.svg", {"a<b": ([0, 1, 2], [1.0, math.nan, -1.0])}, title="t")
        text = p.read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert "a&lt;b" in text

    def test_heatmap(self, tmp_path):
        p = svg_heatmap(tmp_path / "h.svg", [0.1, 0.2], [1.0, 2.0, 3.0], [[0.1, None, 0.3], [math.nan, 0.2, 0.0]])
        text = p.read_text()
        assert text.count("<rect") == 1 + 6
        assert "#bbbbbb" in text
