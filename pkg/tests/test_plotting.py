import re

import pytest

from conftest import small_config
from fedpoison.errors import ConfigError
from fedpoison.harness import execute
from fedpoison.plotting import line_chart_svg, plot_svg


def table(attacks=("replace", "dba"), ratios=(0.01, 0.03, 0.05, 0.07, 0.1)):
    return [{"setting": "practical", "ratio": r, "attack": a, "acc_mean": 0.9 - r,
             "bsa": 0.1 + i * 0.2 + r} for i, a in enumerate(attacks) for r in ratios]


def polylines(svg):
    return re.findall(r'<polyline[^>]*points="([^"]*)"', svg)


def test_two_attacks_five_ratios():
    svg = plot_svg(table(), "bsa_vs_ratio")
    lines = polylines(svg)
    assert len(lines) == 2
    assert all(len(p.split()) == 5 for p in lines)
    assert "replace (practical)" in svg and "dba (practical)" in svg


def test_byte_identical_reruns(tmp_path):
    a = plot_svg(table(), "acc_vs_ratio", tmp_path / "a.svg")
    b = plot_svg(table(), "acc_vs_ratio", tmp_path / "b.svg")
    assert a == b
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_empty_table_is_annotated():
    svg = plot_svg([], "bsa_vs_ratio")
    assert "no data" in svg and not polylines(svg)


def test_missing_values_skipped():
    rows = table(attacks=("ipm",))
    for r in rows:
        r["bsa"] = None
    svg = plot_svg(rows, "bsa_vs_ratio")
    assert "no data" in svg and "ipm (practical)" in svg


def test_points_inside_plot_area():
    svg = line_chart_svg([("a", [(0, 0.0), (1, 1.0), (2, 0.5)])], "x", "y")
    for p in polylines(svg)[0].split():
        x, y = map(float, p.split(","))
        assert 0 <= x <= 640 and 0 <= y <= 400


def test_series_plot():
    art = execute(small_config(attack={"kind": "replace"}, malicious_ratio=0.25))
    svg = plot_svg(art.records, "series")
    lines = polylines(svg)
    assert len(lines) == 2 and len(lines[0].split()) == len(art.records)


def test_bad_kind():
    with pytest.raises(ConfigError, match="plot kind"):
        plot_svg(table(), "pie")
