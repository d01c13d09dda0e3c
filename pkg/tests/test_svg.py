import xml.etree.ElementTree as ET

import numpy as np

from hetofo.cli import main
from hetofo.svg import chart_from_csv, line_chart, read_plot_csv

from test_cli import DATA


def _polylines(text):
    root = ET.fromstring(text)
    return [e for e in root.iter() if e.tag.endswith("polyline")]


def test_one_polyline_per_series():
    x = np.arange(10)
    svg = line_chart(x, {"a": x ** 2, "b": -x}, "demo")
    assert len(_polylines(svg)) == 2


def test_gaps_split_a_series():
    y = np.array([1.0, 2.0, np.nan, 3.0, 4.0])
    assert len(_polylines(line_chart(np.arange(5), {"y": y}))) == 2


def test_log_axis_drops_nonpositive_points():
    y = np.array([1.0, 0.1, 0.0, 0.01])
    lines = _polylines(line_chart(np.arange(4), {"err": y}, log_y=True))
    assert [len(pl.get("points").split()) for pl in lines] == [2, 1]


def test_points_stay_inside_the_plot_area():
    svg = line_chart(np.arange(50), {"s": np.sin(np.arange(50))})
    pts = np.array([[float(v) for v in p.split(",")]
                    for p in _polylines(svg)[0].get("points").split()])
    assert pts[:, 0].min() >= 70 and pts[:, 0].max() <= 570
    assert pts[:, 1].min() >= 30 and pts[:, 1].max() <= 320


def test_csv_round_trip(tmp_path):
    path = tmp_path / "demo.csv"
    path.write_text("# manifest-sha256: 0\nk,a,b\n0,1.0,\n1,2.0,3.0\n")
    header, data = read_plot_csv(path)
    assert header == ["k", "a", "b"] and np.isnan(data[0, 2])
    assert len(_polylines(chart_from_csv(path).read_text())) == 2


def test_run_writes_charts_on_request(tmp_path):
    assert main(["run", "-m", str(DATA / "example1.yaml"), "--out", str(tmp_path), "--svg"]) == 0
    for name in ("error", "step_sizes"):
        ET.parse(tmp_path / f"{name}.svg")
