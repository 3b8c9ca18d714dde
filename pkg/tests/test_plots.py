"""Figure writers render nonempty files and validate their inputs."""

from __future__ import annotations

import pytest

from pocketdraft import bench, plots


def test_training_curve(tmp_path):
    log = [(50, 1.0, 1.2), (100, 0.5, 0.8), (150, 0.3, 0.7)]
    out = plots.save_training_curve(log, tmp_path / "loss.png")
    assert out.stat().st_size > 0
    with pytest.raises(ValueError, match="empty"):
        plots.save_training_curve([], tmp_path / "none.png")


def test_score_histogram(tmp_path):
    out = plots.save_score_histogram(
        {"oracle": [-1.0, -0.5, -0.8], "predicted": [-0.9, -0.6]}, tmp_path / "hist.png"
    )
    assert out.stat().st_size > 0
    with pytest.raises(ValueError, match="nothing"):
        plots.save_score_histogram({"a": []}, tmp_path / "none.png")


def test_metric_bars(tmp_path):
    rows = [
        bench.PocketReport("p0", 2, -1.0, 0.5, 0.2, 0.4, 1.0),
        bench.PocketReport("p1", 4, -3.0, 1.0, 0.4, 0.6, 2.0),
    ]
    report = bench.build_report(rows)
    out = plots.save_metric_bars(report, tmp_path / "bars.png")
    assert out.stat().st_size > 0


def test_size_response(tmp_path):
    curve = [(6, -0.5), (10, -1.2), (14, -0.9)]
    out = plots.save_size_response(curve, tmp_path / "size.png")
    assert out.stat().st_size > 0
    with pytest.raises(ValueError, match="empty"):
        plots.save_size_response([], tmp_path / "none.png")
