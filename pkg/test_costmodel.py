"""TDM 與並行讀出的功耗、面積、延遲、能耗"""

import csv

import pytest

from memseizure.costmodel import (
    HardwareParams,
    ReadoutMode,
    duplication_plan,
    estimate,
    format_table,
    layer_tiles,
    tile_count,
    write_cost_csv,
)
from memseizure.network import LayerShape, NetworkSpec

SPEC = NetworkSpec()


def test_tile_counts():
    assert layer_tiles(SPEC) == {"conv1": 5, "conv2": 2, "conv3": 3, "fc1": 10, "fc2": 2}
    assert tile_count(SPEC) == 22


def test_duplication_plan():
    plan = duplication_plan(SPEC)
    assert plan.duplicates == {"conv1": 28, "conv2": 12, "conv3": 4, "fc1": 1, "fc2": 1}
    assert plan.steps == {"conv1": 55, "conv2": 25, "conv3": 10, "fc1": 1, "fc2": 1}
    assert plan.bottleneck == 55


def test_tdm_report_values():
    report = estimate(SPEC, mode=ReadoutMode.TDM)
    assert report.power == pytest.approx(0.0133, rel=0.01)
    assert report.area == pytest.approx(0.1269, rel=0.01)
    assert report.latency == pytest.approx(1.408, rel=0.01)
    assert report.energy == pytest.approx(0.0187, rel=0.01)
    assert report.tile_count == 22


def test_parallel_report_values():
    report = estimate(SPEC, mode="parallel")
    assert report.power == pytest.approx(1.7, rel=0.01)
    assert report.area == pytest.approx(8.5089, rel=0.01)
    assert report.latency == pytest.approx(0.011, rel=0.01)
    assert report.energy == pytest.approx(0.0187, rel=0.01)


def test_single_fc_layer_hand_formula():
    layers = [LayerShape("fc", "fc", (10,), 100, 10)]
    hw = HardwareParams()
    tdm = estimate(layers, hw, ReadoutMode.TDM)
    assert tdm.tile_count == 1
    assert tdm.area == pytest.approx(128 * 128 * 1.69e-7 + 3e-3)
    assert tdm.latency == pytest.approx(128 / 5e6 * 1e3)
    assert tdm.power == pytest.approx(2e-4 + 128 * 0.3 ** 2 / 1300)
    assert tdm.energy == pytest.approx(tdm.power * tdm.latency)

    parallel = estimate(layers, hw, ReadoutMode.PARALLEL)
    assert parallel.area == pytest.approx(128 * 128 * 1.69e-7 + 128 * 3e-3)
    assert parallel.latency == pytest.approx(1 / 5e6 * 1e3)
    assert parallel.power == pytest.approx(128 * 2e-4 + 128 * 128 * 0.3 ** 2 / 1300)


def test_strict_double_column_doubles_tiles():
    normal = estimate(SPEC)
    strict = estimate(SPEC, strict_double_column=True)
    assert strict.tile_count == 44
    assert strict.area == pytest.approx(2 * normal.area)
    assert strict.latency == normal.latency


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        estimate(SPEC, mode="serial")


def test_table_and_csv(tmp_path):
    reports = [estimate(SPEC, mode=mode) for mode in ReadoutMode]
    table = format_table(reports)
    assert "TDM" in table and "Parallelized" in table
    assert "22" in table and "188" in table

    path = write_cost_csv(reports, tmp_path / "cost.csv")
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["mode"] for row in rows] == ["tdm", "parallel"]
    assert float(rows[0]["latency_ms"]) == pytest.approx(1.408)
    assert rows[0]["duplicates"] == "conv1:28;conv2:12;conv3:4;fc1:1;fc2:1"
