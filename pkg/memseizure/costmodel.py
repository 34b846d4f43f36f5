"""分塊交叉陣列的功耗/面積/延遲/能耗解析估算（TDM 與每列一個 ADC 的並行讀出）"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field

from .crossbar import TileConfig, partition
from .fileio import atomic_write_csv
from .network import LayerShape, NetworkSpec

logger = logging.getLogger(__name__)

LayerSource = Union[NetworkSpec, Sequence[LayerShape]]
COST_HEADER = ["mode", "power_w", "area_mm2", "latency_ms", "energy_mj", "tile_count",
               "duplicated_tile_count", "strict_double_column", "duplicates", "steps"]


class ReadoutMode(str, Enum):
    TDM = "tdm"
    PARALLEL = "parallel"


class HardwareParams(BaseModel):
    """外圍電路與器件參數；面積 mm²，功耗 W，頻率 Hz，電阻 Ω"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    adc_area: float = Field(3e-3, gt=0)
    adc_power: float = Field(2e-4, gt=0)
    adc_rate: float = Field(5e6, gt=0)
    cell_area: float = Field(1.69e-7, gt=0)
    read_voltage: float = Field(0.3, gt=0)
    r_avg: float = Field(1300.0, gt=0)
    tile: TileConfig = TileConfig()


@dataclass(frozen=True)
class DuplicationPlan:
    duplicates: Dict[str, int]
    steps: Dict[str, int]

    @property
    def bottleneck(self) -> int:
        return max(self.steps.values()) if self.steps else 0


@dataclass(frozen=True)
class CostReport:
    mode: ReadoutMode
    power: float
    area: float
    latency: float
    energy: float
    tile_count: int
    duplicated_tile_count: int
    duplicates: Dict[str, int]
    steps: Dict[str, int]
    strict_double_column: bool = False


def _mapped_layers(layers: LayerSource) -> List[LayerShape]:
    if isinstance(layers, NetworkSpec):
        layers = layers.layer_shapes()
    return [layer for layer in layers if layer.kind in ("conv", "fc")]


def layer_tiles(layers: LayerSource, tile: TileConfig = TileConfig()) -> Dict[str, int]:
    result = {}
    for layer in _mapped_layers(layers):
        rows, cols = partition(layer.fan_in, layer.fan_out, tile)
        result[layer.name] = rows * cols
    return result


def tile_count(layers: LayerSource, tile: TileConfig = TileConfig()) -> int:
    """Σ ceil(扇入/128)·ceil(扇出/128)；每個邏輯權重只佔一列"""
    return sum(layer_tiles(layers, tile).values())


def duplication_plan(layers: LayerSource) -> DuplicationPlan:
    """卷積層按輸出行複製，每份依次處理一行中的各輸出列；全連接層只需一步"""
    duplicates, steps = {}, {}
    for layer in _mapped_layers(layers):
        if layer.kind == "conv":
            _, height, width = layer.output
            duplicates[layer.name] = max(1, height)
            steps[layer.name] = max(1, width)
        else:
            duplicates[layer.name] = 1
            steps[layer.name] = 1
    return DuplicationPlan(duplicates, steps)


def estimate(
    layers: LayerSource,
    hw: HardwareParams = HardwareParams(),
    mode: Union[ReadoutMode, str] = ReadoutMode.TDM,
    strict_double_column: bool = False,
) -> CostReport:
    """面積按未複製的分塊計算，延遲按複製後的流水線瓶頸計算"""
    mode = ReadoutMode(mode)
    rows, cols = hw.tile.tile_rows, hw.tile.tile_cols
    per_layer = layer_tiles(layers, hw.tile)
    plan = duplication_plan(layers)
    factor = 2 if strict_double_column else 1
    tiles = factor * sum(per_layer.values())
    duplicated = factor * sum(per_layer[name] * plan.duplicates[name] for name in per_layer)

    if mode == ReadoutMode.TDM:
        adcs_per_tile = 1
        t_vmm = cols / hw.adc_rate
        active_cells = rows
    else:
        adcs_per_tile = cols
        t_vmm = 1.0 / hw.adc_rate
        active_cells = rows * cols

    area = tiles * (rows * cols * hw.cell_area + adcs_per_tile * hw.adc_area)
    latency_ms = plan.bottleneck * t_vmm * 1e3
    power = tiles * adcs_per_tile * hw.adc_power + active_cells * hw.read_voltage ** 2 / hw.r_avg
    energy_mj = power * latency_ms
    logger.debug("%s: %d 個分塊, 瓶頸 %d 步", mode.value, tiles, plan.bottleneck)
    return CostReport(
        mode=mode,
        power=power,
        area=area,
        latency=latency_ms,
        energy=energy_mj,
        tile_count=tiles,
        duplicated_tile_count=duplicated,
        duplicates=dict(plan.duplicates),
        steps=dict(plan.steps),
        strict_double_column=strict_double_column,
    )


def _significant(value: float, digits: int = 4) -> str:
    if value == 0 or not math.isfinite(value):
        return str(value)
    return f"{value:.{digits}g}"


def format_table(reports: Sequence[CostReport]) -> str:
    """表格形式的成本報告；頁腳說明面積與延遲對複製的假設不一致"""
    header = ["模式", "功耗 (W)", "面積 (mm²)", "延遲 (ms)", "能耗 (mJ)", "分塊數"]
    names = {ReadoutMode.TDM: "TDM", ReadoutMode.PARALLEL: "Parallelized"}
    rows = [
        [names[r.mode], _significant(r.power), _significant(r.area, 5), _significant(r.latency),
         _significant(r.energy, 3), str(r.tile_count)]
        for r in reports
    ]
    widths = [max(len(line[i]) for line in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in [header] + rows]
    lines.insert(1, "  ".join("-" * width for width in widths))

    if reports:
        first = reports[0]
        lines.append("")
        lines.append(
            f"注: 面積按 {first.tile_count} 個未複製的分塊計算，而延遲假設卷積層按輸出行複製"
            f"（共需 {first.duplicated_tile_count} 個分塊）；兩者互不一致，按原樣報告。"
        )
        if any(r.strict_double_column for r in reports):
            lines.append("注: strict_double_column 為雙列方案的加倍分塊變體，不屬於默認模型。")
    return "\n".join(lines)


def write_cost_csv(reports: Sequence[CostReport], path: Union[str, Path]) -> Path:
    rows = [
        [r.mode.value, r.power, r.area, r.latency, r.energy, r.tile_count, r.duplicated_tile_count,
         int(r.strict_double_column),
         ";".join(f"{name}:{count}" for name, count in r.duplicates.items()),
         ";".join(f"{name}:{count}" for name, count in r.steps.items())]
        for r in reports
    ]
    return atomic_write_csv(path, COST_HEADER, rows)
