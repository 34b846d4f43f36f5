"""把權重矩陣映射到分塊交叉陣列，並通過器件電導計算向量-矩陣乘法"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .device import DeviceArray, DeviceParameters, SeedLike, mirror_offset, sample_devices
from .errors import InvalidInputError, ShapeMismatchError
from .fileio import atomic_write_csv

logger = logging.getLogger(__name__)

DEFAULT_READ_VOLTAGE = 0.3


class WeightScheme(str, Enum):
    """權重表示方案"""

    DOUBLE_COLUMN = "double"
    SINGLE_COLUMN = "single"


class TileConfig(BaseModel):
    """交叉陣列分塊尺寸"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tile_rows: int = Field(128, ge=1)
    tile_cols: int = Field(128, ge=1)


class CrossbarSettings(BaseModel):
    """推理時的映射選項"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scheme: WeightScheme = WeightScheme.DOUBLE_COLUMN
    tile: TileConfig = TileConfig()
    read_voltage: float = Field(DEFAULT_READ_VOLTAGE, gt=0)
    fold_batchnorm: bool = False


def partition(rows: int, cols: int, tile: Optional[TileConfig] = None) -> Tuple[int, int]:
    """邏輯矩陣需要的分塊網格 (行塊數, 列塊數)"""
    tile = tile or TileConfig()
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"矩陣尺寸必須 ≥ 1: {rows}×{cols}")
    return math.ceil(rows / tile.tile_rows), math.ceil(cols / tile.tile_cols)


@dataclass(frozen=True)
class MappedLayer:
    """已編程到交叉陣列上的一層權重

    雙列方案保存正負兩個電導網格；單列方案只用 g_pos，並記錄鏡像偏置 g_m
    與數字參考電導 g_ref（標稱中點電導加 g_m，用來抵消偏置後的殘餘電流）。
    """

    logical_rows: int
    logical_cols: int
    scheme: WeightScheme
    k_scale: float
    tile: TileConfig
    read_voltage: float
    g_target_pos: np.ndarray
    g_pos: np.ndarray
    devices_pos: DeviceArray
    g_target_neg: Optional[np.ndarray] = None
    g_neg: Optional[np.ndarray] = None
    devices_neg: Optional[DeviceArray] = None
    g_m: float = 0.0
    g_ref: float = 0.0

    @property
    def tile_grid(self) -> Tuple[int, int]:
        return partition(self.logical_rows, self.logical_cols, self.tile)

    @property
    def tile_count(self) -> int:
        rows, cols = self.tile_grid
        return rows * cols

    def tiles(self) -> Iterator[Tuple[int, int, slice, slice]]:
        """按固定順序遍歷分塊：先行塊，再列塊"""
        for tr in range(0, self.logical_rows, self.tile.tile_rows):
            for tc in range(0, self.logical_cols, self.tile.tile_cols):
                yield (
                    tr // self.tile.tile_rows,
                    tc // self.tile.tile_cols,
                    slice(tr, min(tr + self.tile.tile_rows, self.logical_rows)),
                    slice(tc, min(tc + self.tile.tile_cols, self.logical_cols)),
                )

    def effective_weights(self) -> np.ndarray:
        """編程後的陣列實際實現的權重矩陣"""
        if self.scheme == WeightScheme.DOUBLE_COLUMN:
            return self.k_scale * (self.g_pos - self.g_neg)
        return self.k_scale * (self.g_pos + self.g_m - self.g_ref)


def map_weights(
    weights: np.ndarray,
    scheme: Union[WeightScheme, str],
    device_params: DeviceParameters,
    tile: Optional[TileConfig] = None,
    seed: SeedLike = 0,
    read_voltage: float = DEFAULT_READ_VOLTAGE,
) -> MappedLayer:
    """把 rows×cols 權重矩陣映射為電導，再經過逐單元採樣和量化"""
    tile = tile or TileConfig()
    scheme = WeightScheme(scheme)
    matrix = np.asarray(weights, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise InvalidInputError(f"權重必須是非空二維矩陣，實際形狀 {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError("權重包含非有限值")

    rows, cols = matrix.shape
    g_on, g_off = device_params.g_on, device_params.g_off
    g_range = g_on - g_off
    w_max = float(np.max(np.abs(matrix)))

    if scheme == WeightScheme.DOUBLE_COLUMN:
        devices = sample_devices(device_params, (2, rows, cols), seed)
        pos_devices = DeviceArray(devices.r_on[0], devices.r_off[0], devices.n_states)
        neg_devices = DeviceArray(devices.r_on[1], devices.r_off[1], devices.n_states)
        if w_max == 0.0:
            target_pos = np.full(matrix.shape, g_off)
            target_neg = np.full(matrix.shape, g_off)
            k_scale = 1.0
        else:
            target_pos = g_off + (np.clip(matrix, 0.0, None) / w_max) * g_range
            target_neg = g_off + (np.clip(-matrix, 0.0, None) / w_max) * g_range
            k_scale = w_max / g_range
        return MappedLayer(
            logical_rows=rows,
            logical_cols=cols,
            scheme=scheme,
            k_scale=k_scale,
            tile=tile,
            read_voltage=read_voltage,
            g_target_pos=target_pos,
            g_pos=pos_devices.quantize_array(target_pos),
            devices_pos=pos_devices,
            g_target_neg=target_neg,
            g_neg=neg_devices.quantize_array(target_neg),
            devices_neg=neg_devices,
        )

    devices = sample_devices(device_params, (rows, cols), seed)
    g_m = mirror_offset(device_params.r_on_mean, device_params.r_off_mean)
    if w_max == 0.0:
        target = np.full(matrix.shape, g_off + 0.5 * g_range)
        k_scale = 1.0
    else:
        target = g_off + ((matrix + w_max) / (2.0 * w_max)) * g_range
        k_scale = 2.0 * w_max / g_range
    return MappedLayer(
        logical_rows=rows,
        logical_cols=cols,
        scheme=scheme,
        k_scale=k_scale,
        tile=tile,
        read_voltage=read_voltage,
        g_target_pos=target,
        g_pos=devices.quantize_array(target),
        devices_pos=devices,
        g_m=g_m,
        g_ref=g_off + 0.5 * g_range + g_m,
    )


def _column_currents(voltages: np.ndarray, conductance: np.ndarray, layer: MappedLayer) -> np.ndarray:
    currents = np.zeros((voltages.shape[0], layer.logical_cols))
    for _, _, rows, cols in layer.tiles():
        currents[:, cols] += voltages[:, rows] @ conductance[rows, cols]
    return currents


def vmm_batch(layer: MappedLayer, inputs: np.ndarray) -> np.ndarray:
    """對每一行輸入做一次交叉陣列 VMM；每行單獨歸一化到 ±read_voltage"""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.logical_rows:
        raise ShapeMismatchError(f"輸入維度 {x.shape} 與陣列行數 {layer.logical_rows} 不符")

    x_max = np.max(np.abs(x), axis=1) if x.size else np.zeros(x.shape[0])
    active = x_max > 0
    safe_max = np.where(active, x_max, 1.0)
    voltages = (x / safe_max[:, None]) * layer.read_voltage
    voltages[~active] = 0.0

    if layer.scheme == WeightScheme.DOUBLE_COLUMN:
        currents = _column_currents(voltages, layer.g_pos, layer) - _column_currents(voltages, layer.g_neg, layer)
    else:
        currents = _column_currents(voltages, layer.g_pos + layer.g_m, layer)
        currents -= layer.g_ref * voltages.sum(axis=1, keepdims=True)

    rescale = layer.k_scale * (safe_max / layer.read_voltage)
    outputs = currents * rescale[:, None]
    outputs[~active] = 0.0
    return outputs


def vmm(layer: MappedLayer, x: np.ndarray) -> np.ndarray:
    """單個輸入向量的 VMM，輸出長度為 logical_cols"""
    vector = np.asarray(x, dtype=np.float64)
    if vector.ndim != 1:
        raise ShapeMismatchError(f"vmm 需要一維輸入，實際形狀 {vector.shape}")
    return vmm_batch(layer, vector[None, :])[0]


def export_conductances(layers: Mapping[str, MappedLayer], path: Union[str, Path]) -> int:
    """把每個單元的目標電導和編程電導寫成 CSV，返回數據行數"""
    rows_out = []
    for name, layer in layers.items():
        grids = [("pos", layer.g_target_pos, layer.g_pos)]
        if layer.scheme == WeightScheme.DOUBLE_COLUMN:
            grids.append(("neg", layer.g_target_neg, layer.g_neg))
        for grid_name, target, programmed in grids:
            for tile_row, tile_col, rows, cols in layer.tiles():
                for i in range(rows.start, rows.stop):
                    for j in range(cols.start, cols.stop):
                        rows_out.append([name, grid_name, tile_row, tile_col, i, j,
                                         float(target[i, j]), float(programmed[i, j])])
    header = ["layer", "grid", "tile_row", "tile_col", "row", "col", "g_target", "g_programmed"]
    atomic_write_csv(path, header, rows_out)
    return len(rows_out)
