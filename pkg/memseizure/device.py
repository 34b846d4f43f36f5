"""憶阻器件模型：R_ON/R_OFF 統計採樣、離散電導狀態與單列方案的鏡像偏置 g_m"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidParameterError

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
StateCount = Union[int, Literal["continuous"]]
SeedLike = Union[int, Sequence[int], np.random.SeedSequence, np.random.Generator, None]

# 量化時判定「剛好在中點」的容差（以相鄰狀態間距為單位）
TIE_TOLERANCE = 1e-9


class DeviceParameters(BaseModel):
    """器件的統計參數；R_OFF 的標準差固定為 2·sigma"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    r_on_mean: float = Field(100.0, gt=0, description="R_ON 平均值 (Ω)")
    r_off_mean: float = Field(2500.0, gt=0, description="R_OFF 平均值 (Ω)")
    sigma: float = Field(0.0, ge=0, description="R_ON 標準差 (Ω)")
    n_states: StateCount = Field(CONTINUOUS, description="離散電導狀態數，或 continuous")
    r_min: float = Field(1.0, gt=0, description="採樣結果的下限 (Ω)")

    @field_validator("n_states")
    @classmethod
    def _check_states(cls, value):
        if value != CONTINUOUS and value < 2:
            raise ValueError("n_states 必須 ≥ 2 或為 'continuous'")
        return value

    @model_validator(mode="after")
    def _check_window(self):
        if self.r_off_mean <= self.r_on_mean:
            raise ValueError("r_off_mean 必須大於 r_on_mean")
        return self

    @property
    def is_continuous(self) -> bool:
        return self.n_states == CONTINUOUS

    @property
    def g_on(self) -> float:
        return 1.0 / self.r_on_mean

    @property
    def g_off(self) -> float:
        return 1.0 / self.r_off_mean


# 預設的標稱器件：R_ON=100 Ω，R_OFF=2500 Ω，無變異
NOMINAL = DeviceParameters()


@dataclass(frozen=True)
class DeviceInstance:
    """單個採樣後的器件"""

    r_on: float
    r_off: float
    states: Tuple[float, ...] = ()

    @property
    def g_low(self) -> float:
        return 1.0 / max(self.r_on, self.r_off)

    @property
    def g_high(self) -> float:
        return 1.0 / min(self.r_on, self.r_off)


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_device(params: DeviceParameters, seed: SeedLike) -> DeviceInstance:
    """從正態分佈採樣一個器件，負值或過小的值夾到 r_min"""
    rng = _rng(seed)
    if params.sigma > 0:
        r_on = rng.normal(params.r_on_mean, params.sigma)
        r_off = rng.normal(params.r_off_mean, 2.0 * params.sigma)
    else:
        r_on, r_off = params.r_on_mean, params.r_off_mean
    device = DeviceInstance(r_on=float(max(r_on, params.r_min)), r_off=float(max(r_off, params.r_min)))
    return DeviceInstance(device.r_on, device.r_off, build_states(device, params.n_states))


def build_states(device: DeviceInstance, n_states: StateCount) -> Tuple[float, ...]:
    """在 1/r_off 與 1/r_on 之間均勻分佈的電導狀態；continuous 返回空元組"""
    if n_states == CONTINUOUS:
        return ()
    if n_states < 2:
        raise InvalidParameterError(f"n_states 必須 ≥ 2: {n_states}")

    if device.r_on >= device.r_off:
        # 採樣後分佈重疊：狀態集合退化為排序後的端點對
        return tuple(sorted({1.0 / device.r_on, 1.0 / device.r_off}))
    return tuple(float(g) for g in np.linspace(1.0 / device.r_off, 1.0 / device.r_on, n_states))


def quantize(g: float, states: Sequence[float], bounds: Optional[Tuple[float, float]] = None) -> float:
    """投影到最近的狀態，中點平局取較低的狀態

    無狀態（連續）時夾到 bounds，未給出 bounds 則用標稱器件的 [g_off, g_on]。
    """
    if len(states) == 0:
        if bounds is None:
            bounds = (NOMINAL.g_off, NOMINAL.g_on)
        return float(min(max(g, bounds[0]), bounds[1]))

    levels = np.asarray(states, dtype=np.float64)
    distance = np.abs(levels - g)
    scale = max(float(np.max(np.abs(levels))), abs(g), np.finfo(np.float64).tiny)
    # argmin 在精確平局時已經返回較低的索引，容差處理浮點誤差造成的假平局
    candidates = np.flatnonzero(distance <= distance.min() + 1e-12 * scale)
    return float(levels[candidates[0]])


def mirror_offset(r_on_mean: float, r_off_mean: float) -> float:
    """單列方案的電流鏡偏置 g_m = -2 / (R_ON + R_OFF)"""
    if r_on_mean <= 0 or r_off_mean <= 0:
        raise InvalidParameterError(f"電阻必須為正: r_on={r_on_mean}, r_off={r_off_mean}")
    return -2.0 / (r_on_mean + r_off_mean)


@dataclass(frozen=True)
class DeviceArray:
    """一整塊交叉陣列的器件，每個單元獨立採樣"""

    r_on: np.ndarray
    r_off: np.ndarray
    n_states: StateCount = CONTINUOUS

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.r_on.shape

    @property
    def g_low(self) -> np.ndarray:
        return 1.0 / np.maximum(self.r_on, self.r_off)

    @property
    def g_high(self) -> np.ndarray:
        return 1.0 / np.minimum(self.r_on, self.r_off)

    def _level_counts(self) -> np.ndarray:
        overlapped = self.r_on >= self.r_off
        return np.where(overlapped, 2, self.n_states)

    def device(self, index: Tuple[int, ...]) -> DeviceInstance:
        """取出單個單元（調試和導出用）"""
        instance = DeviceInstance(float(self.r_on[index]), float(self.r_off[index]))
        return DeviceInstance(instance.r_on, instance.r_off, build_states(instance, self.n_states))

    def state_table(self) -> np.ndarray:
        """每個單元的狀態表，形狀 shape + (n_states,)；重疊單元只有前兩列有效"""
        if self.n_states == CONTINUOUS:
            return np.empty(self.shape + (0,))
        low, high = self.g_low[..., None], self.g_high[..., None]
        counts = self._level_counts()[..., None]
        j = np.arange(self.n_states)
        step = (high - low) / (counts - 1)
        table = np.where(j >= counts - 1, high, j * step + low)
        return table

    def quantize_array(self, targets: np.ndarray) -> np.ndarray:
        """逐單元量化目標電導，規則與 quantize 相同"""
        low, high = self.g_low, self.g_high
        if self.n_states == CONTINUOUS:
            return np.clip(targets, low, high)

        counts = self._level_counts()
        span = high - low
        step = np.divide(span, counts - 1, out=np.zeros_like(span), where=span > 0)
        position = np.divide(targets - low, step, out=np.zeros_like(span), where=step > 0)
        index = np.clip(np.ceil(position - 0.5 - TIE_TOLERANCE), 0, counts - 1)
        return np.where(index >= counts - 1, high, index * step + low)


def sample_devices(params: DeviceParameters, shape: Tuple[int, ...], seed: SeedLike) -> DeviceArray:
    """按行優先順序為每個單元採樣：先整個 R_ON 網格，再整個 R_OFF 網格"""
    rng = _rng(seed)
    if params.sigma > 0:
        r_on = rng.normal(params.r_on_mean, params.sigma, size=shape)
        r_off = rng.normal(params.r_off_mean, 2.0 * params.sigma, size=shape)
        np.maximum(r_on, params.r_min, out=r_on)
        np.maximum(r_off, params.r_min, out=r_off)
    else:
        r_on = np.full(shape, params.r_on_mean, dtype=np.float64)
        r_off = np.full(shape, params.r_off_mean, dtype=np.float64)

    overlap = float(np.mean(r_on >= r_off)) if r_on.size else 0.0
    if overlap > 0:
        logger.debug("採樣 %s 個單元，其中 %.2f%% 的 R_ON ≥ R_OFF", r_on.size, 100 * overlap)
    return DeviceArray(r_on=r_on, r_off=r_off, n_states=params.n_states)
