"""運行配置：YAML 文件 + 環境變量（.env）+ 命令列覆蓋"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .costmodel import HardwareParams
from .crossbar import CrossbarSettings
from .device import DeviceParameters
from .errors import ConfigError
from .evaluation import SweepSettings
from .network import NetworkSpec
from .preprocess import ClinicalWindows
from .training import TrainingSettings

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "config.yaml"
ENV_CONFIG = "MEMSEIZE_CONFIG"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
ENV_OVERRIDES = {
    "MEMSEIZE_OUTPUT_DIR": ("paths", "output_dir"),
    "MEMSEIZE_DATA_DIR": ("paths", "data_dir"),
    "MEMSEIZE_LOG_LEVEL": ("log_level",),
}


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    data_dir: Path = Path("data")
    output_dir: Path = Path("output")
    dataset_dir: Optional[Path] = None
    weights_dir: Optional[Path] = None

    @property
    def dataset(self) -> Path:
        return self.dataset_dir or self.output_dir / "dataset"

    @property
    def weights(self) -> Path:
        return self.weights_dir or self.output_dir / "weights"


class RunConfig(BaseModel):
    """一次運行的全部參數"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(..., ge=0)
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"
    channels: Optional[int] = Field(None, ge=1)
    paths: PathsConfig = PathsConfig()
    network: NetworkSpec = NetworkSpec()
    clinical: ClinicalWindows = ClinicalWindows()
    device: DeviceParameters = DeviceParameters()
    crossbar: CrossbarSettings = CrossbarSettings()
    hardware: HardwareParams = HardwareParams()
    training: TrainingSettings = TrainingSettings()
    sweep: SweepSettings = SweepSettings()

    @model_validator(mode="after")
    def _check_window(self):
        if self.network.t != self.clinical.window_len:
            raise ValueError(f"network.t ({self.network.t}) 必須等於 clinical.window_len ({self.clinical.window_len})")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ValueError(f"未知的日誌級別: {self.log_level}")
        return self

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False, allow_unicode=True)


def _set(data: Dict[str, Any], keys, value) -> None:
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config_path(path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    if path is not None:
        return Path(path)
    env = os.environ.get(ENV_CONFIG)
    if env:
        return Path(env)
    default = Path(DEFAULT_CONFIG)
    return default if default.exists() else None


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    use_env: bool = True,
) -> RunConfig:
    """依次合併：YAML 文件、環境變量、overrides；驗證失敗統一拋出 ConfigError"""
    if use_env:
        load_dotenv(override=False)
    config_path = resolve_config_path(path)
    data: Dict[str, Any] = {}
    if config_path is not None:
        try:
            data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        except OSError as e:
            raise ConfigError(f"讀取配置文件失敗: {config_path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"配置文件不是有效的 YAML: {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件頂層必須是映射: {config_path}")
    else:
        logger.warning("沒有找到配置文件，使用默認值 (seed=0)")
        data = {"seed": 0}

    if use_env:
        for variable, keys in ENV_OVERRIDES.items():
            value = os.environ.get(variable)
            if value:
                _set(data, keys, value)
    data = _merge(data, overrides or {})

    try:
        return RunConfig(**data)
    except ValidationError as e:
        source = config_path or "默認配置"
        raise ConfigError(f"配置無效 ({source}): {e}") from e
