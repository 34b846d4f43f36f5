"""窗口數據集目錄：windows.bin（小端 float32，每個窗口 n×p×114 行優先）、index.csv、meta.yaml"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import yaml

from .errors import InvalidInputError, MissingInputError, ShapeMismatchError
from .fileio import atomic_write_bytes, atomic_write_csv, atomic_write_text

logger = logging.getLogger(__name__)

WINDOWS_FILE = "windows.bin"
INDEX_FILE = "index.csv"
META_FILE = "meta.yaml"
INDEX_HEADER = ["window_id", "source", "offset", "label", "synthetic"]

INTERICTAL = 0
PREICTAL = 1
LABEL_NAMES = {INTERICTAL: "interictal", PREICTAL: "preictal"}
LABEL_VALUES = {name: value for value, name in LABEL_NAMES.items()}


@dataclass
class WindowDataset:
    """已標註的窗口集合；類別索引 1 為發作前期"""

    windows: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray
    sources: np.ndarray
    offsets: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.windows = np.asarray(self.windows)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        self.sources = np.asarray(self.sources, dtype=object)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        count = self.windows.shape[0]
        if self.windows.ndim != 4:
            raise ShapeMismatchError(f"窗口張量必須是四維 (N, n, p, bins)，實際 {self.windows.shape}")
        for name in ("labels", "synthetic", "sources", "offsets"):
            if getattr(self, name).shape != (count,):
                raise ShapeMismatchError(f"{name} 長度與窗口數 {count} 不一致")
        if not np.isin(self.labels, list(LABEL_NAMES)).all():
            raise InvalidInputError("標籤必須是 0（發作間期）或 1（發作前期）")

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    @property
    def window_shape(self):
        return tuple(self.windows.shape[1:])

    @property
    def real_mask(self) -> np.ndarray:
        return ~self.synthetic

    def class_counts(self) -> Dict[str, int]:
        return {name: int(np.sum(self.labels == value)) for value, name in LABEL_NAMES.items()}

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(directory / WINDOWS_FILE, np.ascontiguousarray(self.windows, dtype="<f4").tobytes(order="C"))
        rows = [
            [i, self.sources[i], float(self.offsets[i]), LABEL_NAMES[int(self.labels[i])], int(self.synthetic[i])]
            for i in range(len(self))
        ]
        atomic_write_csv(directory / INDEX_FILE, INDEX_HEADER, rows)
        meta = dict(self.meta)
        meta["window_shape"] = list(self.window_shape)
        meta["windows"] = len(self)
        meta["class_counts"] = self.class_counts()
        meta["synthetic"] = int(self.synthetic.sum())
        atomic_write_text(directory / META_FILE, yaml.safe_dump(meta, sort_keys=True))
        logger.info("數據集已寫入 %s: %d 個窗口 %s", directory, len(self), meta["class_counts"])
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "WindowDataset":
        directory = Path(directory)
        try:
            meta = yaml.safe_load((directory / META_FILE).read_text(encoding="utf-8")) or {}
            with open(directory / INDEX_FILE, newline="", encoding="utf-8") as handle:
                rows = list(csv.DictReader(handle))
            blob = (directory / WINDOWS_FILE).read_bytes()
        except OSError as e:
            raise MissingInputError(f"讀取數據集失敗: {e}") from e

        shape = tuple(int(d) for d in meta.get("window_shape", ()))
        if len(shape) != 3:
            raise InvalidInputError(f"{directory / META_FILE} 缺少 window_shape")
        per_window = int(np.prod(shape))
        if len(blob) != len(rows) * per_window * 4:
            raise InvalidInputError(
                f"{WINDOWS_FILE} 大小 {len(blob)} 與 {len(rows)} 個 {shape} 窗口不符"
            )
        try:
            labels = [LABEL_VALUES[row["label"]] for row in rows]
            synthetic = [row["synthetic"] == "1" for row in rows]
            offsets = [float(row["offset"]) for row in rows]
        except (KeyError, ValueError) as e:
            raise InvalidInputError(f"index.csv 格式錯誤: {e}") from e
        windows = np.frombuffer(blob, dtype="<f4").reshape((len(rows),) + shape).astype(np.float64)
        return cls(
            windows=windows,
            labels=np.array(labels, dtype=np.int64),
            synthetic=np.array(synthetic, dtype=bool),
            sources=np.array([row["source"] for row in rows], dtype=object),
            offsets=np.array(offsets),
            meta=meta,
        )
