"""權重容器：目錄內一個文本 manifest（名稱/形狀/字節偏移）加一個 weights.bin（小端 float32，行優先）"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .errors import InvalidInputError, MissingInputError
from .fileio import atomic_write_bytes, atomic_write_text
from .network import LayerWeights, NetworkSpec

logger = logging.getLogger(__name__)

MANIFEST = "manifest"
BLOB = "weights.bin"
HEADER = "# memseizure weights v1"
SPEC_KEYS = ("n", "t", "sample_rate", "hop", "frequency_bins")
DTYPE = np.dtype("<f4")


def save_weights(weights: LayerWeights, directory: Union[str, Path]) -> Path:
    """寫出容器；張量按規格中的固定順序排列"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights.validate()

    spec_line = " ".join(f"{key}={getattr(weights.spec, key)}" for key in SPEC_KEYS)
    lines = [HEADER, f"# {spec_line}"]
    blobs = []
    offset = 0
    for name in LayerWeights.expected_shapes(weights.spec):
        data = np.ascontiguousarray(weights[name], dtype=DTYPE)
        lines.append(f"{name}\t{','.join(str(d) for d in data.shape)}\t{offset}")
        blobs.append(data.tobytes(order="C"))
        offset += data.nbytes

    atomic_write_bytes(directory / BLOB, b"".join(blobs))
    atomic_write_text(directory / MANIFEST, "\n".join(lines) + "\n")
    logger.info("權重已寫入 %s (%d 字節)", directory, offset)
    return directory


def load_weights(directory: Union[str, Path]) -> LayerWeights:
    """讀取容器；float32 數據轉為 float64 供計算使用"""
    directory = Path(directory)
    try:
        manifest = (directory / MANIFEST).read_text(encoding="utf-8").splitlines()
        blob = (directory / BLOB).read_bytes()
    except OSError as e:
        raise MissingInputError(f"讀取權重容器失敗: {e}") from e

    if not manifest or manifest[0] != HEADER:
        raise InvalidInputError(f"{directory / MANIFEST} 不是權重 manifest")

    spec_fields: Dict[str, int] = {}
    tensors: Dict[str, np.ndarray] = {}
    for number, line in enumerate(manifest[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, value = item.partition("=")
                if key in SPEC_KEYS:
                    spec_fields[key] = int(value)
            continue
        try:
            name, shape_text, offset_text = line.split("\t")
            shape = tuple(int(d) for d in shape_text.split(",") if d)
            offset = int(offset_text)
        except ValueError as e:
            raise InvalidInputError(f"manifest 第 {number} 行格式錯誤: {line!r}") from e
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * DTYPE.itemsize
        if end > len(blob):
            raise InvalidInputError(f"{name} 超出 weights.bin 範圍 ({end} > {len(blob)})")
        tensors[name] = np.frombuffer(blob, dtype=DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)

    weights = LayerWeights(NetworkSpec(**spec_fields), tensors)
    weights.validate()
    return weights
