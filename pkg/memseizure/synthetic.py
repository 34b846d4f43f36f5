"""合成數據：可分的玩具頻譜數據集，以及帶摘要文件的小型 EDF 目錄"""

import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .dataset import INTERICTAL, PREICTAL, WindowDataset
from .edf import EegRecord, write_edf
from .fileio import atomic_write_bytes, atomic_write_text
from .network import NetworkSpec

logger = logging.getLogger(__name__)

SUMMARY_FILE = "fixture-summary.txt"


def toy_dataset(
    count: int = 64,
    spec: NetworkSpec = NetworkSpec(n=1, t=30),
    seed: int = 0,
    separation: float = 3.0,
    noise: float = 0.5,
) -> WindowDataset:
    """兩類各半；每個窗口是一個時頻高斯團，發作前期的團位於低頻、發作間期位於高頻"""
    rng = np.random.default_rng(seed)
    _, p, bins = spec.input_shape
    frames = np.arange(p)[:, None]
    frequency = np.arange(bins)[None, :]
    labels = np.array([PREICTAL if i % 2 else INTERICTAL for i in range(count)], dtype=np.int64)

    windows = np.empty((count,) + spec.input_shape)
    for i, label in enumerate(labels):
        centre_f = bins * (0.25 if label == PREICTAL else 0.75) + rng.normal(0.0, 3.0)
        centre_t = p * 0.5 + rng.normal(0.0, p * 0.1)
        blob = np.exp(-((frames - centre_t) ** 2 / (2 * (p / 6) ** 2) + (frequency - centre_f) ** 2 / (2 * (bins / 12) ** 2)))
        windows[i] = separation * blob[None] + rng.normal(0.0, noise, size=spec.input_shape)

    return WindowDataset(
        windows=windows,
        labels=labels,
        synthetic=np.zeros(count, dtype=bool),
        sources=np.array(["toy"] * count, dtype=object),
        offsets=np.arange(count, dtype=np.float64) * spec.t,
        meta={
            "n": spec.n,
            "t": spec.t,
            "p": spec.p,
            "frequency_bins": spec.frequency_bins,
            "sample_rate": spec.sample_rate,
            "step": float(spec.t),
            "interictal_hours": float(np.sum(labels == INTERICTAL) * spec.t / 3600.0),
            "toy": True,
        },
    )


def _clock(seconds: int) -> str:
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


def fixture_signal(channels: int, seconds: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """10 Hz 正弦加白噪聲的數字樣本（物理範圍 ±1000 µV 對應滿量程 int16）"""
    time = np.arange(seconds * sample_rate) / sample_rate
    phases = rng.uniform(0.0, 2 * np.pi, size=(channels, 1))
    microvolts = 100.0 * np.sin(2 * np.pi * 10.0 * time[None, :] + phases)
    microvolts += rng.normal(0.0, 20.0, size=microvolts.shape)
    digital = np.round((microvolts + 1000.0) * 65535.0 / 2000.0 - 32768.0)
    return np.clip(digital, -32768, 32767).astype(np.int16)


def write_edf_fixtures(
    directory: Union[str, Path],
    files: int = 3,
    channels: int = 2,
    seconds_per_file: int = 600,
    seizures: Sequence[Tuple[int, int, int]] = ((2, 300, 340),),
    sample_rate: int = 256,
    seed: int = 0,
    start_clock: int = 11 * 3600,
) -> List[Path]:
    """寫出若干首尾相接的 EDF 文件和一個摘要文件；seizures 為 (文件序號, 開始秒, 結束秒)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = [f"EEG {i + 1:02d}" for i in range(channels)]

    lines = [f"Data Sampling Rate: {sample_rate} Hz", "*************************", ""]
    written = []
    for index in range(files):
        name = f"fixture_{index + 1:02d}.edf"
        begin = start_clock + index * seconds_per_file
        record = EegRecord.create(
            labels,
            fixture_signal(channels, seconds_per_file, sample_rate, rng),
            sample_rate,
            start_time=_clock(begin % 86400).replace(":", "."),
        )
        written.append(atomic_write_bytes(directory / name, write_edf(record)))

        own = [(start, end) for file_index, start, end in seizures if file_index == index]
        lines.append(f"File Name: {name}")
        lines.append(f"File Start Time: {_clock(begin)}")
        lines.append(f"File End Time: {_clock(begin + seconds_per_file)}")
        lines.append(f"Number of Seizures in File: {len(own)}")
        for number, (start, end) in enumerate(own, start=1):
            prefix = "Seizure" if len(own) == 1 else f"Seizure {number}"
            lines.append(f"{prefix} Start Time: {start} seconds")
            lines.append(f"{prefix} End Time: {end} seconds")
        lines.append("")

    atomic_write_text(directory / SUMMARY_FILE, "\n".join(lines))
    logger.info("已寫入 %d 個 EDF 文件到 %s", files, directory)
    return written
