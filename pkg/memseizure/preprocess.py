"""從 EDF 錄音到已標註的頻譜窗口：STFT、頻帶去除、SOP/SPH 標註與重疊採樣平衡"""

import logging
import math
from dataclasses import dataclass, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal
from tqdm import tqdm

from .annotations import SeizureAnnotation, Timeline, build_timeline, parse_summary, select_leading
from .dataset import INTERICTAL, PREICTAL, WindowDataset
from .edf import read_edf
from .errors import InvalidInputError, InvalidParameterError, MissingInputError, ShapeMismatchError
from .network import FREQUENCY_BINS

logger = logging.getLogger(__name__)

SEGMENT_SECONDS = 1
POWER_LINE_BANDS = ((57, 63), (117, 123))
MAX_FREQUENCY = 128
RETAINED_BINS = np.array([
    k for k in range(1, MAX_FREQUENCY + 1)
    if not any(low <= k <= high for low, high in POWER_LINE_BANDS)
])
ALIGN_TOLERANCE = 1e-9


class ClinicalWindows(BaseModel):
    """臨床時間參數：SOP/SPH 為分鐘，窗口長度為秒，間期保護帶為小時"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sop: float = Field(30.0, gt=0)
    sph: float = Field(35.0, gt=0)
    window_len: int = Field(30, gt=0)
    interictal_guard: float = Field(4.0, gt=0)

    @property
    def sop_seconds(self) -> float:
        return self.sop * 60.0

    @property
    def sph_seconds(self) -> float:
        return self.sph * 60.0

    @property
    def guard_seconds(self) -> float:
        return self.interictal_guard * 3600.0


@dataclass(frozen=True)
class LabeledWindow:
    """一個窗口在錄音中的位置與標籤；頻譜由 DatasetBuilder 計算後存入 WindowDataset"""

    file_id: str
    offset: float
    label: int
    synthetic: bool = False
    position: float = 0.0


def spectrogram(window: np.ndarray, t: int, f_s: int) -> np.ndarray:
    """n×(t·f_s) 原始信號 → n×2t×114 的 ln(1+|STFT|)

    分段長度為一秒（1 Hz 頻率分辨率），hop 為半段，Hann 窗，尾部補零使幀數恰為 2t；
    丟棄 DC、57–63 Hz 與 117–123 Hz。每個通道先減去均值。
    """
    data = np.asarray(window, dtype=np.float64)
    if t < 1 or f_s < 2 * MAX_FREQUENCY or f_s % 2:
        raise InvalidParameterError(f"需要 t ≥ 1 且 f_s 為不小於 {2 * MAX_FREQUENCY} 的偶數: t={t}, f_s={f_s}")
    if data.ndim != 2 or data.shape[1] != t * f_s:
        raise ShapeMismatchError(f"窗口形狀 {data.shape} 應為 (n, {t * f_s})")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("窗口信號包含非有限值")

    segment = SEGMENT_SECONDS * f_s
    hop = segment // 2
    centered = data - data.mean(axis=1, keepdims=True)
    padded = np.pad(centered, ((0, 0), (0, hop)))
    _, _, z = signal.stft(
        padded,
        fs=f_s,
        window="hann",
        nperseg=segment,
        noverlap=segment - hop,
        boundary=None,
        padded=False,
        detrend=False,
        axis=-1,
    )
    # z: (n, 頻率, 幀)
    magnitude = np.abs(z[:, RETAINED_BINS, :]).transpose(0, 2, 1)
    return np.log1p(magnitude)


def _overlaps(a_start: float, a_end: float, b_start: float, b_end: float) -> bool:
    return a_start < b_end and b_start < a_end


def label_windows(
    timeline: Timeline,
    leading: Sequence[SeizureAnnotation],
    clinical: ClinicalWindows,
    all_seizures: Optional[Sequence[SeizureAnnotation]] = None,
) -> List[LabeledWindow]:
    """以步長 t 平鋪每個錄音並標註

    完全落在 [onset−SPH−SOP, onset−SPH] 內為發作前期；與 (onset−SPH, end+保護帶) 或
    onset−SPH−SOP 之前的保護帶相交的窗口被排除；其餘為發作間期。
    非前導發作同樣會排除其周圍的窗口，發作前期窗口也不能與任何發作的 (onset−SPH, end] 相交。
    """
    t = clinical.window_len
    sop, sph, guard = clinical.sop_seconds, clinical.sph_seconds, clinical.guard_seconds
    leading = list(leading)
    others = [s for s in (all_seizures if all_seizures is not None else leading) if s not in leading]

    bands = [(s.onset - sph - sop, s.onset - sph) for s in leading]
    excluded = []
    for s in leading:
        excluded.append((s.onset - sph, s.end + guard))
        excluded.append((s.onset - sph - sop - guard, s.onset - sph - sop))
    for s in others:
        excluded.append((s.onset - sph - sop - guard, s.end + guard))
    forbidden = [(s.onset - sph, s.end) for s in list(leading) + others]

    windows: List[LabeledWindow] = []
    for recording in timeline.recordings:
        count = int(math.floor(recording.duration / t + ALIGN_TOLERANCE))
        for k in range(count):
            start = recording.start + k * t
            end = start + t
            preictal = any(low <= start and end <= high for low, high in bands) and not any(
                _overlaps(start, end, low, high) for low, high in forbidden
            )
            if preictal:
                label = PREICTAL
            elif any(_overlaps(start, end, low, high) for low, high in excluded):
                continue
            else:
                label = INTERICTAL
            windows.append(LabeledWindow(recording.file_id, float(k * t), label, False, float(start)))
    return windows


def preictal_spans(windows: Iterable[LabeledWindow], t: int) -> List[Tuple[str, float, float]]:
    """把連續的發作前期窗口合併為 (文件, 開始, 結束) 區間（文件內秒數）"""
    spans: List[List] = []
    for window in sorted((w for w in windows if w.label == PREICTAL), key=lambda w: (w.position, w.file_id)):
        if spans and spans[-1][0] == window.file_id and abs(spans[-1][2] - window.offset) < ALIGN_TOLERANCE:
            spans[-1][2] = window.offset + t
        else:
            spans.append([window.file_id, window.offset, window.offset + t])
    return [tuple(span) for span in spans]


@dataclass(frozen=True)
class OverlapPlan:
    """重疊採樣結果：步長 S（秒）與生成的發作前期窗口"""

    step: float
    windows: Tuple[LabeledWindow, ...]


def balance_overlap(spans: Sequence[Tuple[str, float, float]], n_interictal: int, t: int) -> OverlapPlan:
    """在拼接後的發作前期區間上以步長 S = (D − t)/(n − 1) 滑動窗口，生成 n 個窗口

    跨越區間邊界的窗口向前移到區間末端；文件內偏移不是 t 的整數倍的窗口標記為合成樣本。
    短於 t 的區間放不下窗口，直接丟棄；D < t 時返回空計劃，D == t 時只有一個窗口。
    """
    if n_interictal < 1:
        raise InvalidParameterError(f"發作間期窗口數必須 ≥ 1: {n_interictal}")
    usable = [span for span in spans if span[2] - span[1] >= t - ALIGN_TOLERANCE]
    if len(usable) < len(spans):
        logger.debug("丟棄 %d 個短於 %d s 的發作前期區間", len(spans) - len(usable), t)
    spans = usable
    lengths = [end - start for _, start, end in spans]
    total = float(sum(lengths))
    if total < t - ALIGN_TOLERANCE:
        logger.warning("沒有發作前期數據，無法平衡")
        return OverlapPlan(float(t), ())

    if n_interictal == 1 or total <= t + ALIGN_TOLERANCE:
        step = float(t)
        offsets = [0.0]
    else:
        step = (total - t) / (n_interictal - 1)
        offsets = [k * step for k in range(n_interictal)]

    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    windows = []
    for u in offsets:
        index = int(np.searchsorted(cumulative, u + ALIGN_TOLERANCE, side="right") - 1)
        index = min(max(index, 0), len(spans) - 1)
        file_id, span_start, span_end = spans[index]
        local = u - cumulative[index]
        if local + t > lengths[index] + ALIGN_TOLERANCE:
            local = lengths[index] - t
        local = max(local, 0.0)
        offset = span_start + local
        ratio = offset / t
        synthetic = abs(ratio - round(ratio)) > ALIGN_TOLERANCE * max(1.0, abs(ratio))
        windows.append(LabeledWindow(file_id, float(offset), PREICTAL, bool(synthetic)))
    logger.info("重疊採樣: D=%.1f s, S=%.4f s, %d 個窗口", total, step, len(windows))
    return OverlapPlan(float(step), tuple(windows))


@dataclass(frozen=True)
class DatasetPlan:
    timeline: Timeline
    leading: Tuple[SeizureAnnotation, ...]
    windows: Tuple[LabeledWindow, ...]
    step: float
    sample_rate: int


class DatasetBuilder:
    """EDF 目錄 → 窗口數據集的完整流程"""

    def __init__(
        self,
        clinical: Optional[ClinicalWindows] = None,
        channels: Optional[int] = None,
        workers: int = 1,
        balance: bool = True,
        progress: bool = True,
    ):
        self.clinical = clinical or ClinicalWindows()
        self.channels = channels
        self.workers = max(1, int(workers))
        self.balance = balance
        self.progress = progress

    def _map(self, function, jobs: List, description: str) -> List:
        bar = tqdm(total=len(jobs), desc=description, disable=not self.progress, leave=False)
        try:
            if self.workers == 1 or len(jobs) <= 1:
                results = []
                for job in jobs:
                    results.append(function(job))
                    bar.update()
                return results
            with Pool(self.workers) as pool:
                results = []
                for result in pool.imap(function, jobs):
                    results.append(result)
                    bar.update()
                return results
        finally:
            bar.close()

    def plan(self, data_dir: Union[str, Path]) -> "DatasetPlan":
        """解析摘要與 EDF 頭，得到時間軸、前導發作、平衡後的窗口列表和步長 S"""
        data_dir = Path(data_dir)
        if not data_dir.is_dir():
            raise MissingInputError(f"數據目錄不存在: {data_dir}")
        summary_files = sorted(data_dir.glob("*summary*.txt"))
        if not summary_files:
            raise MissingInputError(f"{data_dir} 中沒有摘要文件 (*summary*.txt)")
        summaries = []
        for path in summary_files:
            summaries.extend(parse_summary(path.read_text(encoding="utf-8", errors="replace")))
        summaries = [s for s in summaries if s.file_id]
        missing = [s.file_id for s in summaries if not (data_dir / s.file_id).exists()]
        if missing:
            raise MissingInputError(f"摘要中列出的 EDF 文件不存在: {', '.join(missing)}")

        headers = self._map(_describe_file, [str(data_dir / s.file_id) for s in summaries], "讀取 EDF")
        durations = {s.file_id: duration for s, (_, _, duration) in zip(summaries, headers)}
        self._check_headers(summaries, headers)

        timeline = build_timeline(summaries, durations)
        leading = select_leading(timeline.seizures, self.clinical.sop)
        logger.info("共 %d 次發作，其中 %d 次為前導發作", len(timeline.seizures), len(leading))

        labeled = label_windows(timeline, leading, self.clinical, timeline.seizures)
        interictal = [w for w in labeled if w.label == INTERICTAL]
        preictal = [w for w in labeled if w.label == PREICTAL]
        if not preictal:
            logger.warning("沒有發作前期窗口，數據集只包含發作間期")
        step = float(self.clinical.window_len)
        if self.balance and preictal and interictal:
            plan = balance_overlap(preictal_spans(preictal, self.clinical.window_len), len(interictal),
                                   self.clinical.window_len)
            step = plan.step
            preictal = [replace(w, position=timeline.span(w.file_id).start + w.offset) for w in plan.windows]
        windows = sorted(interictal + preictal, key=lambda w: (w.file_id, w.offset, w.label))
        return DatasetPlan(timeline, tuple(leading), tuple(windows), step, int(round(headers[0][1])))

    def _check_headers(self, summaries, headers) -> None:
        rates = {rate for _, rate, _ in headers}
        if len(rates) != 1:
            raise InvalidInputError(f"各文件採樣率不一致: {sorted(rates)}")
        counts = {channels for channels, _, _ in headers}
        wanted = self.channels or min(counts)
        if self.channels is None and len(counts) != 1:
            raise InvalidInputError(f"各文件通道數不一致: {sorted(counts)}，請設置 channels")
        if min(counts) < wanted:
            short = [s.file_id for s, (c, _, _) in zip(summaries, headers) if c < wanted]
            raise InvalidInputError(f"文件通道數少於 {wanted}: {', '.join(short)}")

    def build(self, data_dir: Union[str, Path], output_dir: Optional[Union[str, Path]] = None) -> WindowDataset:
        data_dir = Path(data_dir)
        plan = self.plan(data_dir)
        timeline, leading, windows, step = plan.timeline, plan.leading, plan.windows, plan.step
        t = self.clinical.window_len
        if not windows:
            raise InvalidInputError("沒有可用的窗口")

        by_file: Dict[str, List[LabeledWindow]] = {}
        for window in windows:
            by_file.setdefault(window.file_id, []).append(window)
        file_ids = sorted(by_file)
        channels = self.channels
        jobs = [(str(data_dir / file_id), [w.offset for w in by_file[file_id]], t, channels) for file_id in file_ids]
        results = self._map(_file_spectrograms, jobs, "計算頻譜")

        ordered = [w for file_id in file_ids for w in by_file[file_id]]
        tensors = np.concatenate(results, axis=0)
        n_interictal = sum(1 for w in ordered if w.label == INTERICTAL)
        dataset = WindowDataset(
            windows=tensors,
            labels=np.array([w.label for w in ordered]),
            synthetic=np.array([w.synthetic for w in ordered]),
            sources=np.array([w.file_id for w in ordered], dtype=object),
            offsets=np.array([w.offset for w in ordered]),
            meta={
                "n": int(tensors.shape[1]),
                "t": int(t),
                "p": int(tensors.shape[2]),
                "frequency_bins": int(tensors.shape[3]),
                "sample_rate": plan.sample_rate,
                "step": float(step),
                "interictal_hours": float(n_interictal * t / 3600.0),
                "seizures": len(timeline.seizures),
                "leading_seizures": len(leading),
                "clinical": self.clinical.model_dump(),
            },
        )
        if output_dir is not None:
            dataset.save(output_dir)
        return dataset


def _describe_file(path: str) -> Tuple[int, float, float]:
    record = read_edf(path)
    return record.channels, record.sample_rate, record.duration


def _file_spectrograms(job) -> np.ndarray:
    path, offsets, t, channels = job
    record = read_edf(path)
    rate = record.sample_rate
    if abs(rate - round(rate)) > ALIGN_TOLERANCE:
        raise InvalidInputError(f"{Path(path).name} 的採樣率 {rate} 不是整數")
    f_s = int(round(rate))
    physical = record.physical()
    if channels is not None:
        physical = physical[:channels]
    length = t * f_s
    out = np.empty((len(offsets), physical.shape[0], 2 * t, FREQUENCY_BINS))
    for i, offset in enumerate(offsets):
        begin = int(round(offset * f_s))
        end = begin + length
        if end > physical.shape[1]:
            raise InvalidInputError(f"{Path(path).name} 中偏移 {offset} s 的窗口超出錄音範圍")
        out[i] = spectrogram(physical[:, begin:end], t, f_s)
    return out


def build_dataset(
    data_dir: Union[str, Path],
    output_dir: Optional[Union[str, Path]] = None,
    clinical: Optional[ClinicalWindows] = None,
    channels: Optional[int] = None,
    workers: int = 1,
    progress: bool = False,
) -> WindowDataset:
    """解析、建時間軸、選前導發作、標註、平衡、計算頻譜並寫出數據集目錄"""
    builder = DatasetBuilder(clinical=clinical, channels=channels, workers=workers, progress=progress)
    return builder.build(data_dir, output_dir)
