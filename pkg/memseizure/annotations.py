"""發作摘要文本的解析、錄音時間軸與前導發作的篩選

摘要文本採用公開 EEG 數據集的 `-summary.txt` 約定：
每個文件一個塊，`File Name:` 開頭，可選 `File Start Time:` / `File End Time:` 時鐘時間，
再跟若干 `Seizure Start Time: N seconds` / `Seizure End Time: N seconds` 行。
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import AnnotationParseError, InvalidInputError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

FILE_NAME = re.compile(r"^\s*File Name:\s*(\S+)")
FILE_START = re.compile(r"^\s*File Start Time:\s*(\d+):(\d+):(\d+)")
FILE_END = re.compile(r"^\s*File End Time:\s*(\d+):(\d+):(\d+)")
SEIZURE_START = re.compile(r"^\s*Seizure(?:\s+\d+)?\s+Start Time:\s*(\d+(?:\.\d+)?)\s*seconds")
SEIZURE_END = re.compile(r"^\s*Seizure(?:\s+\d+)?\s+End Time:\s*(\d+(?:\.\d+)?)\s*seconds")


@dataclass(frozen=True)
class SeizureAnnotation:
    """一次發作；onset/end 為相對文件開頭（或時間軸原點）的秒數"""

    file_id: str
    onset: float
    end: float

    def __post_init__(self):
        if not 0 <= self.onset < self.end:
            raise InvalidInputError(f"發作時間無效: onset={self.onset}, end={self.end}")


@dataclass
class RecordingSummary:
    """摘要文本中一個文件塊"""

    file_id: str
    start_clock: Optional[int] = None
    end_clock: Optional[int] = None
    seizures: List[SeizureAnnotation] = field(default_factory=list)


@dataclass(frozen=True)
class RecordingSpan:
    """錄音在絕對時間軸上的位置（秒）"""

    file_id: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Timeline:
    """所有錄音與發作放在同一條時間軸上，原點為第一個文件的開始"""

    recordings: Tuple[RecordingSpan, ...]
    seizures: Tuple[SeizureAnnotation, ...]

    def span(self, file_id: str) -> RecordingSpan:
        for recording in self.recordings:
            if recording.file_id == file_id:
                return recording
        raise InvalidInputError(f"時間軸上沒有文件 {file_id}")


def _clock_seconds(match: "re.Match") -> int:
    # 摘要中跨午夜的時間可能寫成 24:xx:xx 以上
    hours, minutes, seconds = (int(group) for group in match.groups())
    return hours * 3600 + minutes * 60 + seconds


def parse_summary(text: str) -> List[RecordingSummary]:
    """把摘要文本解析為按出現順序排列的文件塊"""
    blocks: List[RecordingSummary] = []
    current: Optional[RecordingSummary] = None
    pending: Optional[Tuple[float, int, str]] = None

    def close_pending():
        if pending is not None:
            raise AnnotationParseError("發作開始時間缺少對應的結束時間", pending[1], pending[2])

    for number, line in enumerate(text.splitlines(), start=1):
        match = FILE_NAME.match(line)
        if match:
            close_pending()
            current = RecordingSummary(file_id=match.group(1))
            blocks.append(current)
            continue

        start_match = SEIZURE_START.match(line)
        end_match = SEIZURE_END.match(line)
        if start_match or end_match:
            if current is None:
                current = RecordingSummary(file_id="")
                blocks.append(current)
            if start_match:
                close_pending()
                pending = (float(start_match.group(1)), number, line)
                continue
            if pending is None:
                raise AnnotationParseError("發作結束時間缺少對應的開始時間", number, line)
            onset, end = pending[0], float(end_match.group(1))
            if end <= onset:
                raise AnnotationParseError(f"發作結束時間 {end} 不晚於開始時間 {onset}", number, line)
            current.seizures.append(SeizureAnnotation(current.file_id, onset, end))
            pending = None
            continue

        if current is None:
            continue
        match = FILE_START.match(line)
        if match:
            current.start_clock = _clock_seconds(match)
            continue
        match = FILE_END.match(line)
        if match:
            current.end_clock = _clock_seconds(match)

    close_pending()
    for block in blocks:
        block.seizures.sort(key=lambda seizure: seizure.onset)
    return blocks


def parse_annotations(text: str) -> List[SeizureAnnotation]:
    """每次發作一條標註，先按文件（出現順序）再按 onset 排序"""
    return [seizure for block in parse_summary(text) for seizure in block.seizures]


def build_timeline(
    summaries: Sequence[RecordingSummary],
    durations: Optional[Mapping[str, float]] = None,
) -> Timeline:
    """按摘要順序把文件放到一條絕對時間軸上

    有時鐘時間時用時鐘時間定位，時鐘值回退即視為跨過午夜；
    沒有時鐘時間時緊接上一個文件，時長取自 durations（通常來自 EDF 頭）。
    """
    durations = dict(durations or {})
    recordings: List[RecordingSpan] = []
    seizures: List[SeizureAnnotation] = []
    day = 0
    previous_clock: Optional[int] = None
    origin: Optional[float] = None

    for summary in summaries:
        if summary.start_clock is not None:
            if previous_clock is not None and summary.start_clock < previous_clock:
                day += 1
            previous_clock = summary.start_clock
            absolute = day * SECONDS_PER_DAY + summary.start_clock
            if origin is None:
                origin = absolute
            start = absolute - origin
        else:
            start = recordings[-1].end if recordings else 0.0
            if origin is None:
                origin = 0.0

        if summary.file_id in durations:
            end = start + float(durations[summary.file_id])
        elif summary.start_clock is not None and summary.end_clock is not None:
            length = summary.end_clock - summary.start_clock
            if length <= 0:
                length += SECONDS_PER_DAY
            end = start + length
        else:
            raise InvalidInputError(f"無法確定文件 {summary.file_id} 的時長")

        if recordings and start < recordings[-1].end:
            logger.warning("文件 %s 與上一個文件在時間軸上重疊", summary.file_id)
        recordings.append(RecordingSpan(summary.file_id, float(start), float(end)))
        seizures.extend(
            SeizureAnnotation(seizure.file_id, start + seizure.onset, start + seizure.end)
            for seizure in summary.seizures
        )
        if summary.end_clock is not None and summary.start_clock is not None and summary.end_clock < summary.start_clock:
            previous_clock = summary.end_clock
            day += 1

    seizures.sort(key=lambda seizure: seizure.onset)
    return Timeline(tuple(recordings), tuple(seizures))


def select_leading(annotations: Iterable[SeizureAnnotation], sop_minutes: float) -> List[SeizureAnnotation]:
    """保留前導發作：之前任何發作（無論是否保留）的結束時間都不在 onset 前 T 分鐘內"""
    ordered = sorted(annotations, key=lambda seizure: seizure.onset)
    window = sop_minutes * 60.0
    kept: List[SeizureAnnotation] = []
    last_end: Optional[float] = None
    for seizure in ordered:
        if last_end is None or seizure.onset - last_end > window:
            kept.append(seizure)
        else:
            logger.debug("丟棄非前導發作 %s @ %.0f s", seizure.file_id, seizure.onset)
        last_end = seizure.end if last_end is None else max(last_end, seizure.end)
    return kept

