"""EDF 生物信號文件的讀寫

文件頭 256 字節，之後每個信號 256 字節；所有字段都是定寬、右側補空格的 ASCII 文本。
數據記錄依次存放每個信號的樣本，樣本為小端二補數 16 位整數。
頭字段原樣保存，所以 parse_edf 與 write_edf 互為逆運算（逐字節一致）。
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import EdfParseError, InvalidInputError, MissingInputError

logger = logging.getLogger(__name__)

FIXED_HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256
SAMPLE_DTYPE = np.dtype("<i2")

HEADER_FIELDS = (
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)

SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


def _pad(value, width: int, name: str) -> str:
    text = str(value)
    if len(text) > width:
        raise InvalidInputError(f"字段 {name} 的值 {text!r} 超過 {width} 個字符")
    return text.ljust(width)


@dataclass(frozen=True)
class SignalHeader:
    """單個信號的頭字段（原始定寬文本）"""

    label: str
    transducer: str
    physical_dimension: str
    physical_min: str
    physical_max: str
    digital_min: str
    digital_max: str
    prefilter: str
    samples_per_record: str
    reserved: str

    @property
    def name(self) -> str:
        return self.label.strip()

    @property
    def gain(self) -> float:
        return (float(self.physical_max) - float(self.physical_min)) / (int(self.digital_max) - int(self.digital_min))

    @property
    def offset(self) -> float:
        return float(self.physical_min) - int(self.digital_min) * self.gain


@dataclass(frozen=True)
class EegRecord:
    """一個 EDF 錄音：原始頭字段加上 (通道, 樣本) 的 int16 數據"""

    version: str
    patient: str
    recording: str
    start_date: str
    start_time: str
    header_bytes: str
    reserved: str
    n_records: str
    record_duration: str
    n_signals: str
    signals: Tuple[SignalHeader, ...]
    samples: np.ndarray

    @property
    def channels(self) -> int:
        return len(self.signals)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(signal.name for signal in self.signals)

    @property
    def samples_per_record(self) -> int:
        return int(self.signals[0].samples_per_record)

    @property
    def sample_rate(self) -> float:
        return self.samples_per_record / float(self.record_duration)

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def physical(self) -> np.ndarray:
        """物理值 = 數字值·(physMax−physMin)/(digMax−digMin) + 偏置"""
        gains = np.array([signal.gain for signal in self.signals])
        offsets = np.array([signal.offset for signal in self.signals])
        return self.samples.astype(np.float64) * gains[:, None] + offsets[:, None]

    @classmethod
    def create(
        cls,
        labels: Sequence[str],
        samples: np.ndarray,
        sample_rate: int,
        physical_range: Tuple[float, float] = (-1000.0, 1000.0),
        digital_range: Tuple[int, int] = (-32768, 32767),
        physical_dimension: str = "uV",
        patient: str = "X X X X",
        recording: str = "Startdate X X X X",
        start_date: str = "01.01.00",
        start_time: str = "00.00.00",
    ) -> "EegRecord":
        """用一秒一個數據記錄的格式構造新錄音"""
        data = np.asarray(samples)
        if data.ndim != 2 or data.shape[0] != len(labels):
            raise InvalidInputError(f"樣本形狀 {data.shape} 與 {len(labels)} 個通道不符")
        if data.shape[1] % sample_rate:
            raise InvalidInputError("樣本數必須是採樣率的整數倍")
        ns = len(labels)
        signal = SignalHeader(
            label="",
            transducer=_pad("", 80, "transducer"),
            physical_dimension=_pad(physical_dimension, 8, "physical_dimension"),
            physical_min=_pad(f"{physical_range[0]:g}", 8, "physical_min"),
            physical_max=_pad(f"{physical_range[1]:g}", 8, "physical_max"),
            digital_min=_pad(digital_range[0], 8, "digital_min"),
            digital_max=_pad(digital_range[1], 8, "digital_max"),
            prefilter=_pad("", 80, "prefilter"),
            samples_per_record=_pad(sample_rate, 8, "samples_per_record"),
            reserved=_pad("", 32, "reserved"),
        )
        return cls(
            version=_pad("0", 8, "version"),
            patient=_pad(patient, 80, "patient"),
            recording=_pad(recording, 80, "recording"),
            start_date=_pad(start_date, 8, "start_date"),
            start_time=_pad(start_time, 8, "start_time"),
            header_bytes=_pad(FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * ns, 8, "header_bytes"),
            reserved=_pad("", 44, "reserved"),
            n_records=_pad(data.shape[1] // sample_rate, 8, "n_records"),
            record_duration=_pad("1", 8, "record_duration"),
            n_signals=_pad(ns, 4, "n_signals"),
            signals=tuple(replace(signal, label=_pad(label, 16, "label")) for label in labels),
            samples=data.astype(SAMPLE_DTYPE),
        )


def _field_offsets(fields, base: int = 0, count: int = 1):
    """每個字段在文件中的起始偏移；信號字段按「字段 × 信號」交錯排列"""
    offsets = {}
    position = base
    for name, width in fields:
        offsets[name] = position
        position += width * count
    return offsets


def _number(text: str, name: str, offset: int, kind=float):
    try:
        return kind(text.strip())
    except ValueError:
        raise EdfParseError(f"字段 {name} 不是有效數字: {text.strip()!r}", offset) from None


def parse_edf(data: bytes) -> EegRecord:
    """從字節解析 EDF 文件"""
    if len(data) < FIXED_HEADER_BYTES:
        raise EdfParseError("文件頭被截斷", len(data))

    text = data[:FIXED_HEADER_BYTES].decode("latin-1")
    header = {}
    position = 0
    for name, width in HEADER_FIELDS:
        header[name] = text[position:position + width]
        position += width
    offsets = _field_offsets(HEADER_FIELDS)

    ns = _number(header["n_signals"], "n_signals", offsets["n_signals"], int)
    if ns < 1:
        raise EdfParseError(f"信號數必須 ≥ 1: {ns}", offsets["n_signals"])
    header_size = FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * ns
    declared = _number(header["header_bytes"], "header_bytes", offsets["header_bytes"], int)
    if declared != header_size:
        raise EdfParseError(f"頭長度 {declared} 與 {ns} 個信號不符 (應為 {header_size})", offsets["header_bytes"])
    if len(data) < header_size:
        raise EdfParseError("信號頭被截斷", len(data))

    signal_text = data[FIXED_HEADER_BYTES:header_size].decode("latin-1")
    signal_offsets = _field_offsets(SIGNAL_FIELDS, FIXED_HEADER_BYTES, ns)
    columns = {}
    position = 0
    for name, width in SIGNAL_FIELDS:
        columns[name] = [signal_text[position + i * width:position + (i + 1) * width] for i in range(ns)]
        position += width * ns
    signals = tuple(SignalHeader(**{name: columns[name][i] for name, _ in SIGNAL_FIELDS}) for i in range(ns))

    for i, signal in enumerate(signals):
        for name in ("physical_min", "physical_max"):
            _number(getattr(signal, name), name, signal_offsets[name] + 8 * i)
        digital_min = _number(signal.digital_min, "digital_min", signal_offsets["digital_min"] + 8 * i, int)
        digital_max = _number(signal.digital_max, "digital_max", signal_offsets["digital_max"] + 8 * i, int)
        if digital_max == digital_min:
            raise EdfParseError(f"信號 {signal.name!r} 的數字範圍為零", signal_offsets["digital_max"] + 8 * i)

    per_record = [
        _number(signal.samples_per_record, "samples_per_record", signal_offsets["samples_per_record"] + 8 * i, int)
        for i, signal in enumerate(signals)
    ]
    if len(set(per_record)) != 1 or per_record[0] < 1:
        raise EdfParseError(f"各信號每記錄樣本數不一致: {per_record}", signal_offsets["samples_per_record"])
    spr = per_record[0]
    duration = _number(header["record_duration"], "record_duration", offsets["record_duration"])
    if duration <= 0:
        raise EdfParseError(f"數據記錄時長必須為正: {duration}", offsets["record_duration"])

    record_bytes = ns * spr * SAMPLE_DTYPE.itemsize
    payload = len(data) - header_size
    n_records = _number(header["n_records"], "n_records", offsets["n_records"], int)
    if n_records == -1:
        if payload % record_bytes:
            raise EdfParseError("數據長度不是記錄長度的整數倍", header_size + payload - payload % record_bytes)
        n_records = payload // record_bytes
    expected = n_records * record_bytes
    if payload < expected:
        raise EdfParseError(f"數據被截斷: 需要 {n_records} 個記錄", len(data))
    if payload > expected:
        raise EdfParseError(f"記錄數 {n_records} 與數據長度不一致", header_size + expected)

    raw = np.frombuffer(data, dtype=SAMPLE_DTYPE, count=n_records * ns * spr, offset=header_size)
    samples = raw.reshape(n_records, ns, spr).transpose(1, 0, 2).reshape(ns, n_records * spr).copy()
    logger.debug("解析 EDF: %d 個信號, %d 個記錄, 每記錄 %d 樣本", ns, n_records, spr)
    return EegRecord(signals=signals, samples=samples, **header)


def write_edf(record: EegRecord) -> bytes:
    """把錄音序列化為 EDF 字節"""
    ns = record.channels
    spr = record.samples_per_record
    if record.samples.shape[0] != ns or record.samples.shape[1] % spr:
        raise InvalidInputError(f"樣本形狀 {record.samples.shape} 與頭字段不符")

    parts = [getattr(record, name) for name, _ in HEADER_FIELDS]
    for name, width in SIGNAL_FIELDS:
        parts.extend(getattr(signal, name) for signal in record.signals)
    header = "".join(parts).encode("latin-1")
    if len(header) != FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * ns:
        raise InvalidInputError("頭字段寬度不正確")

    n_records = record.samples.shape[1] // spr
    body = (np.asarray(record.samples, dtype=SAMPLE_DTYPE)
            .reshape(ns, n_records, spr)
            .transpose(1, 0, 2)
            .astype(SAMPLE_DTYPE)
            .tobytes(order="C"))
    return header + body


def read_edf(path: Union[str, Path]) -> EegRecord:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MissingInputError(f"讀取 EDF 文件失敗: {e}") from e
    try:
        return parse_edf(data)
    except EdfParseError:
        logger.error("無法解析 %s", path)
        raise
