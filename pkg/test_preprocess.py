"""EDF 讀寫、發作摘要、頻譜、窗口標註與重疊平衡"""

import logging

import numpy as np
import pytest

from memseizure.annotations import (
    SeizureAnnotation,
    build_timeline,
    parse_annotations,
    parse_summary,
    select_leading,
)
from memseizure.dataset import INTERICTAL, PREICTAL, WindowDataset
from memseizure.edf import EegRecord, parse_edf, read_edf, write_edf
from memseizure.errors import (
    AnnotationParseError,
    EdfParseError,
    InvalidInputError,
    InvalidParameterError,
    MissingInputError,
    ShapeMismatchError,
)
from memseizure.preprocess import (
    RETAINED_BINS,
    balance_overlap,
    build_dataset,
    label_windows,
    preictal_spans,
    spectrogram,
)
from memseizure.synthetic import SUMMARY_FILE, write_edf_fixtures

SUMMARY = """Data Sampling Rate: 256 Hz
*************************

File Name: chb01_01.edf
File Start Time: 11:42:54
File End Time: 12:42:54
Number of Seizures in File: 0

File Name: chb01_03.edf
File Start Time: 13:43:04
File End Time: 14:43:04
Number of Seizures in File: 1
Seizure Start Time: 2996 seconds
Seizure End Time: 3036 seconds

File Name: chb01_04.edf
File Start Time: 14:43:12
File End Time: 15:43:12
Number of Seizures in File: 2
Seizure 1 Start Time: 1467 seconds
Seizure 1 End Time: 1494 seconds
Seizure 2 Start Time: 1732 seconds
Seizure 2 End Time: 1772 seconds
"""


# ---- EDF ----

def test_fixture_files_round_trip(edf_dir):
    for path in sorted(edf_dir.glob("*.edf")):
        data = path.read_bytes()
        assert write_edf(parse_edf(data)) == data


def test_record_fields(edf_dir):
    record = read_edf(edf_dir / "fixture_01.edf")
    assert record.channels == 2
    assert record.labels == ("EEG 01", "EEG 02")
    assert record.sample_rate == 256
    assert record.duration == 600
    assert record.samples.dtype == np.int16


def test_physical_scaling():
    samples = np.array([[-32768, 0, 32767, 100]], dtype=np.int16)
    record = parse_edf(write_edf(EegRecord.create(["Fp1"], np.repeat(samples, 64, axis=1), 256)))
    physical = record.physical()[0]
    assert physical[0] == pytest.approx(-1000.0)
    assert physical[2 * 64] == pytest.approx(1000.0)


def test_parse_errors_carry_offsets(edf_dir):
    data = (edf_dir / "fixture_01.edf").read_bytes()
    with pytest.raises(EdfParseError) as info:
        parse_edf(data[:100])
    assert info.value.offset == 100

    broken = data[:184] + b"999     " + data[192:]
    with pytest.raises(EdfParseError) as info:
        parse_edf(broken)
    assert info.value.offset == 184

    broken = data[:252] + b"ab  " + data[256:]
    with pytest.raises(EdfParseError) as info:
        parse_edf(broken)
    assert info.value.offset == 252

    with pytest.raises(EdfParseError) as info:
        parse_edf(data[:-10])
    assert info.value.offset == len(data) - 10


def test_unknown_record_count_is_inferred(edf_dir):
    data = (edf_dir / "fixture_02.edf").read_bytes()
    record = parse_edf(data[:236] + b"-1      " + data[244:])
    assert np.array_equal(record.samples, parse_edf(data).samples)


def test_missing_edf_file(tmp_path):
    with pytest.raises(MissingInputError):
        read_edf(tmp_path / "nothing.edf")


# ---- 摘要與時間軸 ----

def test_parse_annotations():
    annotations = parse_annotations(SUMMARY)
    assert [(a.file_id, a.onset, a.end) for a in annotations] == [
        ("chb01_03.edf", 2996.0, 3036.0),
        ("chb01_04.edf", 1467.0, 1494.0),
        ("chb01_04.edf", 1732.0, 1772.0),
    ]


def test_fixture_summary(edf_dir):
    text = (edf_dir / SUMMARY_FILE).read_text(encoding="utf-8")
    assert [(a.file_id, a.onset, a.end) for a in parse_annotations(text)] == [("fixture_03.edf", 300.0, 340.0)]


def test_annotation_errors_name_the_line():
    with pytest.raises(AnnotationParseError) as info:
        parse_summary("File Name: a.edf\nNumber of Seizures in File: 1\nSeizure Start Time: 10 seconds\nFile Name: b.edf\n")
    assert info.value.line_number == 3

    with pytest.raises(AnnotationParseError) as info:
        parse_summary("Seizure Start Time: 10 seconds\nSeizure End Time: 5 seconds\n")
    assert info.value.line_number == 2

    with pytest.raises(AnnotationParseError):
        parse_summary("Seizure End Time: 5 seconds\n")


def test_timeline_rolls_over_midnight():
    text = """File Name: a.edf
File Start Time: 23:50:00
File End Time: 00:10:00
File Name: b.edf
File Start Time: 00:20:00
File End Time: 01:00:00
Seizure Start Time: 100 seconds
Seizure End Time: 160 seconds
"""
    timeline = build_timeline(parse_summary(text))
    assert [(r.file_id, r.start, r.end) for r in timeline.recordings] == [
        ("a.edf", 0.0, 1200.0),
        ("b.edf", 1800.0, 4200.0),
    ]
    assert [(s.onset, s.end) for s in timeline.seizures] == [(1900.0, 1960.0)]


def test_timeline_uses_durations_without_clock():
    summaries = parse_summary("File Name: a.edf\nFile Name: b.edf\nSeizure Start Time: 5 seconds\nSeizure End Time: 9 seconds\n")
    timeline = build_timeline(summaries, {"a.edf": 100.0, "b.edf": 50.0})
    assert timeline.span("b.edf").start == 100.0
    assert timeline.seizures[0].onset == 105.0
    with pytest.raises(InvalidInputError):
        build_timeline(summaries)


def test_select_leading():
    first = SeizureAnnotation("a", 1000.0, 1100.0)
    second = SeizureAnnotation("a", 2000.0, 2050.0)
    # 間隔恰好 15 分鐘：不算前導
    assert select_leading([second, first], 15) == [first]
    assert select_leading([first, second], 14) == [first, second]


def test_select_leading_uses_dropped_seizures():
    seizures = [SeizureAnnotation("a", 0.0, 10.0), SeizureAnnotation("a", 500.0, 520.0), SeizureAnnotation("a", 1000.0, 1010.0)]
    # 第三次距離第一次很遠，但距離被丟棄的第二次只有 480 s
    assert select_leading(seizures, 10) == [seizures[0]]


# ---- 頻譜 ----

def test_spectrogram_shape_and_bins():
    assert len(RETAINED_BINS) == 114
    assert 0 not in RETAINED_BINS and 60 not in RETAINED_BINS and 120 not in RETAINED_BINS
    window = np.random.default_rng(0).normal(size=(22, 30 * 256))
    assert spectrogram(window, 30, 256).shape == (22, 60, 114)


def test_spectrogram_peak_at_sine_frequency():
    time = np.arange(30 * 256) / 256
    window = np.sin(2 * np.pi * 10 * time)[None, :] + 5.0
    result = spectrogram(window, 30, 256)
    assert int(np.argmax(result[0].mean(axis=0))) == 9
    assert RETAINED_BINS[9] == 10



def test_spectrogram_of_constant_signal_is_flat():
    window = np.full((3, 30 * 256), 7.5)
    window[1] = -2.0
    result = spectrogram(window, 30, 256)
    energy = float(np.sum(window ** 2))
    # DC 被丟棄，剩下的頻段相對於輸入能量可以忽略
    assert np.all(np.expm1(result) <= 1e-6 * energy)
    assert np.allclose(result, 0.0, atol=1e-9)


def test_spectrogram_errors():
    with pytest.raises(InvalidParameterError):
        spectrogram(np.zeros((1, 30 * 255)), 30, 255)
    with pytest.raises(ShapeMismatchError):
        spectrogram(np.zeros((1, 100)), 30, 256)
    window = np.zeros((1, 30 * 256))
    window[0, 5] = np.nan
    with pytest.raises(InvalidInputError):
        spectrogram(window, 30, 256)


# ---- 標註與平衡 ----

def test_label_fixture_windows(edf_dir, fixture_clinical):
    timeline = build_timeline(parse_summary((edf_dir / SUMMARY_FILE).read_text(encoding="utf-8")))
    leading = select_leading(timeline.seizures, fixture_clinical.sop)
    windows = label_windows(timeline, leading, fixture_clinical, timeline.seizures)
    interictal = [w for w in windows if w.label == INTERICTAL]
    preictal = [w for w in windows if w.label == PREICTAL]
    assert len(interictal) == 18
    assert len(preictal) == 10
    assert {w.file_id for w in preictal} == {"fixture_02.edf"}
    assert [w.offset for w in preictal] == [300.0 + 30 * k for k in range(10)]
    assert preictal_spans(preictal, 30) == [("fixture_02.edf", 300.0, 600.0)]


def test_balance_step_and_synthetic_flags():
    plan = balance_overlap([("a", 300.0, 600.0)], 18, 30)
    assert plan.step == pytest.approx(270 / 17)
    assert len(plan.windows) == 18
    assert sum(w.synthetic for w in plan.windows) == 16
    assert plan.windows[0].offset == 300.0
    assert plan.windows[-1].offset == pytest.approx(570.0)


def test_balance_randomized_scenarios():
    rng = np.random.default_rng(0)
    t = 30
    for _ in range(50):
        count = int(rng.integers(1, 5))
        starts = np.cumsum(rng.uniform(0, 500, count)) + 1000 * np.arange(count)
        lengths = rng.uniform(t, 8 * t, count)
        spans = [(f"f{i}", float(s), float(s + d)) for i, (s, d) in enumerate(zip(starts, lengths))]
        n = int(rng.integers(1, 200))
        plan = balance_overlap(spans, n, t)
        assert abs(len(plan.windows) - n) <= 1
        if n > 1:
            assert plan.step == pytest.approx((lengths.sum() - t) / (n - 1))
        bounds = {name: (start, end) for name, start, end in spans}
        for window in plan.windows:
            start, end = bounds[window.file_id]
            assert start - 1e-9 <= window.offset
            assert window.offset + t <= end + 1e-6


def test_balance_edge_cases():
    with pytest.raises(InvalidParameterError):
        balance_overlap([("a", 0.0, 60.0)], 0, 30)
    assert balance_overlap([("a", 0.0, 20.0)], 5, 30).windows == ()
    # 短區間被丟棄，其餘區間照常採樣
    mixed = balance_overlap([("a", 0.0, 20.0), ("b", 100.0, 160.0)], 3, 30)
    assert [w.file_id for w in mixed.windows] == ["b", "b", "b"]
    assert mixed.step == pytest.approx(15.0)
    assert [w.offset for w in mixed.windows] == pytest.approx([100.0, 115.0, 130.0])
    assert balance_overlap([], 5, 30).windows == ()
    single = balance_overlap([("a", 0.0, 30.0)], 5, 30)
    assert len(single.windows) == 1
    assert single.step == 30.0


# ---- 完整流程 ----

def test_build_dataset(edf_dir, fixture_clinical, tmp_path):
    dataset = build_dataset(edf_dir, tmp_path / "first", clinical=fixture_clinical)
    assert len(dataset) == 36
    assert dataset.class_counts() == {"interictal": 18, "preictal": 18}
    assert int(dataset.synthetic.sum()) == 16
    assert dataset.window_shape == (2, 60, 114)
    assert dataset.meta["step"] == pytest.approx(270 / 17)
    assert dataset.meta["interictal_hours"] == pytest.approx(0.15)

    loaded = WindowDataset.load(tmp_path / "first")
    assert np.array_equal(loaded.windows, dataset.windows.astype(np.float32).astype(np.float64))
    assert np.array_equal(loaded.labels, dataset.labels)
    assert np.array_equal(loaded.synthetic, dataset.synthetic)

    build_dataset(edf_dir, tmp_path / "second", clinical=fixture_clinical, workers=2)
    for name in ("windows.bin", "index.csv", "meta.yaml"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_no_seizures_gives_interictal_only(tmp_path, fixture_clinical, caplog):
    write_edf_fixtures(tmp_path / "edf", files=2, seconds_per_file=300, seizures=())
    with caplog.at_level(logging.WARNING):
        dataset = build_dataset(tmp_path / "edf", clinical=fixture_clinical)
    assert dataset.class_counts() == {"interictal": 20, "preictal": 0}
    assert "沒有發作前期窗口" in caplog.text


def test_missing_inputs(tmp_path, fixture_clinical):
    with pytest.raises(MissingInputError):
        build_dataset(tmp_path, clinical=fixture_clinical)
    write_edf_fixtures(tmp_path / "edf", files=2, seconds_per_file=60, seizures=())
    (tmp_path / "edf" / "fixture_02.edf").unlink()
    with pytest.raises(MissingInputError):
        build_dataset(tmp_path / "edf", clinical=fixture_clinical)
