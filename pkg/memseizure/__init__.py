"""
憶阻交叉陣列上的癲癇預測網絡推理模擬器
預處理、訓練、器件變異下的推理模擬與硬件成本估算
"""

from .annotations import (
    RecordingSpan,
    RecordingSummary,
    SeizureAnnotation,
    Timeline,
    build_timeline,
    parse_annotations,
    parse_summary,
    select_leading,
)
from .config import PathsConfig, RunConfig, load_config
from .costmodel import CostReport, HardwareParams, ReadoutMode, estimate, format_table, tile_count
from .crossbar import CrossbarSettings, MappedLayer, TileConfig, WeightScheme, map_weights, partition, vmm, vmm_batch
from .dataset import INTERICTAL, PREICTAL, WindowDataset
from .device import (
    CONTINUOUS,
    DeviceArray,
    DeviceInstance,
    DeviceParameters,
    build_states,
    mirror_offset,
    quantize,
    sample_device,
    sample_devices,
)
from .digests import FileDigests
from .edf import EegRecord, parse_edf, read_edf, write_edf
from .errors import (
    AnnotationParseError,
    ConfigError,
    EdfParseError,
    InvalidInputError,
    InvalidParameterError,
    MemSeizureError,
    MissingInputError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .evaluation import (
    FoldModel,
    MetricsReport,
    SweepGrid,
    SweepSettings,
    auroc,
    evaluate_backend,
    event_sensitivity,
    metrics,
    sweep,
)
from .network import (
    IdealBackend,
    LayerShape,
    LayerWeights,
    MemristiveBackend,
    NetworkSpec,
    forward,
    map_network,
    predict_proba,
    shapes,
)
from .preprocess import (
    ClinicalWindows,
    DatasetBuilder,
    LabeledWindow,
    balance_overlap,
    build_dataset,
    label_windows,
    spectrogram,
)
from .training import (
    FoldPlan,
    TrainingSettings,
    diffgrad_step,
    init_weights,
    stratified_kfold,
    train,
    train_folds,
)
from .weights_io import load_weights, save_weights

__version__ = "1.0.0"

__all__ = [
    "AnnotationParseError",
    "CONTINUOUS",
    "ClinicalWindows",
    "ConfigError",
    "CostReport",
    "CrossbarSettings",
    "DatasetBuilder",
    "DeviceArray",
    "DeviceInstance",
    "DeviceParameters",
    "EdfParseError",
    "EegRecord",
    "FileDigests",
    "FoldModel",
    "FoldPlan",
    "HardwareParams",
    "INTERICTAL",
    "IdealBackend",
    "InvalidInputError",
    "InvalidParameterError",
    "LabeledWindow",
    "LayerShape",
    "LayerWeights",
    "MappedLayer",
    "MemSeizureError",
    "MemristiveBackend",
    "MetricsReport",
    "MissingInputError",
    "NetworkSpec",
    "PREICTAL",
    "PathsConfig",
    "ReadoutMode",
    "RecordingSpan",
    "RecordingSummary",
    "RunConfig",
    "SeizureAnnotation",
    "ShapeMismatchError",
    "SweepGrid",
    "SweepSettings",
    "TileConfig",
    "Timeline",
    "TrainingDivergedError",
    "TrainingSettings",
    "WeightScheme",
    "WindowDataset",
    "auroc",
    "balance_overlap",
    "build_dataset",
    "build_states",
    "build_timeline",
    "diffgrad_step",
    "estimate",
    "evaluate_backend",
    "event_sensitivity",
    "format_table",
    "forward",
    "init_weights",
    "label_windows",
    "load_config",
    "load_weights",
    "map_network",
    "map_weights",
    "metrics",
    "mirror_offset",
    "parse_annotations",
    "parse_edf",
    "parse_summary",
    "partition",
    "predict_proba",
    "quantize",
    "read_edf",
    "sample_device",
    "sample_devices",
    "save_weights",
    "select_leading",
    "shapes",
    "spectrogram",
    "stratified_kfold",
    "sweep",
    "tile_count",
    "train",
    "train_folds",
    "vmm",
    "vmm_batch",
    "write_edf",
]
