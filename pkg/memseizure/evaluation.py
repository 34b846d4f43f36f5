"""分類指標、事件級預測判定，以及 σ × 狀態數的器件變異掃描"""

import logging
from dataclasses import asdict, dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sklearn.metrics import confusion_matrix, roc_auc_score
from tqdm import tqdm

from .crossbar import CrossbarSettings, WeightScheme, map_weights, vmm_batch
from .dataset import INTERICTAL, PREICTAL, WindowDataset
from .device import CONTINUOUS, DeviceParameters, StateCount
from .errors import InvalidInputError, MemSeizureError, ShapeMismatchError
from .fileio import atomic_write_csv
from .network import Backend, IdealBackend, LayerWeights, NetworkSpec, map_network, predict_proba
from .preprocess import ClinicalWindows

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "sensitivity", "auroc", "fpr_per_hour")
SWEEP_HEADER = ["sigma", "n_states", "seed", "fold", *METRIC_NAMES, "error"]
METRICS_HEADER = ["fold", "backend", *METRIC_NAMES, "tp", "fp", "tn", "fn", "interictal_hours"]


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    sensitivity: float
    auroc: float
    fpr_per_hour: float
    tp: int
    fp: int
    tn: int
    fn: int
    interictal_hours: float


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """等於 Mann–Whitney 配對統計量，平局記 0.5"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeMismatchError(f"scores {scores.shape} 與 labels {labels.shape} 形狀不一致")
    if len(np.unique(labels)) != 2:
        raise InvalidInputError("AUROC 需要兩個類別都存在")
    return float(roc_auc_score(labels, scores))


def metrics(
    predictions: Sequence[float],
    labels: Sequence[int],
    interictal_hours: float,
    threshold: float = 0.5,
) -> MetricsReport:
    """predictions 為發作前期概率，≥ threshold 判為發作前期"""
    scores = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ShapeMismatchError(f"predictions {scores.shape} 與 labels {labels.shape} 長度不一致")
    predicted = (scores >= threshold).astype(np.int64)
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(labels, predicted, labels=[INTERICTAL, PREICTAL]).ravel())

    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else float("nan")
    sensitivity = tp / (tp + fn) if tp + fn else float("nan")
    area = auroc(scores, labels) if len(np.unique(labels)) == 2 else float("nan")
    if interictal_hours <= 0:
        if fp > 0:
            raise InvalidInputError(f"有 {fp} 個誤報，但發作間期時長為 {interictal_hours} h")
        fpr = 0.0
    else:
        fpr = fp / interictal_hours
    return MetricsReport(accuracy, sensitivity, area, fpr, tp, fp, tn, fn, float(interictal_hours))


def event_sensitivity(alarms: Sequence[float], onsets: Sequence[float], clinical: Optional[ClinicalWindows] = None) -> float:
    """onset ∈ [τ+SPH, τ+SPH+SOP] 的發作記為被預測；時間單位為秒"""
    clinical = clinical or ClinicalWindows()
    onsets = np.asarray(onsets, dtype=np.float64)
    if onsets.size == 0:
        return float("nan")
    alarms = np.asarray(alarms, dtype=np.float64)
    if alarms.size == 0:
        return 0.0
    lead = onsets[:, None] - alarms[None, :]
    hit = (lead >= clinical.sph_seconds) & (lead <= clinical.sph_seconds + clinical.sop_seconds)
    return float(np.mean(hit.any(axis=1)))


def interictal_hours(labels: np.ndarray, window_len: int) -> float:
    return float(np.sum(np.asarray(labels) == INTERICTAL) * window_len / 3600.0)


def evaluate_backend(
    spec: NetworkSpec,
    weights: LayerWeights,
    dataset: WindowDataset,
    indices: np.ndarray,
    backend: Optional[Backend] = None,
    threshold: float = 0.5,
) -> MetricsReport:
    """在給定窗口（通常是一折的驗證集，合成窗口除外）上推理並計算指標"""
    indices = np.asarray(indices, dtype=np.int64)
    indices = indices[~dataset.synthetic[indices]]
    labels = dataset.labels[indices]
    probabilities = predict_proba(spec, weights, dataset.windows[indices], backend or IdealBackend())
    return metrics(probabilities, labels, interictal_hours(labels, spec.t), threshold)


def vmm_error(
    matrix: np.ndarray,
    inputs: np.ndarray,
    device_params: DeviceParameters,
    scheme: Union[WeightScheme, str] = WeightScheme.DOUBLE_COLUMN,
    seed=0,
) -> float:
    """映射後 VMM 相對理想矩陣乘法的平均絕對誤差"""
    layer = map_weights(matrix, scheme, device_params, seed=seed)
    return float(np.mean(np.abs(vmm_batch(layer, inputs) - np.asarray(inputs) @ np.asarray(matrix))))


# ---- 掃描 ----

def _parse_states(value):
    if isinstance(value, str) and value.lower() == CONTINUOUS:
        return CONTINUOUS
    return int(value)


class SweepSettings(BaseModel):
    """掃描網格：σ 取值、狀態數與每格的種子數"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigmas: List[float] = Field(default_factory=lambda: [0.0, 100.0, 200.0, 300.0, 400.0, 500.0])
    states: List[Union[int, str]] = Field(default_factory=lambda: [2, 4, 6, 8, 10])
    seeds: int = Field(3, ge=1)
    threshold: float = Field(0.5, ge=0, le=1)

    @field_validator("sigmas")
    @classmethod
    def _check_sigmas(cls, value):
        if not value or any(sigma < 0 for sigma in value):
            raise ValueError("σ 列表必須非空且每個值 ≥ 0")
        return value

    @field_validator("states")
    @classmethod
    def _check_states(cls, value):
        parsed = [_parse_states(item) for item in value]
        if not parsed or any(item != CONTINUOUS and item < 2 for item in parsed):
            raise ValueError("狀態數必須 ≥ 2 或為 continuous")
        return parsed


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    n_states: StateCount
    seed: int
    fold: int
    accuracy: float
    sensitivity: float
    auroc: float
    fpr_per_hour: float
    error: str = ""


@dataclass(frozen=True)
class FoldModel:
    """一折的權重與其驗證窗口索引"""

    fold: int
    weights: LayerWeights
    validation: np.ndarray


@dataclass
class SweepGrid:
    rows: List[SweepRow]

    @property
    def completed_cells(self) -> int:
        cells = {(r.sigma, r.n_states, r.seed) for r in self.rows if not r.error}
        return len(cells)

    def summary(self) -> List[Dict[str, object]]:
        """每個 (σ, 狀態數) 在所有折與種子上的均值和標準差"""
        groups: Dict[Tuple[float, StateCount], List[SweepRow]] = {}
        for row in self.rows:
            groups.setdefault((row.sigma, row.n_states), []).append(row)
        result = []
        for (sigma, states), rows in groups.items():
            entry: Dict[str, object] = {"sigma": sigma, "n_states": states,
                                        "runs": sum(1 for r in rows if not r.error)}
            for name in METRIC_NAMES:
                values = np.array([getattr(r, name) for r in rows if not r.error], dtype=np.float64)
                finite = values[np.isfinite(values)]
                entry[f"{name}_mean"] = float(finite.mean()) if finite.size else float("nan")
                entry[f"{name}_std"] = float(finite.std()) if finite.size else float("nan")
            result.append(entry)
        return result

    def mean(self, metric: str, sigma: float, n_states: StateCount) -> float:
        for entry in self.summary():
            if entry["sigma"] == sigma and entry["n_states"] == n_states:
                return float(entry[f"{metric}_mean"])
        raise KeyError((sigma, n_states))

    def write_csv(self, path: Union[str, Path]) -> Path:
        rows = [[r.sigma, r.n_states, r.seed, r.fold, r.accuracy, r.sensitivity, r.auroc, r.fpr_per_hour, r.error]
                for r in self.rows]
        return atomic_write_csv(path, SWEEP_HEADER, rows)

    def write_summary_csv(self, path: Union[str, Path]) -> Path:
        summary = self.summary()
        header = ["sigma", "n_states", "runs"] + [f"{name}_{stat}" for name in METRIC_NAMES for stat in ("mean", "std")]
        return atomic_write_csv(path, header, [[entry[key] for key in header] for entry in summary])


_SWEEP_CONTEXT: Dict[str, object] = {}


def _init_sweep(spec, models, dataset, settings, crossbar, base_params, seed) -> None:
    _SWEEP_CONTEXT.update(spec=spec, models=models, dataset=dataset, settings=settings, crossbar=crossbar,
                          base_params=base_params, seed=seed)


def _cell_seed(seed: int, sigma_index: int, state_index: int, cell_seed: int, fold: int) -> int:
    sequence = np.random.SeedSequence([int(seed), sigma_index, state_index, cell_seed, fold])
    return int(sequence.generate_state(1)[0])


def _run_cell(cell) -> List[SweepRow]:
    sigma_index, state_index, cell_seed = cell
    spec: NetworkSpec = _SWEEP_CONTEXT["spec"]
    models: Sequence[FoldModel] = _SWEEP_CONTEXT["models"]
    dataset: WindowDataset = _SWEEP_CONTEXT["dataset"]
    settings: SweepSettings = _SWEEP_CONTEXT["settings"]
    crossbar: CrossbarSettings = _SWEEP_CONTEXT["crossbar"]
    base: DeviceParameters = _SWEEP_CONTEXT["base_params"]
    seed: int = _SWEEP_CONTEXT["seed"]
    sigma = settings.sigmas[sigma_index]
    states = settings.states[state_index]

    rows = []
    for model in models:
        try:
            params = DeviceParameters(**{**base.model_dump(), "sigma": sigma, "n_states": states})
            backend, digital = map_network(
                model.weights,
                params,
                crossbar.scheme,
                tile=crossbar.tile,
                seed=_cell_seed(seed, sigma_index, state_index, cell_seed, model.fold),
                read_voltage=crossbar.read_voltage,
                fold_bn=crossbar.fold_batchnorm,
            )
            report = evaluate_backend(spec, digital, dataset, model.validation, backend, settings.threshold)
            rows.append(SweepRow(sigma, states, cell_seed, model.fold, report.accuracy, report.sensitivity,
                                 report.auroc, report.fpr_per_hour))
        except (MemSeizureError, ValueError, FloatingPointError) as e:
            logger.warning("掃描格 σ=%s states=%s seed=%d fold=%d 失敗: %s", sigma, states, cell_seed, model.fold, e)
            nan = float("nan")
            rows.append(SweepRow(sigma, states, cell_seed, model.fold, nan, nan, nan, nan, str(e)))
    return rows


def sweep(
    spec: NetworkSpec,
    models: Sequence[FoldModel],
    dataset: WindowDataset,
    settings: Optional[SweepSettings] = None,
    crossbar: Optional[CrossbarSettings] = None,
    base_params: Optional[DeviceParameters] = None,
    seed: int = 0,
    workers: int = 1,
    progress: bool = False,
) -> SweepGrid:
    """對每個 (σ, 狀態數, 種子) 重新採樣全部器件並在各折驗證集上推理

    格子之間相互獨立，結果按 (σ, 狀態數, 種子) 的字典序合併；失敗的格子記錄錯誤而不中止整個網格。
    """
    settings = settings or SweepSettings()
    crossbar = crossbar or CrossbarSettings()
    base_params = base_params or DeviceParameters()
    cells = [
        (sigma_index, state_index, cell_seed)
        for sigma_index in range(len(settings.sigmas))
        for state_index in range(len(settings.states))
        for cell_seed in range(settings.seeds)
    ]
    context = (spec, list(models), dataset, settings, crossbar, base_params, seed)
    rows: List[SweepRow] = []
    bar = tqdm(total=len(cells), desc="掃描", disable=not progress, leave=False)
    try:
        if workers <= 1:
            _init_sweep(*context)
            for cell in cells:
                rows.extend(_run_cell(cell))
                bar.update()
        else:
            with Pool(workers, initializer=_init_sweep, initargs=context) as pool:
                for cell_rows in pool.imap(_run_cell, cells):
                    rows.extend(cell_rows)
                    bar.update()
    finally:
        bar.close()
        _SWEEP_CONTEXT.clear()
    grid = SweepGrid(rows)
    logger.info("掃描完成: %d/%d 個格子成功", grid.completed_cells, len(cells))
    return grid


def write_metrics_csv(reports: Sequence[Tuple[int, str, MetricsReport]], path: Union[str, Path]) -> Path:
    rows = []
    for fold, backend, report in reports:
        values = asdict(report)
        rows.append([fold, backend] + [values[key] for key in METRICS_HEADER[2:]])
    return atomic_write_csv(path, METRICS_HEADER, rows)

