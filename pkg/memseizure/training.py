"""離線訓練：NLL 損失、DiffGrad 優化器、分層 k 折劃分與確定性的訓練循環

訓練始終使用理想後端；憶阻映射只在推理時發生。
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, softmax
from sklearn.model_selection import StratifiedKFold
from tqdm import tqdm

from .dataset import WindowDataset
from .errors import (InvalidInputError, InvalidParameterError, MissingInputError, ShapeMismatchError,
                     TrainingDivergedError)
from .fileio import atomic_write_csv
from .network import (
    BN_LAYERS,
    CONV_LAYERS,
    FC_HIDDEN,
    FC_OUTPUT,
    IdealBackend,
    LayerWeights,
    NetworkSpec,
    backward_pass,
    forward_pass,
    log_probabilities,
)
from .weights_io import save_weights

logger = logging.getLogger(__name__)

TRAINING_LOG = "training_log.csv"
FOLDS_FILE = "folds.csv"


class TrainingSettings(BaseModel):
    """訓練超參數"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(50, ge=0)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    bn_momentum: float = Field(0.1, gt=0, le=1)
    k: int = Field(5, ge=2)
    optimizer: str = Field("diffgrad", pattern="^(diffgrad|adam)$")


# ---- 損失 ----

def _check_targets(targets: np.ndarray, batch: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.shape != (batch,):
        raise ShapeMismatchError(f"目標形狀 {targets.shape} 與批大小 {batch} 不符")
    if not np.isin(targets, (0, 1)).all():
        raise InvalidInputError(f"目標必須屬於 {{0, 1}}: {np.unique(targets)}")
    return targets.astype(np.int64)


def nll_loss(log_probs: np.ndarray, targets: np.ndarray) -> float:
    """批平均的 −log p(target)"""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[1] != 2:
        raise ShapeMismatchError(f"log_probs 應為 batch×2，實際 {log_probs.shape}")
    targets = _check_targets(targets, log_probs.shape[0])
    return float(-np.mean(log_probs[np.arange(len(targets)), targets]))


def nll_gradient(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """NLL(log_softmax(logits)) 對 logits 的梯度"""
    targets = _check_targets(targets, logits.shape[0])
    grad = softmax(logits, axis=1)
    grad[np.arange(len(targets)), targets] -= 1.0
    return grad / len(targets)


# ---- 優化器 ----

@dataclass
class OptimizerState:
    """每個參數的一階矩 m、二階矩 v、上一步梯度 g_prev 與步數"""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    g_prev: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Dict[str, np.ndarray], settings: Optional[TrainingSettings] = None) -> "OptimizerState":
        settings = settings or TrainingSettings()
        zeros = {name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()}
        return cls(
            lr=settings.lr,
            beta1=settings.beta1,
            beta2=settings.beta2,
            eps=settings.eps,
            m={name: value.copy() for name, value in zeros.items()},
            v={name: value.copy() for name, value in zeros.items()},
            g_prev={name: value.copy() for name, value in zeros.items()},
        )


def diffgrad_step(
    state: OptimizerState,
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    friction: bool = True,
) -> Dict[str, np.ndarray]:
    """一步 DiffGrad：Adam 的偏差校正步長乘以摩擦係數 ξ = sigmoid(|g_prev − g|)

    friction=False 時 ξ ≡ 1，即 Adam。state 原地更新，返回新的參數字典。
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeMismatchError(f"梯度 {name} 沒有對應的參數")
        if np.shape(grad) != np.shape(params[name]):
            raise ShapeMismatchError(f"{name} 梯度形狀 {np.shape(grad)} 與參數 {np.shape(params[name])} 不符")
        if not np.all(np.isfinite(grad)):
            raise InvalidInputError(f"{name} 的梯度包含非有限值")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    updated = dict(params)
    for name, grad in grads.items():
        grad = np.asarray(grad, dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(grad)
            state.v[name] = np.zeros_like(grad)
            state.g_prev[name] = np.zeros_like(grad)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        xi = expit(np.abs(state.g_prev[name] - grad)) if friction else 1.0
        updated[name] = params[name] - state.lr * xi * m_hat / (np.sqrt(v_hat) + state.eps)
        state.g_prev[name] = grad.copy()
    return updated


def adam_step(state: OptimizerState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return diffgrad_step(state, params, grads, friction=False)


# ---- k 折劃分 ----

@dataclass(frozen=True)
class FoldPlan:
    """k 折劃分；合成窗口只出現在訓練集中"""

    k: int
    train: Tuple[np.ndarray, ...]
    validation: Tuple[np.ndarray, ...]
    synthetic: np.ndarray

    def fold_of(self) -> np.ndarray:
        """每個窗口所在的驗證折；合成窗口為 −1"""
        assignment = np.full(len(self.synthetic), -1, dtype=np.int64)
        for fold, indices in enumerate(self.validation):
            assignment[indices] = fold
        return assignment

    def write_csv(self, path: Union[str, Path]) -> Path:
        rows = [[i, int(fold)] for i, fold in enumerate(self.fold_of())]
        return atomic_write_csv(path, ["window_id", "fold"], rows)


def stratified_kfold(labels: Sequence[int], k: int = 5, seed: int = 0,
                     synthetic: Optional[Sequence[bool]] = None) -> FoldPlan:
    """只對真實窗口做分層劃分；合成窗口加入每一折的訓練集"""
    labels = np.asarray(labels, dtype=np.int64)
    synthetic = np.zeros(len(labels), dtype=bool) if synthetic is None else np.asarray(synthetic, dtype=bool)
    if synthetic.shape != labels.shape:
        raise ShapeMismatchError("synthetic 與 labels 長度不一致")
    if k < 2:
        raise InvalidParameterError(f"k 必須 ≥ 2: {k}")
    real = np.flatnonzero(~synthetic)
    fake = np.flatnonzero(synthetic)
    for value in (0, 1):
        count = int(np.sum(labels[real] == value))
        if count < k:
            raise InvalidParameterError(f"類別 {value} 只有 {count} 個真實窗口，少於 k={k}")

    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=int(seed) % (2 ** 32))
    train, validation = [], []
    for train_part, validation_part in splitter.split(np.zeros(len(real)), labels[real]):
        validation.append(np.sort(real[validation_part]))
        train.append(np.sort(np.concatenate([real[train_part], fake])))
    return FoldPlan(k=k, train=tuple(train), validation=tuple(validation), synthetic=synthetic)


# ---- 初始化與標準化 ----

def init_weights(spec: NetworkSpec, seed=0) -> LayerWeights:
    """卷積/全連接用 Kaiming 均勻初始化；批歸一化 gain=1、bias=0、mean=0、var=1"""
    rng = np.random.default_rng(seed)
    weights = LayerWeights.zeros(spec)
    for name, _, _, _, _ in CONV_LAYERS:
        shape = weights[f"{name}.weight"].shape
        fan_in = int(np.prod(shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        weights[f"{name}.weight"] = rng.uniform(-bound, bound, size=shape)
    for name in (FC_HIDDEN[0], FC_OUTPUT[0]):
        shape = weights[f"{name}.weight"].shape
        bound = math.sqrt(6.0 / shape[0])
        weights[f"{name}.weight"] = rng.uniform(-bound, bound, size=shape)
    bias_bound = 1.0 / math.sqrt(weights[f"{FC_OUTPUT[0]}.weight"].shape[0])
    weights[f"{FC_OUTPUT[0]}.bias"] = rng.uniform(-bias_bound, bias_bound, size=weights[f"{FC_OUTPUT[0]}.bias"].shape)
    return weights


def fit_standardizer(windows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """每個通道在訓練窗口上的均值與標準差；常數通道的標準差取 1"""
    data = np.asarray(windows, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] == 0:
        raise ShapeMismatchError(f"需要非空的 (N, n, p, bins) 窗口，實際 {data.shape}")
    mean = data.mean(axis=(0, 2, 3))
    std = data.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return mean, std


# ---- 訓練循環 ----

@dataclass
class TrainResult:
    weights: LayerWeights
    log: List[Tuple[int, int, float, float]]


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[start:start + batch_size] for start in range(0, len(order), batch_size)]
    # 批歸一化無法處理只有一個樣本的批
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _update_running_stats(weights: LayerWeights, stats: Dict[str, tuple], momentum: float) -> None:
    for bn in BN_LAYERS:
        mean, var, count = stats[bn]
        unbiased = var * count / (count - 1) if count > 1 else var
        weights[f"{bn}.mean"] = (1.0 - momentum) * weights[f"{bn}.mean"] + momentum * mean
        weights[f"{bn}.var"] = (1.0 - momentum) * weights[f"{bn}.var"] + momentum * unbiased


def accuracy(weights: LayerWeights, windows: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    if len(labels) == 0:
        return float("nan")
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = forward_pass(weights, windows[start:start + batch_size], training=False).logits
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / len(labels)


def train_arrays(
    spec: NetworkSpec,
    windows: np.ndarray,
    labels: np.ndarray,
    settings: Optional[TrainingSettings] = None,
    seed=0,
    fold: int = 0,
    progress: bool = False,
) -> TrainResult:
    """在給定窗口上訓練；初始化與每輪打亂都由 SeedSequence([seed, fold]) 派生"""
    settings = settings or TrainingSettings()
    windows = np.asarray(windows, dtype=np.float64)
    labels = _check_targets(labels, windows.shape[0])
    if windows.ndim != 4 or tuple(windows.shape[1:]) != spec.input_shape:
        raise ShapeMismatchError(f"窗口形狀 {windows.shape[1:]} 與網絡輸入 {spec.input_shape} 不符")
    if len(labels) < 2:
        raise InvalidInputError("至少需要兩個訓練窗口")

    init_seed, shuffle_seed = np.random.SeedSequence([int(seed), int(fold)]).spawn(2)
    weights = init_weights(spec, init_seed)
    # lr=0 時所有張量（含標準化參數與批歸一化統計量）保持初始值
    frozen = settings.lr == 0
    if not frozen:
        weights["input.mean"], weights["input.std"] = fit_standardizer(windows)
    rng = np.random.default_rng(shuffle_seed)
    names = weights.trainable_names()
    state = OptimizerState.create({name: weights[name] for name in names}, settings)
    friction = settings.optimizer == "diffgrad"
    backend = IdealBackend()

    log: List[Tuple[int, int, float, float]] = []
    epochs = tqdm(range(1, settings.epochs + 1), desc=f"fold {fold}", disable=not progress, leave=False)
    for epoch in epochs:
        order = rng.permutation(len(labels))
        total_loss = 0.0
        for batch_index, batch in enumerate(_batches(order, settings.batch_size)):
            result = forward_pass(weights, windows[batch], training=True, backend=backend)
            loss = nll_loss(log_probabilities(result.logits), labels[batch])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_index, loss)
            total_loss += loss * len(batch)
            if frozen:
                continue
            grads = backward_pass(weights, result, nll_gradient(result.logits, labels[batch]))
            params = diffgrad_step(state, {name: weights[name] for name in names}, grads, friction=friction)
            for name in names:
                weights[name] = params[name]
            _update_running_stats(weights, result.batch_stats, settings.bn_momentum)
        mean_loss = total_loss / len(labels)
        train_accuracy = accuracy(weights, windows, labels, settings.batch_size)
        log.append((epoch, fold, mean_loss, train_accuracy))
        logger.debug("fold %d epoch %d: loss=%.6f acc=%.4f", fold, epoch, mean_loss, train_accuracy)
    return TrainResult(weights, log)


def train(
    spec: NetworkSpec,
    dataset: WindowDataset,
    plan: Optional[FoldPlan] = None,
    fold: int = 0,
    settings: Optional[TrainingSettings] = None,
    seed: int = 0,
    progress: bool = False,
) -> TrainResult:
    """訓練一折（plan 為空時用全部窗口），返回最後一輪的權重"""
    indices = np.arange(len(dataset)) if plan is None else plan.train[fold]
    return train_arrays(spec, dataset.windows[indices], dataset.labels[indices], settings, seed, fold, progress)


@dataclass
class FoldResult:
    fold: int
    weights: LayerWeights
    log: List[Tuple[int, int, float, float]]
    validation: np.ndarray


def _train_fold_job(job) -> FoldResult:
    spec, windows, labels, validation, settings, seed, fold = job
    result = train_arrays(spec, windows, labels, settings, seed, fold)
    return FoldResult(fold, result.weights, result.log, validation)


def train_folds(
    spec: NetworkSpec,
    dataset: WindowDataset,
    settings: Optional[TrainingSettings] = None,
    seed: int = 0,
    output_dir: Optional[Union[str, Path]] = None,
    workers: int = 1,
    progress: bool = False,
) -> List[FoldResult]:
    """k 折訓練，每折一個獨立任務；寫出 fold_<i>/ 權重、training_log.csv 與 folds.csv"""
    settings = settings or TrainingSettings()
    plan = stratified_kfold(dataset.labels, settings.k, seed, dataset.synthetic)
    jobs = [
        (spec, dataset.windows[plan.train[fold]], dataset.labels[plan.train[fold]], plan.validation[fold],
         settings, seed, fold)
        for fold in range(plan.k)
    ]
    bar = tqdm(total=len(jobs), desc="訓練", disable=not progress, leave=False)
    results: List[FoldResult] = []
    try:
        if workers <= 1:
            for job in jobs:
                results.append(_train_fold_job(job))
                bar.update()
        else:
            with Pool(workers) as pool:
                for result in pool.imap(_train_fold_job, jobs):
                    results.append(result)
                    bar.update()
    finally:
        bar.close()

    if output_dir is not None:
        output_dir = Path(output_dir)
        for result in results:
            save_weights(result.weights, output_dir / f"fold_{result.fold}")
        rows = [list(row) for result in results for row in result.log]
        atomic_write_csv(output_dir / TRAINING_LOG, ["epoch", "fold", "loss", "train_accuracy"], rows)
        plan.write_csv(output_dir / FOLDS_FILE)
        logger.info("%d 折權重已寫入 %s", plan.k, output_dir)
    return results


def load_fold_plan(path: Union[str, Path], synthetic: np.ndarray) -> FoldPlan:
    """從 folds.csv 重建劃分"""
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            assignment = np.array([int(row["fold"]) for row in csv.DictReader(handle)], dtype=np.int64)
    except OSError as e:
        raise MissingInputError(f"讀取折劃分失敗: {e}") from e
    except (KeyError, ValueError) as e:
        raise InvalidInputError(f"{path} 格式錯誤: {e}") from e
    if len(assignment) != len(synthetic):
        raise InvalidInputError(f"{path} 有 {len(assignment)} 行，數據集有 {len(synthetic)} 個窗口")
    k = int(assignment.max()) + 1
    everything = np.arange(len(assignment))
    validation = tuple(np.flatnonzero(assignment == fold) for fold in range(k))
    train = tuple(np.setdiff1d(everything, part) for part in validation)
    return FoldPlan(k=k, train=train, validation=validation, synthetic=np.asarray(synthetic, dtype=bool))
