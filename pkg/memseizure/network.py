"""表一的卷積網絡：形狀推導、im2col、逐層前向/反向傳播，以及理想與憶阻兩種執行後端

卷積沒有零填充也沒有偏置（由批歸一化吸收）；池化、批歸一化、ReLU 和 softmax
始終在數字域計算，只有卷積和全連接的矩陣乘法會交給後端。
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import log_softmax, softmax

from .crossbar import DEFAULT_READ_VOLTAGE, MappedLayer, TileConfig, WeightScheme, map_weights, vmm_batch
from .device import DeviceParameters
from .errors import InvalidParameterError, ShapeMismatchError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
FREQUENCY_BINS = 114
POOL_SIZE = (2, 2)

# (名稱, 濾波器數, 卷積核, 步長, 其後的批歸一化)
CONV_LAYERS: Tuple[Tuple[str, int, Tuple[int, int], Tuple[int, int], str], ...] = (
    ("conv1", 16, (5, 5), (2, 2), "bn1"),
    ("conv2", 32, (3, 3), (1, 1), "bn2"),
    ("conv3", 64, (3, 3), (1, 1), "bn3"),
)
FC_HIDDEN = ("fc1", 256, "bn4")
FC_OUTPUT = ("fc2", 2)
CROSSBAR_LAYERS = ("conv1", "conv2", "conv3", "fc1", "fc2")
BN_LAYERS = ("bn1", "bn2", "bn3", "bn4")
BN_FIELDS = ("gain", "bias", "mean", "var")

Product = Callable[[str, np.ndarray, np.ndarray], np.ndarray]


class NetworkSpec(BaseModel):
    """網絡規格：n 個電極、t 秒窗口；時間幀數 p = t·f_s/k_s"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(22, ge=1, description="電極數")
    t: int = Field(30, ge=1, description="窗口長度 (秒)")
    sample_rate: int = Field(256, ge=1, description="採樣率 f_s (Hz)")
    hop: int = Field(128, ge=1, description="STFT 重疊樣本數 k_s")
    frequency_bins: int = Field(FREQUENCY_BINS, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self):
        if (self.t * self.sample_rate) % self.hop:
            raise ValueError("t·f_s 必須能被 k_s 整除")
        shapes(self.n, self.p, self.frequency_bins)
        return self

    @property
    def p(self) -> int:
        return self.t * self.sample_rate // self.hop

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.n, self.p, self.frequency_bins)

    def layer_shapes(self) -> List["LayerShape"]:
        return shapes(self.n, self.p, self.frequency_bins)


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: str
    output: Tuple[int, ...]
    fan_in: int = 0
    fan_out: int = 0


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def shapes(n: int, p: int, frequency_bins: int = FREQUENCY_BINS) -> List[LayerShape]:
    """逐層輸出形狀（向下取整的標準卷積/池化算術）"""
    if n < 1 or p < 1 or frequency_bins < 1:
        raise InvalidParameterError(f"輸入尺寸必須為正: n={n}, p={p}, bins={frequency_bins}")

    result: List[LayerShape] = []
    channels, height, width = n, p, frequency_bins
    for index, (name, filters, (kh, kw), (sh, sw), _) in enumerate(CONV_LAYERS, start=1):
        if height < kh or width < kw:
            raise InvalidParameterError(f"{name} 的輸入 {height}×{width} 小於卷積核 {kh}×{kw}")
        fan_in = channels * kh * kw
        channels, height, width = filters, _conv_out(height, kh, sh), _conv_out(width, kw, sw)
        result.append(LayerShape(name, "conv", (channels, height, width), fan_in, filters))

        height, width = height // POOL_SIZE[0], width // POOL_SIZE[1]
        if height < 1 or width < 1:
            raise InvalidParameterError(f"pool{index} 之後尺寸塌縮為 {height}×{width}")
        result.append(LayerShape(f"pool{index}", "pool", (channels, height, width)))

    flat = channels * height * width
    hidden_name, hidden, _ = FC_HIDDEN
    result.append(LayerShape(hidden_name, "fc", (hidden,), flat, hidden))
    output_name, outputs = FC_OUTPUT
    result.append(LayerShape(output_name, "fc", (outputs,), hidden, outputs))
    return result


def im2col_batch(x: np.ndarray, kernel: Tuple[int, int], stride: Tuple[int, int]) -> Tuple[np.ndarray, Tuple[int, int]]:
    """(N, C, H, W) → (N, out_h·out_w, C·kh·kw)；行內順序為 (通道, 核行, 核列)"""
    kh, kw = kernel
    sh, sw = stride
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatchError(f"卷積核 {kernel} 大於輸入 {x.shape[2:]}")
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    n, c, out_h, out_w = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h * out_w, c * kh * kw)
    return cols, (out_h, out_w)


def im2col(x: np.ndarray, kernel: Tuple[int, int], stride: Tuple[int, int] = (1, 1)) -> np.ndarray:
    """C×H×W → (C·kh·kw)×(out_h·out_w)，第 j 列是第 j 個輸出位置（行優先）的感受野"""
    tensor = np.asarray(x)
    if tensor.ndim != 3:
        raise ShapeMismatchError(f"im2col 需要 C×H×W 張量，實際形狀 {tensor.shape}")
    cols, _ = im2col_batch(tensor[None], kernel, stride)
    return cols[0].T


# ---- 逐層運算，前向返回 (輸出, 快取) ----

def conv_forward(x, weight, stride, product: Optional[Callable] = None):
    n = x.shape[0]
    filters, _, kh, kw = weight.shape
    cols, (out_h, out_w) = im2col_batch(x, (kh, kw), stride)
    matrix = weight.reshape(filters, -1).T
    flat = cols.reshape(-1, cols.shape[-1])
    out = flat @ matrix if product is None else product(flat, matrix)
    out = out.reshape(n, out_h, out_w, filters).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, weight, stride, (out_h, out_w))


def conv_backward(dout, cache):
    x_shape, cols, weight, (sh, sw), (out_h, out_w) = cache
    n, channels, _, _ = x_shape
    filters, _, kh, kw = weight.shape
    grad = dout.transpose(0, 2, 3, 1).reshape(n, out_h * out_w, filters)
    dweight = np.tensordot(grad, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
    dcols = (grad @ weight.reshape(filters, -1)).reshape(n, out_h, out_w, channels, kh, kw)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + sh * (out_h - 1) + 1:sh, j:j + sw * (out_w - 1) + 1:sw] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dweight


def maxpool_forward(x, size: Tuple[int, int] = POOL_SIZE):
    n, c, h, w = x.shape
    ph, pw = size
    out_h, out_w = h // ph, w // pw
    windows = (x[:, :, :out_h * ph, :out_w * pw]
               .reshape(n, c, out_h, ph, out_w, pw)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, out_h, out_w, ph * pw))
    index = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return out, (x.shape, index, size)


def maxpool_backward(dout, cache):
    x_shape, index, (ph, pw) = cache
    n, c, out_h, out_w = index.shape
    dwindows = np.zeros((n, c, out_h, out_w, ph * pw))
    np.put_along_axis(dwindows, index[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, :out_h * ph, :out_w * pw] = (dwindows
                                          .reshape(n, c, out_h, out_w, ph, pw)
                                          .transpose(0, 1, 2, 4, 3, 5)
                                          .reshape(n, c, out_h * ph, out_w * pw))
    return dx


def _channel_view(vector, ndim):
    return vector.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_forward(x, gain, bias, mean, var, training: bool, eps: float = BN_EPS):
    """訓練模式用批統計量，推理模式用保存的均值和方差；返回 (y, 快取, 批統計量)"""
    axes = (0,) + tuple(range(2, x.ndim))
    if training:
        mu, sigma2 = x.mean(axis=axes), x.var(axis=axes)
    else:
        mu, sigma2 = mean, var
    inv_std = 1.0 / np.sqrt(sigma2 + eps)
    xhat = (x - _channel_view(mu, x.ndim)) * _channel_view(inv_std, x.ndim)
    y = _channel_view(gain, x.ndim) * xhat + _channel_view(bias, x.ndim)
    count = x.size // x.shape[1]
    return y, (xhat, inv_std, gain, axes, training), (mu, sigma2, count)


def batchnorm_backward(dy, cache):
    xhat, inv_std, gain, axes, training = cache
    dxhat = dy * _channel_view(gain, dy.ndim)
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    if not training:
        return dxhat * _channel_view(inv_std, dy.ndim), dgain, dbias
    m = dy.size // dy.shape[1]
    dx = (_channel_view(inv_std, dy.ndim) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
    )
    return dx, dgain, dbias


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def fc_forward(x, weight, bias=None, product: Optional[Callable] = None):
    out = x @ weight if product is None else product(x, weight)
    if bias is not None:
        out = out + bias
    return out, (x, weight)


def fc_backward(dout, cache):
    x, weight = cache
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


# ---- 權重容器 ----

@dataclass
class LayerWeights:
    """一組網絡參數；名稱形如 conv1.weight、bn1.gain、fc2.bias、input.mean"""

    spec: NetworkSpec
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def copy(self) -> "LayerWeights":
        return LayerWeights(self.spec, {name: value.copy() for name, value in self.tensors.items()})

    @staticmethod
    def expected_shapes(spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
        layer = {shape.name: shape for shape in spec.layer_shapes()}
        expected: Dict[str, Tuple[int, ...]] = {"input.mean": (spec.n,), "input.std": (spec.n,)}
        channels = spec.n
        for name, filters, (kh, kw), _, bn in CONV_LAYERS:
            expected[f"{name}.weight"] = (filters, channels, kh, kw)
            for item in BN_FIELDS:
                expected[f"{bn}.{item}"] = (filters,)
            channels = filters
        hidden_name, hidden, bn = FC_HIDDEN
        expected[f"{hidden_name}.weight"] = (layer[hidden_name].fan_in, hidden)
        for item in BN_FIELDS:
            expected[f"{bn}.{item}"] = (hidden,)
        output_name, outputs = FC_OUTPUT
        expected[f"{output_name}.weight"] = (hidden, outputs)
        expected[f"{output_name}.bias"] = (outputs,)
        return expected

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "LayerWeights":
        """全零權重；批歸一化與輸入標準化設為恆等"""
        tensors = {}
        for name, shape in cls.expected_shapes(spec).items():
            identity = name.endswith((".var", ".std", ".gain"))
            tensors[name] = np.ones(shape) if identity else np.zeros(shape)
        return cls(spec, tensors)

    def trainable_names(self) -> List[str]:
        return [name for name in self.expected_shapes(self.spec)
                if name.endswith((".weight", ".gain", ".bias")) and not name.startswith("input.")]

    def validate(self) -> None:
        expected = self.expected_shapes(self.spec)
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise ShapeMismatchError(f"缺少權重張量: {missing}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ShapeMismatchError(f"{name} 形狀 {self.tensors[name].shape}，應為 {shape}")
        for name in [f"{bn}.var" for bn in BN_LAYERS] + ["input.std"]:
            if np.any(self.tensors[name] <= 0):
                raise InvalidParameterError(f"{name} 必須為正")

    def crossbar_matrix(self, name: str) -> np.ndarray:
        """映射到交叉陣列的矩陣，行 = 扇入，列 = 扇出"""
        weight = self.tensors[f"{name}.weight"]
        if weight.ndim == 4:
            return weight.reshape(weight.shape[0], -1).T
        return weight


def fold_batchnorm(weights: LayerWeights, eps: float = BN_EPS) -> LayerWeights:
    """把批歸一化的縮放併入前一層矩陣，批歸一化只剩平移"""
    folded = weights.copy()
    pairs = [(name, bn) for name, _, _, _, bn in CONV_LAYERS] + [(FC_HIDDEN[0], FC_HIDDEN[2])]
    for layer, bn in pairs:
        scale = folded[f"{bn}.gain"] / np.sqrt(folded[f"{bn}.var"] + eps)
        weight = folded[f"{layer}.weight"]
        if weight.ndim == 4:
            folded[f"{layer}.weight"] = weight * scale[:, None, None, None]
        else:
            folded[f"{layer}.weight"] = weight * scale[None, :]
        folded[f"{bn}.bias"] = folded[f"{bn}.bias"] - folded[f"{bn}.mean"] * scale
        folded[f"{bn}.mean"] = np.zeros_like(scale)
        folded[f"{bn}.gain"] = np.ones_like(scale)
        folded[f"{bn}.var"] = np.full_like(scale, 1.0 - eps)
    return folded


# ---- 執行後端 ----

class Backend(Protocol):
    name: str

    def product(self, layer: str, inputs: np.ndarray, matrix: np.ndarray) -> np.ndarray:
        ...


class IdealBackend:
    """浮點矩陣乘法"""

    name = "ideal"

    def product(self, layer: str, inputs: np.ndarray, matrix: np.ndarray) -> np.ndarray:
        return inputs @ matrix


class MemristiveBackend:
    """每個卷積/全連接層的乘法都經過對應的交叉陣列 VMM"""

    name = "memristive"

    def __init__(self, layers: Dict[str, MappedLayer]):
        missing = [name for name in CROSSBAR_LAYERS if name not in layers]
        if missing:
            raise InvalidParameterError(f"憶阻後端缺少映射層: {missing}")
        self.layers = layers

    def product(self, layer: str, inputs: np.ndarray, matrix: np.ndarray) -> np.ndarray:
        mapped = self.layers[layer]
        if (mapped.logical_rows, mapped.logical_cols) != matrix.shape:
            raise ShapeMismatchError(f"{layer} 映射尺寸 {(mapped.logical_rows, mapped.logical_cols)} 與權重 {matrix.shape} 不符")
        return vmm_batch(mapped, inputs)

    @property
    def tile_count(self) -> int:
        return sum(layer.tile_count for layer in self.layers.values())


def map_network(
    weights: LayerWeights,
    device_params: DeviceParameters,
    scheme: WeightScheme = WeightScheme.DOUBLE_COLUMN,
    tile: Optional[TileConfig] = None,
    seed: int = 0,
    read_voltage: float = DEFAULT_READ_VOLTAGE,
    fold_bn: bool = False,
) -> Tuple[MemristiveBackend, LayerWeights]:
    """把每個卷積/全連接層映射到獨立的器件；第 i 層使用子種子 [seed, i]

    返回後端以及數字部分應使用的權重（fold_bn 時批歸一化已被併入）。
    """
    digital = fold_batchnorm(weights) if fold_bn else weights
    layers = {}
    for index, name in enumerate(CROSSBAR_LAYERS):
        layers[name] = map_weights(
            digital.crossbar_matrix(name),
            scheme,
            device_params,
            tile=tile,
            seed=np.random.SeedSequence([seed, index]),
            read_voltage=read_voltage,
        )
    return MemristiveBackend(layers), digital


# ---- 整網前向/反向 ----

@dataclass
class ForwardResult:
    logits: np.ndarray
    caches: Dict[str, tuple]
    batch_stats: Dict[str, tuple]


def _as_batch(spec: NetworkSpec, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    tensor = np.asarray(x, dtype=np.float64)
    single = tensor.ndim == 3
    if single:
        tensor = tensor[None]
    if tensor.ndim != 4 or tuple(tensor.shape[1:]) != spec.input_shape:
        raise ShapeMismatchError(f"輸入形狀 {np.shape(x)} 與網絡輸入 {spec.input_shape} 不符")
    return tensor, single


def forward_pass(weights: LayerWeights, x: np.ndarray, training: bool = False,
                 backend: Optional[Backend] = None) -> ForwardResult:
    """批量前向傳播，返回 logits 與反向傳播需要的快取"""
    backend = backend or IdealBackend()
    batch, _ = _as_batch(weights.spec, x)
    caches: Dict[str, tuple] = {}
    stats: Dict[str, tuple] = {}

    def product_for(layer: str):
        return lambda inputs, matrix: backend.product(layer, inputs, matrix)

    h = (batch - weights["input.mean"][None, :, None, None]) / weights["input.std"][None, :, None, None]
    for index, (name, _, _, stride, bn) in enumerate(CONV_LAYERS, start=1):
        h, caches[name] = conv_forward(h, weights[f"{name}.weight"], stride, product_for(name))
        h, caches[bn], stats[bn] = batchnorm_forward(
            h, weights[f"{bn}.gain"], weights[f"{bn}.bias"], weights[f"{bn}.mean"], weights[f"{bn}.var"], training)
        h, caches[f"relu{index}"] = relu_forward(h)
        h, caches[f"pool{index}"] = maxpool_forward(h)

    caches["flatten"] = h.shape
    h = h.reshape(h.shape[0], -1)
    hidden_name, _, bn = FC_HIDDEN
    h, caches[hidden_name] = fc_forward(h, weights[f"{hidden_name}.weight"], product=product_for(hidden_name))
    h, caches[bn], stats[bn] = batchnorm_forward(
        h, weights[f"{bn}.gain"], weights[f"{bn}.bias"], weights[f"{bn}.mean"], weights[f"{bn}.var"], training)
    h, caches["relu4"] = relu_forward(h)
    output_name, _ = FC_OUTPUT
    logits, caches[output_name] = fc_forward(
        h, weights[f"{output_name}.weight"], weights[f"{output_name}.bias"], product=product_for(output_name))
    return ForwardResult(logits, caches, stats)


def backward_pass(weights: LayerWeights, result: ForwardResult, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
    """從 logits 的梯度反向傳播，返回所有可訓練參數的梯度"""
    caches = result.caches
    grads: Dict[str, np.ndarray] = {}
    output_name, _ = FC_OUTPUT
    dh, grads[f"{output_name}.weight"], grads[f"{output_name}.bias"] = fc_backward(dlogits, caches[output_name])
    dh = relu_backward(dh, caches["relu4"])
    hidden_name, _, bn = FC_HIDDEN
    dh, grads[f"{bn}.gain"], grads[f"{bn}.bias"] = batchnorm_backward(dh, caches[bn])
    dh, grads[f"{hidden_name}.weight"], _ = fc_backward(dh, caches[hidden_name])
    dh = dh.reshape(caches["flatten"])

    for index in range(len(CONV_LAYERS), 0, -1):
        name, _, _, _, bn = CONV_LAYERS[index - 1]
        dh = maxpool_backward(dh, caches[f"pool{index}"])
        dh = relu_backward(dh, caches[f"relu{index}"])
        dh, grads[f"{bn}.gain"], grads[f"{bn}.bias"] = batchnorm_backward(dh, caches[bn])
        dh, grads[f"{name}.weight"] = conv_backward(dh, caches[name])
    return grads


def forward(spec: NetworkSpec, weights: LayerWeights, x: np.ndarray,
            backend: Optional[Backend] = None) -> np.ndarray:
    """推理：單個 n×p×114 輸入返回 2 個類別概率，批量輸入返回 N×2"""
    if weights.spec != spec:
        raise ShapeMismatchError(f"權重屬於 {weights.spec}，而不是 {spec}")
    batch, single = _as_batch(spec, x)
    logits = forward_pass(weights, batch, training=False, backend=backend).logits
    probabilities = softmax(logits, axis=1)
    return probabilities[0] if single else probabilities


def log_probabilities(logits: np.ndarray) -> np.ndarray:
    return log_softmax(logits, axis=1)


def predict_proba(spec: NetworkSpec, weights: LayerWeights, windows: np.ndarray,
                  backend: Optional[Backend] = None, batch_size: int = 64) -> np.ndarray:
    """分批推理，返回每個窗口的發作前期 (preictal) 概率"""
    if len(windows) == 0:
        return np.zeros(0)
    chunks: Iterable[np.ndarray] = (windows[start:start + batch_size] for start in range(0, len(windows), batch_size))
    return np.concatenate([forward(spec, weights, chunk, backend)[:, 1] for chunk in chunks])
