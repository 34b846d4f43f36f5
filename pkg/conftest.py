"""測試共用的數據與模型"""

import numpy as np
import pytest

from memseizure.network import BN_LAYERS, LayerWeights, NetworkSpec
from memseizure.preprocess import ClinicalWindows
from memseizure.synthetic import toy_dataset, write_edf_fixtures
from memseizure.training import TrainingSettings, init_weights, train_arrays

# 卷積/池化之後仍保留至少 1×1 的最小輸入
SMALL_SPEC = NetworkSpec(n=2, t=22, frequency_bins=44)
TOY_SPEC = NetworkSpec(n=1, t=30)
FIXTURE_CLINICAL = ClinicalWindows(sop=5, sph=5, window_len=30, interictal_guard=0.1)


def random_weights(spec: NetworkSpec, seed: int = 0) -> LayerWeights:
    """隨機初始化，並給批歸一化一組非平凡的統計量"""
    weights = init_weights(spec, seed)
    rng = np.random.default_rng(seed + 1000)
    for bn in BN_LAYERS:
        size = weights[f"{bn}.gain"].shape
        weights[f"{bn}.gain"] = rng.uniform(0.5, 1.5, size)
        weights[f"{bn}.bias"] = rng.normal(0.0, 0.1, size)
        weights[f"{bn}.mean"] = rng.normal(0.0, 0.1, size)
        weights[f"{bn}.var"] = rng.uniform(0.5, 2.0, size)
    weights["input.mean"] = rng.normal(0.0, 0.1, spec.n)
    weights["input.std"] = rng.uniform(0.8, 1.2, spec.n)
    return weights


@pytest.fixture
def small_spec():
    return SMALL_SPEC


@pytest.fixture
def fixture_clinical():
    return FIXTURE_CLINICAL


@pytest.fixture(scope="session")
def toy():
    return toy_dataset(64, TOY_SPEC, seed=0)


@pytest.fixture(scope="session")
def toy_settings():
    return TrainingSettings(epochs=15, batch_size=16, lr=3e-3, k=4)


@pytest.fixture(scope="session")
def trained_toy(toy, toy_settings):
    """在全部玩具窗口上訓練好的模型"""
    return train_arrays(TOY_SPEC, toy.windows, toy.labels, toy_settings, seed=0)


@pytest.fixture(scope="session")
def edf_dir(tmp_path_factory):
    """三個首尾相接的 10 分鐘 EDF 文件，第三個文件 300–340 s 有一次發作"""
    directory = tmp_path_factory.mktemp("edf")
    write_edf_fixtures(directory)
    return directory


@pytest.fixture
def make_weights():
    return random_weights
