"""權重映射、分塊與交叉陣列 VMM"""

import csv

import numpy as np
import pytest

from memseizure.crossbar import (
    TileConfig,
    WeightScheme,
    export_conductances,
    map_weights,
    partition,
    vmm,
    vmm_batch,
)
from memseizure.device import DeviceParameters
from memseizure.errors import InvalidInputError, ShapeMismatchError

IDEAL = DeviceParameters()


def _tolerance(matrix, x):
    return 1e-9 * np.max(np.abs(x)) * np.max(np.sum(np.abs(matrix), axis=0))


def test_partition():
    assert partition(550, 16) == (5, 1)
    assert partition(640, 256) == (5, 2)
    assert partition(128, 128) == (1, 1)
    assert partition(129, 1, TileConfig(tile_rows=64, tile_cols=64)) == (3, 1)
    with pytest.raises(InvalidInputError):
        partition(0, 4)


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_ideal_crossbar_matches_matmul(scheme):
    rng = np.random.default_rng(0)
    for _ in range(100):
        rows, cols = rng.integers(1, 300), rng.integers(1, 200)
        matrix = rng.normal(size=(rows, cols))
        x = rng.normal(size=rows)
        layer = map_weights(matrix, scheme, IDEAL, seed=int(rng.integers(1 << 30)))
        expected = x @ matrix
        assert np.max(np.abs(vmm(layer, x) - expected)) <= _tolerance(matrix, x)


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_zero_inputs_and_zero_matrix(scheme):
    matrix = np.random.default_rng(1).normal(size=(10, 4))
    layer = map_weights(matrix, scheme, IDEAL)
    assert np.array_equal(vmm(layer, np.zeros(10)), np.zeros(4))

    zero_layer = map_weights(np.zeros((10, 4)), scheme, IDEAL)
    assert np.allclose(vmm(zero_layer, np.ones(10)), 0.0, atol=1e-12)


def test_batch_rows_are_independent():
    rng = np.random.default_rng(2)
    matrix = rng.normal(size=(140, 30))
    inputs = rng.normal(size=(5, 140)) * np.array([[1e-3], [1.0], [10.0], [0.0], [1e3]])
    layer = map_weights(matrix, WeightScheme.DOUBLE_COLUMN, DeviceParameters(sigma=100.0, n_states=6), seed=4)
    batch = vmm_batch(layer, inputs)
    for row, x in zip(batch, inputs):
        assert np.allclose(row, vmm(layer, x), rtol=1e-9, atol=1e-9 * np.max(np.abs(row)))


def test_two_state_double_column_weights():
    matrix = np.random.default_rng(3).normal(size=(20, 8))
    layer = map_weights(matrix, WeightScheme.DOUBLE_COLUMN, DeviceParameters(n_states=2))
    w_max = np.max(np.abs(matrix))
    realized = layer.effective_weights()
    distance = np.min(np.abs(realized[..., None] - np.array([-w_max, 0.0, w_max])), axis=-1)
    assert np.allclose(distance, 0.0, atol=1e-12 * w_max)


def test_single_column_uses_one_grid():
    matrix = np.random.default_rng(4).normal(size=(12, 6))
    layer = map_weights(matrix, WeightScheme.SINGLE_COLUMN, IDEAL)
    assert layer.g_neg is None
    assert layer.g_m == pytest.approx(-2.0 / 2600.0)
    assert np.allclose(layer.effective_weights(), matrix, rtol=1e-9, atol=1e-12)


def test_tiles_cover_matrix():
    layer = map_weights(np.ones((300, 200)), WeightScheme.DOUBLE_COLUMN, IDEAL)
    assert layer.tile_grid == (3, 2)
    assert layer.tile_count == 6
    covered = np.zeros((300, 200), dtype=int)
    for _, _, rows, cols in layer.tiles():
        covered[rows, cols] += 1
    assert np.all(covered == 1)


def test_device_sampling_depends_on_seed():
    matrix = np.random.default_rng(5).normal(size=(16, 16))
    params = DeviceParameters(sigma=200.0)
    first = map_weights(matrix, WeightScheme.DOUBLE_COLUMN, params, seed=1)
    again = map_weights(matrix, WeightScheme.DOUBLE_COLUMN, params, seed=1)
    other = map_weights(matrix, WeightScheme.DOUBLE_COLUMN, params, seed=2)
    assert np.array_equal(first.g_pos, again.g_pos)
    assert not np.array_equal(first.g_pos, other.g_pos)


def test_invalid_inputs():
    layer = map_weights(np.ones((4, 3)), WeightScheme.DOUBLE_COLUMN, IDEAL)
    with pytest.raises(ShapeMismatchError):
        vmm(layer, np.ones(5))
    with pytest.raises(ShapeMismatchError):
        vmm(layer, np.ones((2, 4)))
    with pytest.raises(InvalidInputError):
        map_weights(np.array([[np.nan, 1.0]]), WeightScheme.DOUBLE_COLUMN, IDEAL)
    with pytest.raises(ValueError):
        map_weights(np.ones((2, 2)), "triple", IDEAL)


def test_export_conductances(tmp_path):
    layer = map_weights(np.ones((5, 3)), WeightScheme.DOUBLE_COLUMN, IDEAL)
    path = tmp_path / "conductances.csv"
    count = export_conductances({"fc": layer}, path)
    assert count == 2 * 5 * 3
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == count
    assert {row["grid"] for row in rows} == {"pos", "neg"}


@pytest.mark.parametrize("scheme", list(WeightScheme))
@pytest.mark.parametrize("params", [IDEAL, DeviceParameters(sigma=200.0, n_states=5)])
def test_tile_size_does_not_change_outputs(scheme, params):
    rng = np.random.default_rng(6)
    matrix = rng.normal(size=(150, 90))
    inputs = rng.normal(size=(8, 150))
    outputs = []
    for size in (16, 64, 128):
        layer = map_weights(matrix, scheme, params, tile=TileConfig(tile_rows=size, tile_cols=size), seed=3)
        outputs.append(vmm_batch(layer, inputs))
    scale = np.max(np.abs(inputs)) * np.max(np.sum(np.abs(matrix), axis=0))
    for other in outputs[1:]:
        assert np.allclose(other, outputs[0], rtol=1e-12, atol=1e-12 * scale)


def test_single_weight_uses_full_window():
    layer = map_weights(np.array([[1.0]]), WeightScheme.DOUBLE_COLUMN, IDEAL)
    assert layer.g_pos[0, 0] == pytest.approx(1e-2, rel=1e-12)
    assert layer.g_neg[0, 0] == pytest.approx(4e-4, rel=1e-12)
    assert layer.effective_weights()[0, 0] == pytest.approx(1.0, rel=1e-12)

    negative = map_weights(np.array([[-1.0]]), WeightScheme.DOUBLE_COLUMN, IDEAL)
    assert negative.g_pos[0, 0] == pytest.approx(4e-4, rel=1e-12)
    assert negative.g_neg[0, 0] == pytest.approx(1e-2, rel=1e-12)
    assert negative.effective_weights()[0, 0] == pytest.approx(-1.0, rel=1e-12)


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_small_matrices_are_recovered(scheme):
    column = np.array([[0.5], [-0.25]])
    assert np.allclose(map_weights(column, scheme, IDEAL).effective_weights(), column, rtol=0, atol=1e-12)
    identity = map_weights(np.eye(2), scheme, IDEAL)
    assert np.allclose(vmm(identity, np.array([3.0, -4.0])), [3.0, -4.0], rtol=0, atol=1e-9)


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_two_state_error_bound(scheme):
    rng = np.random.default_rng(7)
    params = DeviceParameters(n_states=2)
    half_window = (params.g_on - params.g_off) / 2
    for _ in range(20):
        matrix = rng.uniform(-1, 1, size=(int(rng.integers(1, 20)), int(rng.integers(1, 10))))
        layer = map_weights(matrix, scheme, params)
        for x in rng.normal(size=(10, matrix.shape[0])):
            bound = layer.k_scale * np.sum(np.abs(x)) * half_window
            assert np.all(np.abs(vmm(layer, x) - x @ matrix) <= bound * (1 + 1e-9) + 1e-12)


def test_vmm_error_grows_with_sigma():
    rng = np.random.default_rng(8)
    matrix = rng.normal(size=(64, 32))
    inputs = rng.normal(size=(50, 64))
    expected = inputs @ matrix
    errors = []
    for sigma in (0.0, 100.0, 300.0, 500.0):
        params = DeviceParameters(sigma=sigma)
        runs = [np.mean(np.abs(vmm_batch(map_weights(matrix, WeightScheme.DOUBLE_COLUMN, params, seed=seed), inputs)
                               - expected)) for seed in range(10)]
        errors.append(float(np.mean(runs)))
    assert errors[0] < 1e-9
    assert all(lower < higher for lower, higher in zip(errors, errors[1:]))
