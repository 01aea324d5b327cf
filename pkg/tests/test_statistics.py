import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jactus import oracle
from jactus.data import Dataset
from jactus.nn import DenseLayer, ModelGraph
from jactus.numerics import ShapeError, sym_eig
from jactus.statistics import (
    CovarianceAccumulator,
    RidgeConfig,
    collect_statistics,
    ridge_regularize,
    sample_calibration,
)


def test_single_row():
    acc = CovarianceAccumulator(2).accumulate([[1.0, 0.0]])
    assert np.array_equal(acc.sum_outer, [[1, 0], [0, 0]])
    assert acc.sample_count == 1


def test_two_batches_equal_concatenation():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((13, 4)), rng.standard_normal((7, 4))
    split = CovarianceAccumulator(4).accumulate(a).accumulate(b)
    joined = CovarianceAccumulator(4).accumulate(np.vstack([a, b]))
    assert np.abs(split.sum_outer - joined.sum_outer).max() < 1e-14
    assert split.sample_count == joined.sample_count == 20


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        CovarianceAccumulator(3).accumulate(np.zeros((0, 3)))


def test_dim_mismatch():
    with pytest.raises(ShapeError):
        CovarianceAccumulator(3).accumulate(np.ones((2, 4)))


def test_finalize_values():
    assert np.array_equal(CovarianceAccumulator(2).accumulate([[2.0, 0.0]]).finalize(), [[4, 0], [0, 0]])
    d = 5
    assert np.array_equal(CovarianceAccumulator(d).accumulate(np.eye(d)).finalize(), np.eye(d) / d)


def test_finalize_empty():
    with pytest.raises(ValueError):
        CovarianceAccumulator(2).finalize()


def test_finalize_vs_naive():
    batch = np.random.default_rng(1).standard_normal((200, 6))
    acc = CovarianceAccumulator(6)
    for start in range(0, 200, 16):
        acc.accumulate(batch[start : start + 16])
    assert np.abs(acc.finalize() - np.array(oracle.naive_covariance(batch))).max() < 1e-12


def test_symmetric_after_update():
    acc = CovarianceAccumulator(5).accumulate(np.random.default_rng(2).standard_normal((9, 5)))
    assert np.abs(acc.sum_outer - acc.sum_outer.T).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_order_invariance_and_merge(seed, n):
    rng = np.random.default_rng(seed)
    batch = rng.standard_normal((n, 3))
    forward = CovarianceAccumulator(3).accumulate(batch).finalize()
    permuted = CovarianceAccumulator(3).accumulate(batch[rng.permutation(n)]).finalize()
    assert np.abs(forward - permuted).max() < 1e-12
    cut = n // 2
    if cut:
        merged = CovarianceAccumulator(3).accumulate(batch[:cut]).merge(
            CovarianceAccumulator(3).accumulate(batch[cut:])
        )
        assert np.abs(merged.finalize() - forward).max() < 1e-12


def test_ridge_identity():
    out = ridge_regularize(np.eye(4), RidgeConfig(1e-5))
    assert np.allclose(out, (1 + 1e-5) * np.eye(4), rtol=0, atol=1e-15)


def test_ridge_zero_matrix():
    assert np.array_equal(ridge_regularize(np.zeros((3, 3))), np.zeros((3, 3)))


def test_ridge_negative_trace():
    with pytest.raises(ValueError):
        ridge_regularize(-np.eye(2))


def test_ridge_epsilon_must_be_positive():
    with pytest.raises(ValueError):
        RidgeConfig(0.0)


def _random_psd(rng, d):
    x = rng.standard_normal((2 * d, d))
    return x.T @ x / (2 * d)


def test_ridge_scale_invariance():
    c = _random_psd(np.random.default_rng(3), 6)
    s = 3.7
    lhs = sym_eig(ridge_regularize(s * c)).eigenvalues
    rhs = s * sym_eig(ridge_regularize(c)).eigenvalues
    assert np.abs(lhs - rhs).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.floats(1e-8, 1e-1))
def test_ridge_shift_and_psd(seed, d, eps):
    c = _random_psd(np.random.default_rng(seed), d)
    tau = eps * np.trace(c) / d
    before = sym_eig(c).eigenvalues
    after = sym_eig(ridge_regularize(c, RidgeConfig(eps))).eigenvalues
    assert np.abs(after - (before + tau)).max() < 1e-10
    assert after.min() >= tau - 1e-10


def test_collect_statistics_injected_gradient():
    # y = W x with L = 0.5 |y|^2 per sample, so delta = y = W x
    w = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    model = ModelGraph([DenseLayer("fc1", w, "output")], input_dim=2)
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ds = Dataset(x, np.zeros(3, dtype=int), 3)
    stats = collect_statistics(model, ds, n_calib=3, seed=0, batch_size=2,
                               loss_grad=lambda logits, labels: logits)["fc1"]
    # hand computation over the three samples
    deltas = [w @ row for row in x]
    c_g = sum(np.outer(d, d) for d in deltas) / 3
    c_x = sum(np.outer(r, r) for r in x) / 3
    assert stats.samples == 3
    assert np.allclose(stats.c_g, c_g, atol=1e-14)
    assert np.allclose(stats.c_x, c_x, atol=1e-14)


def test_full_calibration_ignores_seed():
    rng = np.random.default_rng(4)
    model = ModelGraph([DenseLayer("fc1", rng.standard_normal((3, 4)), "hidden"),
                        DenseLayer("fc2", rng.standard_normal((2, 3)), "output")], input_dim=4)
    ds = Dataset(rng.standard_normal((40, 4)), rng.integers(0, 2, 40), 2)
    a = collect_statistics(model, ds, n_calib=40, seed=1)
    b = collect_statistics(model, ds, n_calib=40, seed=99)
    for lid in a:
        assert np.array_equal(a[lid].c_x, b[lid].c_x)
        assert np.array_equal(a[lid].c_g, b[lid].c_g)


def test_default_calibration_size_is_1024():
    rng = np.random.default_rng(5)
    model = ModelGraph([DenseLayer("fc1", rng.standard_normal((2, 2)), "output")], input_dim=2)
    ds = Dataset(rng.standard_normal((3000, 2)), rng.integers(0, 2, 3000), 2)
    assert collect_statistics(model, ds)["fc1"].samples == 1024


def test_sampling_without_replacement():
    idx = sample_calibration(100, 30, seed=7)
    assert len(set(idx.tolist())) == 30
    assert np.array_equal(idx, sample_calibration(100, 30, seed=7))
    with pytest.raises(ValueError):
        sample_calibration(10, 11, seed=0)


def test_dead_layer_reported():
    model = ModelGraph([DenseLayer("fc1", np.zeros((3, 2)), "hidden"),
                        DenseLayer("fc2", np.ones((2, 3)), "output")], input_dim=2)
    ds = Dataset(np.ones((10, 2)), np.zeros(10, dtype=int), 2)
    with pytest.raises(ValueError, match="fc"):
        collect_statistics(model, ds)
