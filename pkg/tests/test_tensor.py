import math

import numpy as np
import pytest

from senselm import tensor as T
from senselm.errors import DimensionError, LabelError, NumericError, PoolingError
from senselm.gradcheck import grad_check
from senselm.nn import Parameter
from senselm.tensor import Tensor, precision


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    assert np.allclose(T.matmul(eye, a).data, a.data)


def test_matmul_hand_product():
    # [[1,2],[3,4]] @ [[1],[1]] worked out by hand
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_zero():
    a = Tensor(np.zeros((2, 2)))
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.all(T.matmul(a, b).data == 0.0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_softmax_symmetry():
    assert np.allclose(T.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_shift_invariance_no_overflow():
    out = T.softmax(Tensor([[1000.0, 1000.0]]))
    assert np.isfinite(out.data).all()
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_softmax_closed_form():
    out = T.softmax(Tensor([[0.0, math.log(3.0)]], dtype=np.float64))
    assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-12)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        T.softmax(Tensor([[0.0, float("nan")]]))


def test_softmax_rows_sum_to_one_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(25):
        shape = tuple(rng.integers(1, 6, size=rng.integers(1, 4)))
        x = Tensor(rng.normal(0, 5, shape), dtype=np.float64)
        axis = int(rng.integers(0, len(shape)))
        s = T.softmax(x, axis=axis).data.sum(axis=axis)
        assert np.all(np.abs(s - 1.0) < 1e-6)
        assert np.all(T.softmax(x, axis=axis).data >= 0.0)


def test_adaptive_pool_constant():
    x = Tensor(np.full((6, 3), 2.5))
    assert np.allclose(T.adaptive_avg_pool_1d(x, 2).data, 2.5)


def test_adaptive_pool_window_boundaries():
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert np.allclose(T.adaptive_avg_pool_1d(x, 2).data, [[1.5], [3.5]])


def test_adaptive_pool_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 4)))
    assert np.array_equal(T.adaptive_avg_pool_1d(x, 5).data, x.data)


def test_adaptive_pool_rejects_upsampling():
    with pytest.raises(PoolingError):
        T.adaptive_avg_pool_1d(Tensor(np.ones((3, 2))), 4)


def test_adaptive_pool_preserves_mean_on_even_windows():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(12, 3)), dtype=np.float64)
    for n_out in (1, 2, 3, 4, 6, 12):
        pooled = T.adaptive_avg_pool_1d(x, n_out)
        assert np.allclose(pooled.data.mean(axis=0), x.data.mean(axis=0), atol=1e-12)


def test_cross_entropy_uniform():
    logits = Tensor(np.zeros((1, 4)))
    loss = T.cross_entropy(logits, [2])
    assert abs(loss.item() - math.log(4.0)) < 1e-6


def test_cross_entropy_dominant_logit():
    loss = T.cross_entropy(Tensor([[10.0, 0.0, 0.0]], dtype=np.float64), [0])
    expected = math.log(1.0 + 2.0 * math.exp(-10.0))
    assert abs(loss.item() - expected) < 1e-12
    assert abs(loss.item() - 9.1e-5) < 1e-6


def test_cross_entropy_batch_mean():
    a = T.cross_entropy(Tensor([[1.0, 2.0, 0.5]], dtype=np.float64), [1]).item()
    b = T.cross_entropy(Tensor([[0.3, -1.0, 2.0]], dtype=np.float64), [2]).item()
    both = T.cross_entropy(
        Tensor([[1.0, 2.0, 0.5], [0.3, -1.0, 2.0]], dtype=np.float64), [1, 2]
    ).item()
    assert abs(both - 0.5 * (a + b)) < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(LabelError):
        T.cross_entropy(Tensor(np.zeros((1, 3))), [3])


def _check(fn, arrays, tol=1e-5):
    """FD-check fn over the given leaf arrays at verification precision."""
    with precision(np.float64):
        params = [(f"p{i}", Parameter(a)) for i, a in enumerate(arrays)]
        report = grad_check(lambda: fn(*[p.value for _, p in params]), params, tol=tol)
    assert report.passed, str(report)


def test_grad_elementwise_ops():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    _check(lambda x, y: ((x * y + x - 0.5 * y) ** 2.0).sum(), [a, b])
    _check(lambda x: T.exp(x * 0.3).sum(), [a])
    _check(lambda x: T.log(x * x + 1.0).sum(), [a])
    _check(lambda x: T.tanh(x).sum(), [a])
    _check(lambda x: T.gelu(x).sum(), [a])


def test_grad_matmul_batched():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    _check(lambda x, y: (T.matmul(x, y) ** 2.0).sum(), [a, b])


def test_grad_softmax_and_log_softmax():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 5))
    _check(lambda a, b: (T.softmax(a) * b).sum(), [x, w])
    _check(lambda a, b: (T.log_softmax(a) * b).sum(), [x, w])


def test_grad_reductions_and_shapes():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 6))
    _check(lambda a: a.mean(axis=0).sum() + a.sum(axis=1).mean(), [x])
    _check(lambda a: (a.reshape(2, 12) ** 2.0).sum(), [x])
    _check(lambda a: T.swapaxes(a, 0, 1).mean(), [x])
    _check(lambda a: T.tmax(a, axis=1).sum(), [x])
    _check(lambda a: a[1:3, ::2].sum(), [x])


def test_grad_concat_stack_embedding():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    _check(lambda x, y: (T.concat([x, y], axis=0) ** 2.0).sum(), [a, b])
    _check(lambda x, y: T.stack([x.sum(axis=0), y.mean(axis=0)]).sum(), [a, b])
    table = rng.normal(size=(6, 3))
    idx = np.array([0, 2, 2, 5])
    _check(lambda t: (T.embedding(t, idx) ** 2.0).sum(), [table])


def test_grad_unfold_patches():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3, 6, 6))
    _check(lambda a: (T.unfold_patches(a, kernel=3, stride=2) ** 2.0).sum(), [x])
    _check(lambda a: (T.unfold_patches(a, kernel=2, stride=2) ** 2.0).sum(), [x])


def test_grad_adaptive_pool():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(7, 3))
    _check(lambda a: (T.adaptive_avg_pool_1d(a, 3) ** 2.0).sum(), [x])


def test_grad_cross_entropy():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(4, 5))
    labels = np.array([0, 3, 2, 1])
    _check(lambda a: T.cross_entropy(a, labels), [logits])


def test_no_grad_blocks_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with T.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert y._parents == ()


def test_precision_context():
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32
