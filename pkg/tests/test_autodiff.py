import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ski.autodiff import (
    Tensor,
    concatenate,
    l2_normalize_rows,
    log_softmax,
    logsumexp,
    softmax,
)
from fdutil import check_gradients


def test_scalar_chain():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    z = y * y
    z.backward()
    assert z.item() == 81.0
    assert x.grad == pytest.approx(4 * 27.0)


def test_matmul_grads():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    check_gradients(lambda ts: (ts[0] @ ts[1]).sum(), [A, B])


def test_broadcast_add_mul_grads():
    rng = np.random.default_rng(1)
    A, b = rng.normal(size=(5, 3)), rng.normal(size=(3,))
    check_gradients(lambda ts: ((ts[0] + ts[1]) * ts[1]).sum(), [A, b])


def test_reductions_and_reshape_grads():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 6))
    check_gradients(lambda ts: ts[0].reshape(2, 12).mean(axis=1).sum(), [A])
    check_gradients(lambda ts: (ts[0].sum(axis=0, keepdims=True) ** 2).sum(), [A])


def test_elementwise_grads():
    rng = np.random.default_rng(3)
    A = np.abs(rng.normal(size=(3, 3))) + 0.5
    check_gradients(lambda ts: (ts[0].tanh().exp() / ts[0]).sum(), [A])
    check_gradients(lambda ts: ts[0].log().sum(), [A])
    check_gradients(lambda ts: (ts[0] ** -0.5).sum(), [A])


def test_getitem_gather_grads():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(6, 4))
    idx = np.array([0, 2, 2, 5])
    check_gradients(lambda ts: (ts[0][idx] ** 2).sum(), [A])
    check_gradients(lambda ts: ts[0][np.arange(4), np.array([1, 3, 0, 2])].sum(), [A])


def test_concatenate_grads():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    check_gradients(lambda ts: (concatenate([ts[0], ts[1]], axis=0) ** 2).sum(), [A, B])


def test_softmax_composites():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 5)) * 8
    s = softmax(Tensor(x), axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    lse = logsumexp(Tensor(x), axis=-1)
    assert np.allclose(lse.data, np.log(np.exp(x).sum(axis=-1)), atol=1e-12)
    check_gradients(lambda ts: log_softmax(ts[0], axis=-1)[np.arange(3), [0, 2, 4]].mean(), [x])


def test_l2_normalize_rows_grads():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(4, 6))
    out = l2_normalize_rows(Tensor(A))
    assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)
    w = rng.normal(size=(4, 6))
    check_gradients(lambda ts: (l2_normalize_rows(ts[0]) * Tensor(w)).sum(), [A])


def test_grad_accumulates_over_backward_calls():
    x = Tensor(2.0, requires_grad=True)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad is None


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_detach_blocks_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    (x.detach() * 3).sum().backward()
    assert x.grad is None


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_logsumexp_matches_reference(values):
    x = np.asarray(values)
    ours = float(logsumexp(Tensor(x), axis=-1).data)
    ref = float(np.log(np.sum(np.exp(x - x.max()))) + x.max())
    assert ours == pytest.approx(ref, abs=1e-12)


def test_diamond_graph_gradient():
    # value feeding two consumers must receive the sum of both paths
    x = Tensor(1.5, requires_grad=True)
    y = x * 2.0
    z = y * y + y
    z.backward()
    assert x.grad == pytest.approx(2 * (2 * 1.5) * 2 + 2)
