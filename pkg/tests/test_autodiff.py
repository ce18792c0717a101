import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from docgraph import autodiff as ad
from docgraph.autodiff import Parameter, Tensor
from oracles import loop_matmul


def _param(rng, *shape, name="p"):
    return Parameter(name, rng.normal(size=shape))


def test_matmul_matches_loops(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, loop_matmul(a.tolist(), b.tolist()), atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_broadcast_shape_error():
    with pytest.raises(ad.ShapeError):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))


def test_add_grad_is_ones_and_unbroadcasts(rng):
    a = _param(rng, 2, 3)
    b = _param(rng, 3, name="b")
    (a + b).sum().backward()
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, np.full(3, 2.0))


def test_backward_needs_scalar(rng):
    with pytest.raises(ad.ShapeError):
        ad.backward(_param(rng, 2) * 2.0)


def test_grads_accumulate_across_calls(rng):
    p = _param(rng, 3)
    (p * 2.0).sum().backward()
    (p * 2.0).sum().backward()
    assert np.array_equal(p.grad, np.full(3, 4.0))
    ad.zero_grad([p])
    assert p.grad is None


def test_shared_subexpression_accumulates(rng):
    p = _param(rng, 4)
    y = p * p
    (y + y).sum().backward()
    np.testing.assert_allclose(p.grad, 4 * p.data)


def test_no_grad_records_nothing(rng):
    p = _param(rng, 3)
    with ad.no_grad():
        y = (p * 3.0).sum()
        assert not ad.is_recording()
    assert not y.requires_grad
    assert ad.is_recording()


def test_frozen_parameter_gets_no_grad(rng):
    p, q = _param(rng, 3), _param(rng, 3, name="q")
    q.requires_grad = False
    (p * q).sum().backward()
    assert p.grad is not None and q.grad is None


def test_softmax_of_large_logits_is_finite():
    out = ad.softmax(Tensor(np.array([1000.0, 1000.0, -1000.0])))
    np.testing.assert_allclose(out.data, [0.5, 0.5, 0.0])
    ls = ad.log_softmax(Tensor(np.array([1000.0, 0.0])))
    assert np.all(np.isfinite(ls.data))


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        out = ad.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0])))
    np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0])


def test_dropout_contract(rng):
    x = Tensor(np.ones((50, 50)))
    assert ad.dropout(x, 0.3, training=False) is x
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, training=True, rng=rng)
    with pytest.raises(ValueError):
        ad.dropout(x, 0.3, training=True)
    y = ad.dropout(x, 0.3, training=True, rng=np.random.default_rng(0))
    z = ad.dropout(x, 0.3, training=True, rng=np.random.default_rng(0))
    assert np.array_equal(y.data, z.data)
    assert set(np.unique(y.data)) <= {0.0, 1.0 / 0.7}


def test_layer_norm_output_is_normalized(rng):
    x = Tensor(rng.normal(size=(4, 16)) * 5 + 3)
    y = ad.layer_norm(x, np.ones(16), np.zeros(16))
    np.testing.assert_allclose(y.data.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(-1), 1, atol=1e-4)


def test_where_routes_gradients(rng):
    a, b = _param(rng, 3), _param(rng, 3, name="b")
    cond = np.array([True, False, True])
    ad.where(cond, a, b).sum().backward()
    assert a.grad.tolist() == [1, 0, 1] and b.grad.tolist() == [0, 1, 0]


OPS = {
    "matmul": lambda a, b: (a @ b).sum(),
    "batched_matmul": lambda a, b: (ad.reshape(a, (1, 3, 3)) @ b).sum(),
    "mul_div": lambda a, b: (a * b / (b * b + 1.0)).sum(),
    "exp_log": lambda a, b: ad.log(ad.exp(a) + ad.exp(b)).sum(),
    "softmax": lambda a, b: (ad.softmax(a @ b, axis=-1) * b).sum(),
    "log_softmax": lambda a, b: (ad.log_softmax(a, axis=0) * b).sum(),
    "layer_norm": lambda a, b: (ad.layer_norm(a, b[0], b[1]) * b).sum(),
    "sigmoid": lambda a, b: (ad.sigmoid(a) * b).sum(),
    "relu": lambda a, b: (ad.relu(a - 0.1) * b).sum(),
    "concat_stack": lambda a, b: (ad.concat([a, b], axis=1) * ad.stack([a, b], axis=1).reshape(3, 6)).sum(),
    "transpose_take": lambda a, b: (ad.transpose(a) * b).sum() + a[1:, :2].sum() * 2.0,
    "mean_swap": lambda a, b: ad.mean(ad.swapaxes(a, 0, 1) * b, axis=0).sum(),
    "embedding": lambda a, b: (ad.embedding(a, np.array([[0, 2], [2, 2]])) * b[:2, None, :]).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_grad_check_every_op(name, rng):
    a, b = _param(rng, 3, 3, name="a"), _param(rng, 3, 3, name="b")
    err = ad.grad_check(lambda: OPS[name](a, b), [a, b], samples_per_param=9)
    assert err < 1e-6, name


def test_grad_check_detects_a_wrong_gradient(rng):
    a = _param(rng, 3)

    def bad():
        out = ad.sum_(a * a)
        fn = out._backward
        out._backward = lambda g: tuple(x * 2.0 for x in fn(g))
        return out

    assert ad.grad_check(bad, [a]) > 0.5


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_matmul_gradient_property(x, y):
    a, b = Parameter("a", x), Parameter("b", y)
    (a @ b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((2, 2)) @ y.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, x.T @ np.ones((2, 2)), atol=1e-12)
