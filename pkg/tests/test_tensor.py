import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cmcr import tensor as T
from cmcr.gradcheck import gradcheck, numerical_grad, relative_error
from cmcr.tensor import Tensor

pytestmark = pytest.mark.usefixtures("f64")


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_default_dtype_context_restores_previous():
    with T.default_dtype(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


def test_no_grad_records_nothing(rng):
    a = leaf(rng, 3)
    with T.no_grad():
        b = a * 2.0 + 1.0
    assert not b.requires_grad and b._parents == ()


def test_backward_requires_scalar(rng):
    with pytest.raises(ValueError):
        (leaf(rng, 3) * 2.0).backward()


def test_gradient_accumulates_over_shared_subexpression(rng):
    a = leaf(rng, 4)
    b = a * a
    (b + b).sum().backward()
    np.testing.assert_allclose(a.grad, 4 * a.data)


@pytest.mark.parametrize(
    "name,fn,shapes",
    [
        ("add_broadcast", lambda a, b: (a + b) ** 2, [(3, 4), (4,)]),
        ("sub_broadcast", lambda a, b: (a - b) ** 2, [(2, 1, 4), (3, 1)]),
        ("mul", lambda a, b: a * b, [(3, 4), (3, 4)]),
        ("div", lambda a, b: a / (b * b + 1.0), [(3, 4), (1, 4)]),
        ("rdiv", lambda a: 2.0 / (a * a + 1.0), [(5,)]),
        ("pow", lambda a: (a * a + 1.0) ** 1.5, [(5,)]),
        ("exp_log", lambda a: T.log(T.exp(a) + 1.0), [(4, 3)]),
        ("sqrt", lambda a: T.sqrt(a * a + 0.5), [(6,)]),
        ("abs", lambda a: T.absolute(a), [(7,)]),
        ("sigmoid", lambda a: T.sigmoid(a), [(7,)]),
        ("relu", lambda a: T.relu(a), [(7,)]),
        ("elu", lambda a: T.elu(a), [(7,)]),
        ("mean_axis", lambda a: a.mean(axis=(0, 2)) ** 2, [(2, 3, 4)]),
        ("sum_keepdims", lambda a: a.sum(axis=1, keepdims=True) * a, [(3, 4)]),
        ("reshape_transpose", lambda a: a.reshape(4, 6).transpose() ** 2, [(2, 3, 4)]),
        ("getitem_slice", lambda a: a[:, 1:3] ** 2, [(3, 4)]),
        ("getitem_fancy", lambda a: a[np.array([0, 2, 0])] ** 2, [(3, 4)]),
        ("concat", lambda a, b: T.concat([a, b * 2.0], axis=1) ** 2, [(2, 3), (2, 2)]),
        ("stack", lambda a, b: T.stack([a, b], axis=1) ** 3, [(2, 3), (2, 3)]),
        ("pad", lambda a: T.pad(a, [(1, 0), (2, 1)]) ** 2, [(2, 3)]),
        ("where", lambda a, b: T.where(np.array([True, False, True]), a, b) ** 2, [(2, 3), (3,)]),
        ("matmul_batched", lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
        ("matmul_broadcast_left", lambda a, b: a @ b, [(3, 4), (2, 4, 5)]),
        ("einsum", lambda a, b: T.einsum("bij,jk->bik", a, b), [(2, 3, 4), (4, 5)]),
        ("softmax", lambda a: T.softmax(a, axis=0) ** 2, [(4, 3)]),
        ("logsumexp", lambda a: T.logsumexp(a, axis=-1), [(3, 5)]),
        ("sort_rows", lambda a: T.sort_rows_desc(a)[0] * np.arange(5.0), [(3, 5)]),
    ],
)
def test_op_gradients_match_finite_differences(name, fn, shapes, rng):
    ins = [leaf(rng, *s) for s in shapes]
    weight = None

    def loss():
        nonlocal weight
        out = fn(*ins)
        if weight is None:
            weight = np.random.default_rng(7).standard_normal(out.shape)
        return (out * weight).sum()

    assert gradcheck(loss, ins) < 1e-6


def test_einsum_rejects_lonely_index(rng):
    with pytest.raises(ValueError):
        T.einsum("ij->i", leaf(rng, 2, 3))


def test_softmax_matches_scipy(rng):
    from scipy.special import softmax

    a = rng.standard_normal((4, 7)) * 30
    np.testing.assert_allclose(T.softmax_rows(Tensor(a)).data, softmax(a, axis=-1), rtol=1e-12)


def test_logsumexp_matches_scipy(rng):
    from scipy.special import logsumexp

    a = rng.standard_normal((4, 7)) * 300
    np.testing.assert_allclose(T.logsumexp(Tensor(a)).data, logsumexp(a, axis=-1), rtol=1e-12)


def test_sort_rows_is_stable_on_ties():
    out, perm = T.sort_rows_desc(Tensor(np.array([[1.0, 3.0, 1.0, 3.0]])))
    np.testing.assert_array_equal(out.data, [[3, 3, 1, 1]])
    np.testing.assert_array_equal(perm, [[1, 3, 0, 2]])


def test_relative_error_treats_rounding_noise_as_zero():
    assert relative_error(np.array([1e-18]), np.array([2e-11])) == 0.0
    assert relative_error(np.array([1.0]), np.array([2.0])) == pytest.approx(0.5)


def test_numerical_grad_restores_input(rng):
    a = leaf(rng, 3)
    before = a.data.copy()
    numerical_grad(lambda: (a * a).sum(), a)
    np.testing.assert_array_equal(a.data, before)


def test_gradcheck_rejects_float32(rng):
    a = Tensor(np.ones(2), requires_grad=True, dtype=np.float32)
    with pytest.raises(TypeError):
        gradcheck(lambda: a.sum(), [a])


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, array_shapes(min_dims=1, max_dims=3, max_side=4), elements=st.floats(-5, 5)),
    st.floats(-3, 3),
)
def test_sum_of_scaled_input_gradient_is_constant(x, c):
    a = Tensor(x, requires_grad=True)
    (a * c).sum().backward()
    np.testing.assert_allclose(a.grad, np.full(x.shape, c))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(T.softmax_rows(Tensor(x)).data.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([((3, 4), (4,)), ((2, 3, 4), (3, 1)), ((1, 4), (5, 1)), ((2, 1, 3), (2, 4, 1))]))
def test_broadcast_gradients_have_operand_shapes(shapes):
    a = Tensor(np.ones(shapes[0]), requires_grad=True)
    b = Tensor(np.ones(shapes[1]), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == shapes[0] and b.grad.shape == shapes[1]
    out_size = np.broadcast_shapes(*shapes)
    assert a.grad.sum() == pytest.approx(np.prod(out_size))
