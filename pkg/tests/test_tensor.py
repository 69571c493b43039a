"""Engine tests: forward semantics of each primitive plus analytic
gradients checked against central finite differences."""

import math

import numpy as np
import pytest

from hciret.errors import DataError, UsageError
from hciret import tensor as T
from hciret.tensor import Parameter, Tensor, backward, grad_check, no_grad


def _rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, size=shape)


def _check_op(build, params, eps=1e-5, tol=1e-5):
    """Scalarise an op output with a fixed random weighting and compare
    gradients against central differences."""
    err = grad_check(build, params, eps=eps)
    assert err < tol, f"max relative gradient error {err}"


# -- forward behaviour ---------------------------------------------------


def test_softmax_trivial_values():
    out = T.softmax(Tensor([0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-12)
    out = T.softmax(Tensor([0.0, math.log(3.0)]), axis=0)
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)
    out = T.softmax(Tensor([1000.0, 1000.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-12)
    assert np.isfinite(out.data).all()


def test_softmax_slices_sum_to_one_at_large_magnitude():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1e4, 1e4, size=(5, 7)))
    for axis in (0, 1):
        y = T.softmax(x, axis=axis)
        np.testing.assert_allclose(y.data.sum(axis=axis), 1.0, atol=1e-9)
        assert (y.data >= 0).all()


def test_softmax_axis_out_of_range():
    with pytest.raises(UsageError):
        T.softmax(Tensor([[1.0, 2.0]]), axis=2)


def test_amax_routes_gradient_to_first_maximal_index():
    x = Parameter("x", [2.0, 5.0, 5.0])
    out = T.amax(x, axis=0)
    backward(out)
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_backward_square_scalar():
    x = Parameter("x", [3.0])
    out = (x * x).sum()
    backward(out)
    np.testing.assert_allclose(x.grad, [6.0])


def test_backward_requires_scalar_root():
    x = Parameter("x", [[1.0, 2.0]])
    with pytest.raises(UsageError):
        backward(x * 2.0)


def test_backward_accumulates_over_shared_consumers():
    x = Parameter("x", [1.5])
    y = x * 2.0
    out = (y * 3.0 + y * 4.0).sum()  # d/dx = 2*3 + 2*4
    backward(out)
    np.testing.assert_allclose(x.grad, [14.0])


def test_backward_accumulates_across_calls_until_zero_grad():
    x = Parameter("x", [1.0])
    backward((x * 3.0).sum())
    backward((x * 3.0).sum())
    np.testing.assert_allclose(x.grad, [6.0])
    x.zero_grad()
    assert x.grad is None


def test_no_grad_suppresses_tape():
    x = Parameter("x", [1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad and y.parents == ()


def test_l2_normalize_zero_row_maps_to_zero():
    x = Tensor([[0.0, 0.0], [3.0, 4.0]])
    y = T.l2_normalize(x)
    np.testing.assert_allclose(y.data[0], [0.0, 0.0])
    np.testing.assert_allclose(y.data[1], [0.6, 0.8])


def test_concat_narrow_roundtrip():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    cat = T.concat([a, b], axis=0)
    np.testing.assert_array_equal(cat.data, [[1, 2], [3, 4], [5, 6]])
    mid = T.narrow(cat, 0, 1, 2)
    np.testing.assert_array_equal(mid.data, b.data)
    with pytest.raises(UsageError):
        T.narrow(cat, 0, 2, 5)


def test_matmul_shape_errors():
    with pytest.raises(UsageError):
        T.matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))
    with pytest.raises(UsageError):
        T.matmul(Tensor([1.0]), Tensor([1.0]))


def test_item_requires_scalar():
    with pytest.raises(UsageError):
        Tensor([[1.0, 2.0]]).item()


def test_omean_is_order_independent_bitwise():
    rng = np.random.default_rng(1)
    vals = rng.uniform(-1, 1, size=17)
    perm = rng.permutation(17)
    a = T.omean(Tensor(vals)).item()
    b = T.omean(Tensor(vals[perm])).item()
    assert a == b


# -- gradient oracle over the primitive roster ---------------------------


def _scalarise(out, weight):
    return (out * weight).sum()


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize(
    "name",
    [
        "matmul",
        "transpose",
        "add",
        "mul",
        "scale",
        "relu",
        "exp",
        "log",
        "row_mean",
        "col_mean",
        "amax0",
        "amax1",
        "l2_normalize",
        "softmax0",
        "softmax1",
        "layer_norm",
        "concat",
        "narrow",
        "sub",
        "reshape",
        "omean",
        "sum_axis",
        "amax3d",
        "softmax3d",
    ],
)
def test_primitive_gradients_match_central_differences(name, seed):
    rng = np.random.default_rng(seed + 100)
    p = Parameter("p", _rand(rng, 4, 3))
    q = Parameter("q", _rand(rng, 3, 5))
    s = Parameter("s", _rand(rng, 3, 4))
    r3 = Parameter("r3", _rand(rng, 2, 3, 4))
    w_pq = Tensor(_rand(rng, 4, 5))
    w_p = Tensor(_rand(rng, 4, 3))
    w_pt = Tensor(_rand(rng, 3, 4))
    w_row = Tensor(_rand(rng, 4, 1))
    w_col = Tensor(_rand(rng, 1, 3))
    w_r3 = Tensor(_rand(rng, 2, 3, 4))
    w_cat = Tensor(_rand(rng, 9, 3))
    w_mid = Tensor(_rand(rng, 2, 3))
    w_resh = Tensor(_rand(rng, 3, 4))
    w_vec = Tensor(_rand(rng, 3))
    w_keep = Tensor(_rand(rng, 2, 1, 4))
    c_p = Tensor(_rand(rng, 4, 3))

    # max-reduce is tested away from ties: values in [-2, 2] are distinct
    # with probability one under the continuous draw.
    builds = {
        "matmul": (lambda: _scalarise(T.matmul(p, q), w_pq), [p, q]),
        "transpose": (lambda: _scalarise(T.transpose(p), w_pt), [p]),
        "add": (lambda: _scalarise(p + p * 0.5 + c_p, w_p), [p]),
        "mul": (lambda: _scalarise(T.mul(p, p), w_p), [p]),
        "scale": (lambda: _scalarise(p * -1.7, w_p), [p]),
        "relu": (lambda: _scalarise(T.relu(p), w_p), [p]),
        "exp": (lambda: _scalarise(T.exp(p), w_p), [p]),
        "log": (lambda: _scalarise(T.log(T.exp(p) + 0.5), w_p), [p]),
        "row_mean": (lambda: _scalarise(T.tmean(p, axis=1, keepdims=True), w_row), [p]),
        "col_mean": (lambda: _scalarise(T.tmean(p, axis=0, keepdims=True), w_col), [p]),
        "amax0": (lambda: _scalarise(T.amax(p, 0, keepdims=True), w_col), [p]),
        "amax1": (lambda: _scalarise(T.amax(p, 1, keepdims=True), w_row), [p]),
        "l2_normalize": (lambda: _scalarise(T.l2_normalize(p), w_p), [p]),
        "softmax0": (lambda: _scalarise(T.softmax(p, 0), w_p), [p]),
        "softmax1": (lambda: _scalarise(T.softmax(p, 1), w_p), [p]),
        "layer_norm": (lambda: _scalarise(T.layer_norm(p), w_p), [p]),
        "concat": (lambda: _scalarise(T.concat([p, T.transpose(q)], axis=0), w_cat), [p, q]),
        "narrow": (lambda: _scalarise(T.narrow(p, 0, 1, 2), w_mid), [p]),
        "sub": (lambda: _scalarise(p - T.transpose(s) * 0.3, w_p), [p, s]),
        "reshape": (lambda: _scalarise(T.reshape(p, 3, 4), w_resh), [p]),
        "omean": (lambda: T.omean(T.mul(p, p)), [p]),
        "sum_axis": (lambda: _scalarise(T.tsum(p, axis=0), w_vec), [p]),
        "amax3d": (lambda: _scalarise(T.amax(r3, 1, keepdims=True), w_keep), [r3]),
        "softmax3d": (lambda: _scalarise(T.softmax(r3, 2), w_r3), [r3]),
    }
    build, params = builds[name]
    _check_op(build, params)


def test_broadcast_add_gradients():
    rng = np.random.default_rng(7)
    x = Parameter("x", _rand(rng, 3, 4))
    b = Parameter("b", _rand(rng, 4))
    w = Tensor(_rand(rng, 3, 4))
    _check_op(lambda: ((x + b) * w).sum(), [x, b])


def test_grad_check_quadratic_is_nearly_exact():
    p = Parameter("p", [[1.0, -2.0], [0.5, 3.0]])
    err = grad_check(lambda: (p * p).sum(), [p], eps=1e-5)
    assert err < 1e-8


def test_grad_check_rejects_nonscalar_and_nonfinite():
    p = Parameter("p", [[1.0, 2.0]])
    with pytest.raises(UsageError):
        grad_check(lambda: p * 1.0, [p])
    q = Parameter("q", [-1.0])
    with pytest.raises(DataError), np.errstate(invalid="ignore"):
        grad_check(lambda: T.log(q).sum(), [q])
    with pytest.raises(UsageError):
        grad_check(lambda: (p * p).sum(), [p], eps=0.0)
