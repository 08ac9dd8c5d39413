import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadetag import autodiff as ad
from cascadetag.autodiff import (
    ParameterSet,
    Tensor,
    add,
    backward,
    concat,
    gather_rows,
    logsumexp,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_axis,
    sub,
    sum_all,
    tanh,
)

from fdcheck import finite_difference, max_rel_err


def grad_of(loss, tensor):
    return backward(loss)[id(tensor)]


def test_logsumexp_symmetry():
    x = Tensor(np.array([0.0, 0.0]))
    out = logsumexp(x, axis=0)
    assert out.data == pytest.approx(np.log(2.0), abs=1e-12)


def test_sigmoid_tanh_identity_case():
    assert sigmoid(Tensor(np.array(0.0))).data == pytest.approx(0.5)
    assert tanh(Tensor(np.array(0.0))).data == pytest.approx(0.0)


def test_matmul_shape_mismatch_names_op_and_shapes():
    a = Tensor(np.zeros((3, 4)))
    b = Tensor(np.zeros((5, 2)))
    with pytest.raises(ValueError, match=r"matmul.*\(3, 4\).*\(5, 2\)"):
        matmul(a, b)


def test_add_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="add"):
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_backward_rejects_non_scalar_loss():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(add(p, p))


def test_backward_sum_gives_ones():
    p = Tensor(np.zeros(2), requires_grad=True)
    g = grad_of(sum_all(p), p)
    np.testing.assert_array_equal(g, np.ones(2))


def test_backward_quadratic_analytic():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    g = grad_of(sum_all(mul(p, p)), p)
    np.testing.assert_allclose(g, [2.0, 4.0], rtol=0, atol=1e-15)


def test_unreached_parameter_gets_zero_gradient():
    ps = ParameterSet()
    a = ps.add("a", np.ones(2))
    ps.add("b", np.ones(3))
    table = ps.grad_table(sum_all(mul(a, a)))
    np.testing.assert_allclose(table["a"], [2.0, 2.0])
    np.testing.assert_array_equal(table["b"], np.zeros(3))
    touched = ps.grad_table(sum_all(mul(a, a)), include_unused=False)
    assert set(touched) == {"a"}


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(7)
    w = rng.normal(size=(4, 3))
    x = rng.normal(size=(5, 4))

    def run():
        ps = ParameterSet()
        wt = ps.add("w", w)
        loss = sum_all(tanh(matmul(Tensor(x), wt)))
        return ps.grad_table(loss)["w"]

    g1, g2 = run(), run()
    assert g1.tobytes() == g2.tobytes()


# --- finite-difference adjoint checks, one per primitive -------------------

def _check_param_grad(build_loss, value, tol=1e-6, h=1e-5):
    """build_loss(tensor) -> scalar Tensor; checks d loss / d value."""
    arr = np.array(value, dtype=np.float64)
    param = Tensor(arr, requires_grad=True)
    analytic = grad_of(build_loss(param), param)
    fd = finite_difference(lambda: build_loss(Tensor(arr)).data, arr, h=h)
    assert max_rel_err(analytic, fd) < tol


RNG = np.random.default_rng(1234)


def test_matmul_adjoint_matches_finite_differences():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4, 2))
    _check_param_grad(lambda t: sum_all(tanh(matmul(t, Tensor(b)))), a)
    _check_param_grad(lambda t: sum_all(tanh(matmul(Tensor(a), t))), b)


def test_add_sub_mul_broadcast_adjoints():
    x = RNG.normal(size=(3, 4))
    bias = RNG.normal(size=(4,))
    _check_param_grad(lambda t: sum_all(mul(add(Tensor(x), t), Tensor(x))), bias)
    _check_param_grad(lambda t: sum_all(tanh(sub(t, Tensor(bias)))), x)
    _check_param_grad(lambda t: sum_all(tanh(mul(t, Tensor(bias)))), x)


def test_sigmoid_tanh_adjoints():
    x = RNG.normal(size=(5,))
    _check_param_grad(lambda t: sum_all(sigmoid(t)), x)
    _check_param_grad(lambda t: sum_all(tanh(t)), x)


def test_concat_adjoint():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(2, 2))
    _check_param_grad(lambda t: sum_all(tanh(concat([t, Tensor(b)], axis=-1))), a)
    _check_param_grad(lambda t: sum_all(tanh(concat([Tensor(a), t], axis=1))), b)
    _check_param_grad(lambda t: sum_all(tanh(concat([t, t], axis=0))), a)


def test_slice_adjoint():
    x = RNG.normal(size=(4, 6))
    _check_param_grad(lambda t: sum_all(tanh(slice_axis(t, 1, 1, 4))), x)
    _check_param_grad(lambda t: sum_all(tanh(slice_axis(t, 0, 2, 4))), x)


def test_logsumexp_adjoint():
    x = RNG.normal(size=(3, 5))
    _check_param_grad(lambda t: sum_all(logsumexp(t, axis=1)), x)
    _check_param_grad(lambda t: sum_all(logsumexp(t, axis=0)), x)


def test_gather_adjoint_accumulates_duplicates():
    table = RNG.normal(size=(4, 3))
    weights = RNG.normal(size=(3, 3))
    ids = [2, 2]
    _check_param_grad(
        lambda t: sum_all(tanh(matmul(gather_rows(t, ids), Tensor(weights)))), table
    )
    # duplicate-id scatter: row-2 gradient is the sum of both upstream rows
    p = Tensor(np.array(table), requires_grad=True)
    out = gather_rows(p, ids)
    g = grad_of(sum_all(mul(out, Tensor(np.array([[1.0, 2, 3], [10, 20, 30]])))), p)
    np.testing.assert_allclose(g[2], [11.0, 22.0, 33.0])
    assert not g[[0, 1, 3]].any()


def test_reshape_adjoint():
    x = RNG.normal(size=(2, 6))
    _check_param_grad(lambda t: sum_all(tanh(reshape(t, (3, 4)))), x)


def test_gather_rejects_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        gather_rows(Tensor(np.zeros((3, 2))), [0, 3])


def test_slice_rejects_out_of_range():
    with pytest.raises(ValueError, match="slice_axis"):
        slice_axis(Tensor(np.zeros((3, 2))), 0, 1, 5)


def test_constant_graph_is_pruned():
    out = matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
    assert not out.requires_grad and out._backward is None


def test_float32_optin_propagates():
    ps = ParameterSet(dtype=np.float32)
    w = ps.add("w", np.ones((2, 2)))
    out = matmul(w, w)
    assert out.dtype == np.float32
    assert ps.grad_table(sum_all(out))["w"].dtype == np.float32


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_primitives_stay_finite_on_finite_inputs(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(scale=50.0, size=(rows, cols)))
    for out in (
        sigmoid(x),
        tanh(x),
        logsumexp(x, axis=1),
        add(x, x),
        mul(x, x),
        sum_all(x),
    ):
        assert np.all(np.isfinite(out.data))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_broadcast_add_unbroadcast_is_sum(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    bias = Tensor(rng.normal(size=(4,)), requires_grad=True)
    upstream = rng.normal(size=(3, 4))
    g = grad_of(sum_all(mul(add(Tensor(x), bias), Tensor(upstream))), bias)
    np.testing.assert_allclose(g, upstream.sum(axis=0), atol=1e-12)
