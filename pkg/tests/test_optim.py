import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadetag.autodiff import ParameterSet
from cascadetag.optim import Adam, clip_global_norm, global_norm


def make_params(**arrays):
    ps = ParameterSet()
    for name, arr in arrays.items():
        ps.add(name, arr)
    return ps


def scalar_adam_oracle(p, g, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent scalar Adam, followed literally from the update rule."""
    m = v = 0.0
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def test_first_step_moves_by_lr_times_sign():
    ps = make_params(p=np.array([1.0]))
    Adam(lr=0.001).step(ps, {"p": np.array([0.5])})
    expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8)
    assert ps["p"].data[0] == pytest.approx(expected, abs=1e-6)
    assert ps["p"].data[0] == pytest.approx(0.999, abs=1e-6)


def test_zero_gradient_leaves_parameters_unchanged():
    ps = make_params(p=np.array([3.0, -2.0]))
    Adam().step(ps, {"p": np.zeros(2)})
    np.testing.assert_array_equal(ps["p"].data, [3.0, -2.0])


def test_two_steps_match_scalar_oracle():
    ps = make_params(p=np.array([0.7]))
    opt = Adam(lr=0.01)
    for _ in range(2):
        opt.step(ps, {"p": np.array([0.3])})
    assert ps["p"].data[0] == pytest.approx(scalar_adam_oracle(0.7, 0.3, 0.01, 2), abs=1e-12)


def test_shape_mismatch_rejected():
    ps = make_params(p=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        Adam().step(ps, {"p": np.zeros(3)})


def test_lazy_state_and_per_parameter_step_counter():
    ps = make_params(a=np.array([1.0]), b=np.array([1.0]))
    opt = Adam()
    opt.step(ps, {"a": np.array([0.1])})
    opt.step(ps, {"a": np.array([0.1]), "b": np.array([0.1])})
    assert opt.state["a"].t == 2
    assert opt.state["b"].t == 1


def test_state_dict_round_trip():
    ps = make_params(a=np.array([1.0, 2.0]))
    opt = Adam(lr=0.005)
    opt.step(ps, {"a": np.array([0.3, -0.1])})
    clone = Adam.from_state_dict(opt.state_dict())
    assert clone.state["a"].t == 1
    np.testing.assert_array_equal(clone.state["a"].m, opt.state["a"].m)
    np.testing.assert_array_equal(clone.state["a"].v, opt.state["a"].v)
    # both copies keep evolving identically
    ps2 = make_params(a=ps["a"].data.copy())
    opt.step(ps, {"a": np.array([0.2, 0.2])})
    clone.step(ps2, {"a": np.array([0.2, 0.2])})
    np.testing.assert_array_equal(ps["a"].data, ps2["a"].data)


def test_clip_boundary_norm_untouched():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_global_norm(grads, 5.0)
    np.testing.assert_array_equal(out["a"], [3.0])
    np.testing.assert_array_equal(out["b"], [4.0])


def test_clip_scales_down_to_max_norm():
    out = clip_global_norm({"a": np.array([6.0]), "b": np.array([8.0])}, 5.0)
    np.testing.assert_allclose(out["a"], [3.0])
    np.testing.assert_allclose(out["b"], [4.0])


def test_clip_rejects_nonpositive_max_norm():
    with pytest.raises(ValueError, match="max_norm"):
        clip_global_norm({"a": np.ones(1)}, 0.0)


def test_clip_property_over_random_draws():
    rng = np.random.default_rng(99)
    for _ in range(100):
        grads = {
            f"g{i}": rng.normal(scale=rng.uniform(0.1, 10), size=rng.integers(1, 6))
            for i in range(rng.integers(1, 4))
        }
        max_norm = float(rng.uniform(0.5, 5.0))
        clipped = clip_global_norm(grads, max_norm)
        assert global_norm(clipped) <= max_norm + 1e-9


@settings(max_examples=40, deadline=None)
@given(
    g=st.floats(-10, 10, allow_nan=False),
    lr=st.floats(1e-5, 0.1),
    steps=st.integers(1, 5),
)
def test_adam_matches_oracle_for_constant_gradients(g, lr, steps):
    ps = make_params(p=np.array([1.0]))
    opt = Adam(lr=lr)
    for _ in range(steps):
        opt.step(ps, {"p": np.array([g])})
    assert ps["p"].data[0] == pytest.approx(scalar_adam_oracle(1.0, g, lr, steps), abs=1e-10)
