import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wfem_gp import autodiff as ad
from wfem_gp.nn import (
    AdamState,
    HyperParams,
    MlpSpec,
    adam_step,
    deep_kernel_layout,
    init_params,
    mlp_forward,
)

from conftest import central_difference, rel_error


def test_default_layout_size_for_scalar_inputs():
    layout = deep_kernel_layout(1)
    mean = 1 * 32 + 32 + 3 * (32 * 32 + 32) + 32 + 1
    feature = 1 * 32 + 32 + 3 * (32 * 32 + 32) + 32 * 2 + 2
    assert layout.size == mean + feature == 6563


@pytest.mark.parametrize("d,hidden,k", [(1, (4,), 1), (2, (3, 5), 2), (3, (), 4)])
def test_layout_ranges_tile_the_vector(d, hidden, k):
    layout = deep_kernel_layout(d, hidden, k)
    (a0, a1), (b0, b1) = layout.ranges["mean"], layout.ranges["feature"]
    assert a0 == 0 and a1 == b0 and b1 == layout.size
    assert MlpSpec(d, hidden, k).widths == (d, *hidden, k)


def test_forward_matches_manual_evaluation(rng):
    layout = deep_kernel_layout(2, (3, 4), 2)
    theta = init_params(layout, rng)
    x = rng.standard_normal((5, 2))
    h = x
    layers = layout.unpack(theta.values, "feature")
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.tanh(h)
    np.testing.assert_allclose(mlp_forward(theta, "feature", x), h, rtol=1e-14)
    assert mlp_forward(theta, "mean", x[0]).shape == (1,)


def test_forward_rejects_wrong_input_dimension(rng):
    theta = init_params(deep_kernel_layout(2, (3,)), rng)
    with pytest.raises(ValueError, match="trailing dimension"):
        mlp_forward(theta, "mean", np.zeros((4, 3)))


def test_network_gradient(rng):
    layout = deep_kernel_layout(1, (5, 5), 2)
    x = rng.standard_normal((7, 1))
    v0 = init_params(layout, rng).values

    def f(v):
        th = HyperParams(v, layout)
        return ad.sum(ad.square(mlp_forward(th, "feature", x))) + ad.sum(mlp_forward(th, "mean", x))

    assert rel_error(ad.grad_scalar(f, v0), central_difference(lambda z: float(f(z)), v0, 1e-6)) < 1e-7


def test_init_scale_and_zero_biases():
    layout = deep_kernel_layout(1, (200,), 1)
    theta = init_params(layout, np.random.default_rng(0))
    (W1, b1), (W2, b2) = layout.unpack(theta.values, "mean")
    assert np.all(b1 == 0) and np.all(b2 == 0)
    assert abs(np.std(W2) - 1 / np.sqrt(200)) < 0.02


def test_hyperparams_validates_size():
    with pytest.raises(ValueError):
        HyperParams(np.zeros(3), deep_kernel_layout(1, (2,)))


def test_adam_first_step_by_hand():
    state = AdamState.fresh(2, lr=0.1)
    g = np.array([2.0, -0.5])
    state, p = adam_step(state, np.array([1.0, 1.0]), g)
    m = 0.1 * g
    v = 0.001 * g * g
    expected = 1.0 - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(p, expected, rtol=1e-14)
    assert state.step == 1


def test_adam_converges_on_quadratic():
    target = np.array([3.0, -2.0])
    state, p = AdamState.fresh(2, lr=0.05), np.zeros(2)
    for _ in range(2000):
        state, p = adam_step(state, p, 2 * (p - target))
    np.testing.assert_allclose(p, target, atol=1e-3)


@given(st.floats(1e-3, 1e3))
def test_adam_first_step_length_is_lr(scale):
    state, p = adam_step(AdamState.fresh(1, lr=0.01), np.zeros(1), np.array([scale]))
    assert abs(abs(p[0]) - 0.01) < 1e-6
