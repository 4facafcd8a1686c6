import numpy as np
import pytest

from mpctrain.exceptions import DegenerateInputError, InvalidInputError
from mpctrain.gradients import (
    BlockGrouping, HorizonGradient, backprop_gradient, finite_diff_gradient, gradient_angle, horizon_gradient,
    local_gradient, loco_gradient, rescaled_deviation, window_gradient,
)
from mpctrain.network import Block, Network, forward, linear_chain_network, residual_mlp
from mpctrain.numerics import make_rng


def test_h1_is_local_gradient(small_net, batch):
    X, Y = batch
    g1 = horizon_gradient(small_net, X, Y, 1)
    acts = forward(small_net, X)
    for t in range(small_net.T):
        local = window_gradient(small_net, acts, Y, t, t + 1)
        assert np.max(np.abs(g1.per_block[t] - local)) <= 1e-12
        fd = finite_diff_gradient(small_net, X, Y, t, end=t + 1)
        np.testing.assert_allclose(g1.per_block[t], fd, rtol=1e-6, atol=1e-9)
    np.testing.assert_array_equal(local_gradient(small_net, X, Y).flat(), g1.flat())


def test_hT_is_backprop(small_net, batch):
    X, Y = batch
    gT = horizon_gradient(small_net, X, Y, small_net.T)
    np.testing.assert_array_equal(backprop_gradient(small_net, X, Y).flat(), gT.flat())
    for t in range(small_net.T):
        fd = finite_diff_gradient(small_net, X, Y, t)
        np.testing.assert_allclose(gT.per_block[t], fd, rtol=1e-6, atol=1e-9)


def test_window_nesting(small_net, batch):
    X, Y = batch
    T = small_net.T
    gT = horizon_gradient(small_net, X, Y, T)
    for h in range(1, T + 1):
        gh = horizon_gradient(small_net, X, Y, h)
        for t in range(T - h, T):
            assert np.max(np.abs(gh.per_block[t] - gT.per_block[t])) <= 1e-12


def test_horizon_range(small_net, batch):
    X, Y = batch
    for h in (0, small_net.T + 1, 1.5):
        with pytest.raises(InvalidInputError):
            horizon_gradient(small_net, X, Y, h)


def test_identity_chain_gives_I_minus_phi(rng):
    n, T = 3, 5
    phi = rng.normal(size=(n, n))
    X = np.sqrt(n) * np.eye(n)
    Y = X @ phi.T
    net = linear_chain_network([np.eye(n)] * T)
    expected = (np.eye(n) - phi).ravel()
    gT = horizon_gradient(net, X, Y, T)
    for h in range(1, T + 1):
        gh = horizon_gradient(net, X, Y, h)
        for g in gh.per_block:
            np.testing.assert_allclose(g, expected, atol=1e-14)
        assert gradient_angle(gh, gT) == pytest.approx(1.0, abs=1e-14)


def test_loco_single_stage_is_backprop(small_net, batch):
    X, Y = batch
    g = loco_gradient(small_net, BlockGrouping((0, small_net.T)), X, Y)
    np.testing.assert_array_equal(g.flat(), backprop_gradient(small_net, X, Y).flat())


def test_loco_zero_when_fitted():
    net = Network([Block("linear-residual", 2, 2, np.zeros(4)) for _ in range(4)])
    X = make_rng(1).normal(size=(3, 2))
    g = loco_gradient(net, BlockGrouping((0, 1, 3, 4)), X, X)
    assert not np.any(g.flat())


def test_loco_middle_stage_is_sum_of_two_windows(rng):
    weights = [np.eye(3) + 0.3 * rng.normal(size=(3, 3)) for _ in range(6)]
    net = linear_chain_network(weights)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    grouping = BlockGrouping((0, 2, 4, 6))
    g = loco_gradient(net, grouping, X, Y)
    acts = forward(net, X)
    for t in (2, 3):
        expected = window_gradient(net, acts, Y, t, 4) + window_gradient(net, acts, Y, t, 6)
        assert np.max(np.abs(g.per_block[t] - expected)) <= 1e-12
    for t in (4, 5):
        assert np.max(np.abs(g.per_block[t] - window_gradient(net, acts, Y, t, 6))) <= 1e-12
    # the same numbers come from horizon 2 on the chain with stages merged into single layers
    merged = linear_chain_network([weights[1] @ weights[0], weights[3] @ weights[2], weights[5] @ weights[4]])
    g_merged = horizon_gradient(merged, X, Y, 2)
    d_first = window_gradient(net, acts, Y, 0, 2) + window_gradient(net, acts, Y, 0, 4)
    assert np.max(np.abs(g.per_block[0] - d_first)) <= 1e-12
    assert g_merged.per_block[0].shape == (9,)


def test_grouping_validation():
    with pytest.raises(InvalidInputError):
        BlockGrouping((0, 2, 2, 4)).validate(4)
    with pytest.raises(InvalidInputError):
        BlockGrouping((1, 4)).validate(4)
    assert BlockGrouping.even(15, 5).boundaries == (0, 3, 6, 9, 12, 15)


def test_finite_diff_scalar_example():
    w = 1.7
    net = Network([Block("linear-dense", 1, 1, [w])])
    g = finite_diff_gradient(net, [[1.0]], [[0.0]], 0)
    assert g[0] == pytest.approx(w, rel=1e-9)
    with pytest.raises(InvalidInputError):
        finite_diff_gradient(net, [[1.0]], [[0.0]], 0, eps=0)


def test_finite_diff_exact_on_piecewise_quadratic_loss():
    # away from ReLU kinks every block kind makes the loss quadratic in one block's
    # parameters, so central differences carry only round-off at any step size
    net = Network([Block("mlp-residual", 1, 1, [0.8, 0.3]), Block("linear-dense", 1, 1, [1.3])])
    X, Y = np.array([[0.7]]), np.array([[0.1]])
    exact = horizon_gradient(net, X, Y, 2).per_block[0]
    for eps in (1e-1, 5e-2, 1e-3):
        np.testing.assert_allclose(finite_diff_gradient(net, X, Y, 0, eps=eps), exact, rtol=0, atol=1e-10)


def hg(*vecs, horizon=None):
    vecs = [np.asarray(v, dtype=float) for v in vecs]
    return HorizonGradient(len(vecs) if horizon is None else horizon, vecs)


def test_rescaled_deviation_examples():
    assert rescaled_deviation(hg([1.0, 0.0]), hg([1.0, 1.0])) == pytest.approx(1.0, abs=1e-15)
    assert rescaled_deviation(hg([2.0, 2.0]), hg([1.0, 1.0])) == pytest.approx(0.0, abs=1e-15)
    assert rescaled_deviation(hg([0.0, 3.0]), hg([4.0, 0.0])) == pytest.approx(4.0, abs=1e-15)
    assert gradient_angle(hg([1.0, 1.0]), hg([1.0, 1.0])) == pytest.approx(1.0)


def test_angle_errors():
    with pytest.raises(DegenerateInputError):
        gradient_angle(hg([0.0, 0.0]), hg([1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        gradient_angle(hg([1.0], [1.0]), hg([1.0], [1.0], horizon=1))


def test_deviation_forms_agree(small_net, batch):
    X, Y = batch
    gT = horizon_gradient(small_net, X, Y, small_net.T)
    norm = np.linalg.norm(gT.flat())
    for h in range(1, small_net.T + 1):
        gh = horizon_gradient(small_net, X, Y, h)
        c = gradient_angle(gh, gT)
        # sqrt(1 - c^2) cancels badly near c = 1, so evaluate it through the
        # identity |a - b| |a + b| = 2 sqrt(1 - c^2) for unit vectors a, b
        a = gh.flat() / np.linalg.norm(gh.flat())
        b = gT.flat() / norm
        sin = np.linalg.norm(a - b) * np.linalg.norm(a + b) / 2
        assert abs(c - a @ b) <= 1e-12
        assert rescaled_deviation(gh, gT) == pytest.approx(sin * norm, abs=1e-10)


def test_loss_scale_covariance(rng):
    # for a bias-free linear chain, scaling X and Y by sqrt(k) multiplies the loss by k
    # and therefore every horizon gradient by k, leaving every angle unchanged
    T, n, k = 5, 3, 4.0
    net = linear_chain_network([np.eye(n) + 0.2 * rng.normal(size=(n, n)) for _ in range(T)])
    X, Y = rng.normal(size=(6, n)), rng.normal(size=(6, n))
    gT = horizon_gradient(net, X, Y, T)
    gT_k = horizon_gradient(net, 2 * X, 2 * Y, T)
    for h in range(1, T + 1):
        g = horizon_gradient(net, X, Y, h)
        g_k = horizon_gradient(net, 2 * X, 2 * Y, h)
        np.testing.assert_allclose(g_k.flat(), k * g.flat(), rtol=1e-12, atol=1e-14)
        assert abs(gradient_angle(g_k, gT_k) - gradient_angle(g, gT)) <= 1e-12


def test_gradients_deterministic(small_net, batch):
    X, Y = batch
    a = horizon_gradient(small_net, X, Y, 3).flat()
    b = horizon_gradient(small_net, X, Y, 3).flat()
    np.testing.assert_array_equal(a, b)
