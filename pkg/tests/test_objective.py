import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsvrg.data import partition, synthesize
from qsvrg.objective import LabeledDataset, Quadratic, RidgeLogistic, log1pexp, sigmoid


def small_problem(seed=0, n=30, d=4, shards=None):
    ds, _ = synthesize(n, d, seed=seed)
    return RidgeLogistic(ds, 0.1, shards=shards)


def finite_diff(fun, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


def test_single_sample_at_origin():
    # x = [1, 0], y = 1: f(0) = ln 2, g(0) = [-0.5, 0]
    ds = LabeledDataset(np.array([[1.0, 0.0]]), np.array([1.0]))
    obj = RidgeLogistic(ds, 0.1)
    assert obj.loss(np.zeros(2)) == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_allclose(obj.grad_full(np.zeros(2)), [-0.5, 0.0], atol=1e-15)
    assert obj.smoothness_bound() == pytest.approx(0.25 + 0.2)
    assert obj.strong_convexity() == pytest.approx(0.2)


def test_stable_helpers_at_extremes():
    assert sigmoid(800.0) == 1.0
    assert sigmoid(-800.0) == 0.0
    assert log1pexp(800.0) == pytest.approx(800.0)
    assert log1pexp(-800.0) == 0.0
    ds = LabeledDataset(np.array([[1e4]]), np.array([1.0]))
    obj = RidgeLogistic(ds, 0.0)
    assert np.isfinite(obj.loss(np.array([-1.0])))


def test_quadratic_gradient():
    q = Quadratic(np.array([[0.0], [2.0]]))
    np.testing.assert_allclose(q.grad_full(np.array([0.0])), [-1.0])


def test_quadratic_minimum_value():
    q = Quadratic(np.array([[0.0], [2.0]]))
    # f(w*) = 0.5 * mean((1-0)^2, (1-2)^2) = 0.5
    assert q.loss(q.anchors.mean(axis=0)) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    obj = small_problem(seed)
    w = np.random.default_rng(seed).standard_normal(obj.dim)
    fd = finite_diff(obj.loss, w)
    np.testing.assert_allclose(obj.grad_full(w), fd, rtol=1e-6, atol=1e-8)
    for i in (0, 7):
        fd_i = finite_diff(lambda v: obj.loss_sample(v, i), w)
        np.testing.assert_allclose(obj.grad_component(w, i), fd_i, rtol=1e-6, atol=1e-8)


def test_components_average_to_full_gradient():
    obj = small_problem(3)
    w = np.ones(obj.dim) * 0.3
    np.testing.assert_allclose(obj.grad_components(w).mean(axis=0), obj.grad_full(w), atol=1e-14)


def test_sharded_components_are_shard_means():
    ds, _ = synthesize(31, 3, seed=4)
    shards = partition(31, 4)
    obj = RidgeLogistic(ds, 0.1, shards=shards)
    flat = RidgeLogistic(ds, 0.1)
    w = np.array([0.2, -0.1, 0.4])
    for i, s in enumerate(shards):
        np.testing.assert_allclose(obj.grad_component(w, i), flat.grad_components(w)[s].mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(obj.grad_components(w).mean(axis=0), obj.grad_full(w), atol=1e-14)
    # unequal shards: f is the mean of shard means, not the sample mean
    assert obj.loss(w) != pytest.approx(flat.loss(w), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_hessian_eigenvalues_within_bounds(seed, d):
    obj = small_problem(seed, n=20, d=d)
    w = 3 * np.random.default_rng(seed).standard_normal(d)
    eig = np.linalg.eigvalsh(obj.hessian(w))
    assert eig.max() <= obj.smoothness_bound() + 1e-12
    assert eig.min() >= obj.strong_convexity() - 1e-12


def test_component_gradient_lipschitz():
    obj = small_problem(5)
    rng = np.random.default_rng(5)
    L = obj.component_smoothness()
    for _ in range(200):
        i = int(rng.integers(obj.n_components))
        a, b = rng.standard_normal((2, obj.dim)) * 2
        lhs = np.linalg.norm(obj.grad_component(a, i) - obj.grad_component(b, i))
        assert lhs <= L * np.linalg.norm(a - b) + 1e-12


def test_gradient_box_covers_component_gradients():
    obj = small_problem(6)
    rng = np.random.default_rng(6)
    center, radius = np.zeros(obj.dim), np.full(obj.dim, 2.0)
    box = obj.gradient_box(center, radius)
    for _ in range(50):
        w = rng.uniform(-2, 2, obj.dim)
        assert np.all(np.abs(obj.grad_components(w)) <= box + 1e-12)


def test_shape_errors():
    obj = small_problem()
    with pytest.raises(ValueError):
        obj.loss(np.zeros(obj.dim + 1))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([1.0]))
    with pytest.raises(ValueError):
        RidgeLogistic(small_problem().dataset, -1.0)
