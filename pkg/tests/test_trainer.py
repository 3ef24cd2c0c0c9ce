import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wnll.data import RecordSet
from wnll.errors import DivergedLoss, LineSearchFailed
from wnll.linear import ModelParams, dumps_model
from wnll.trainer import F_NOISE, TrainerConfig, lbfgs_minimize, sgd_epochs, sgd_warmstart, train
from wnll.weighting import WeightedLogLoss

D = 16


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainerConfig(lbfgs_memory=0)
    with pytest.raises(ValueError):
        TrainerConfig(gradient_tolerance=0.0)


def test_quadratic_1d():
    res = lbfgs_minimize(lambda w: (float((w[0] - 3) ** 2), 2 * (w - 3)), np.zeros(1), TrainerConfig(gradient_tolerance=1e-10))
    assert res.converged
    assert abs(res.x[0] - 3.0) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_quadratic_k_le_m_converges_in_k_plus_2(seed, k):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(k, k))
    A = Q @ Q.T + k * np.eye(k)
    c = rng.normal(size=k)
    fun = lambda x: (float(0.5 * x @ A @ x - c @ x), A @ x - c)
    res = lbfgs_minimize(fun, np.zeros(k), TrainerConfig(lbfgs_memory=10, gradient_tolerance=1e-10, max_iterations=k + 2))
    assert res.converged, (res.n_iter, np.max(np.abs(res.grad)))
    assert np.allclose(res.x, np.linalg.solve(A, c), atol=1e-8)


def _logistic(seed, n=80, k=6, lam=0.5, separable=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    if separable:
        y = (X[:, 0] + X[:, 1] > 0).astype(int)
    else:
        y = (rng.random(n) < 1 / (1 + np.exp(-X @ rng.normal(size=k)))).astype(int)
    return WeightedLogLoss(sp.csr_matrix(X), y, rng.uniform(0.2, 4.0, size=n), lam)


def test_separable_terminates_on_gradient():
    f = _logistic(0, k=2, lam=1e-3, separable=True)
    cfg = TrainerConfig(gradient_tolerance=1e-6, max_iterations=1000)
    res = lbfgs_minimize(f, np.zeros(3), cfg)
    assert res.converged
    assert np.max(np.abs(res.grad)) <= 1e-6


def _gd_oracle(f, x, iters=500):
    # fixed step 1/L with L an upper bound on the Hessian's largest eigenvalue
    X = f.X.toarray()
    Xb = np.hstack([X, np.ones((len(X), 1))])
    L = 0.25 * np.linalg.norm((Xb * f.weights[:, None]).T @ Xb, 2) + f.lam
    for _ in range(iters):
        x = x - f(x)[1] / L
    return f(x)[0]


@pytest.mark.parametrize("seed", range(5))
def test_lbfgs_beats_gradient_descent_oracle(seed):
    f = _logistic(seed)
    res = lbfgs_minimize(f, np.zeros(7), TrainerConfig())
    assert res.fun <= _gd_oracle(f, np.zeros(7)) + 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_losses_monotone(seed):
    f = _logistic(seed, lam=0.01)
    res = lbfgs_minimize(f, np.zeros(7), TrainerConfig(gradient_tolerance=1e-12))
    # non-increasing up to the rounding noise of f, which the line search tolerates
    assert all(b <= a + F_NOISE * abs(a) for a, b in zip(res.losses, res.losses[1:]))
    strict = sum(b <= a for a, b in zip(res.losses, res.losses[1:]))
    assert strict >= len(res.losses) - 3
    assert res.fun <= f(np.zeros(7))[0]


def test_line_search_failure_raises():
    # gradient that points uphill: no Armijo step exists along -g
    fun = lambda x: (float(x[0]), np.array([-1.0]))
    with pytest.raises(LineSearchFailed):
        lbfgs_minimize(fun, np.zeros(1), TrainerConfig())


def _dataset(seed, n=300, weight=None):
    rng = np.random.default_rng(seed)
    X = sp.random(n, 1 << D, density=8.0 / (1 << D), random_state=rng, format="csr")
    X.data[:] = 1.0
    y = rng.integers(0, 2, size=n)
    w = rng.uniform(0.5, 3.0, size=n) if weight is None else np.full(n, weight)
    return RecordSet(X, y, weight=w, hash_bits=D)


def test_sgd_1d_decreases_loss():
    f = WeightedLogLoss(sp.csr_matrix(np.array([[1.0]])), [1], [1.0], 0.0)
    theta0 = np.zeros(2)
    theta1 = sgd_epochs(f, theta0, TrainerConfig(sgd_epochs=1, sgd_learning_rate=0.01))
    assert f(theta1)[0] < f(theta0)[0]


def test_sgd_zero_weight_examples_are_ignored():
    rs = _dataset(1)
    init = ModelParams(np.random.default_rng(0).normal(size=1 << D) * 0.1, 0.2, 0.0, D)
    none = sgd_warmstart(rs, TrainerConfig(seed=3), weights=np.zeros(len(rs)), lam=0.0, init=init)
    assert np.array_equal(none.weights, init.weights) and none.intercept == init.intercept
    w = rs.weight.copy()
    w[::2] = 0.0
    some = sgd_warmstart(rs, TrainerConfig(seed=3), weights=w, lam=0.0, init=init)
    live = np.unique(rs.take(np.flatnonzero(w > 0)).X.indices)
    dead_only = np.setdiff1d(np.unique(rs.X.indices), live)
    assert len(dead_only) > 0
    assert np.array_equal(some.weights[dead_only], init.weights[dead_only])


def test_sgd_deterministic():
    rs = _dataset(2)
    cfg = TrainerConfig(seed=11)
    a = sgd_warmstart(rs, cfg, weights=rs.weight, lam=1.0, init=None)
    b = sgd_warmstart(rs, cfg, weights=rs.weight, lam=1.0, init=None)
    assert dumps_model(a) == dumps_model(b)


def test_sgd_divergence_detected():
    rs = _dataset(3, weight=50.0)
    with pytest.raises(DivergedLoss):
        sgd_warmstart(rs, TrainerConfig(sgd_learning_rate=50.0), weights=rs.weight, lam=0.0, init=None)


def test_train_deterministic_and_converged():
    rs = _dataset(4, n=500)
    a = train(rs, TrainerConfig(seed=5), lam=2.0)
    b = train(rs, TrainerConfig(seed=5), lam=2.0)
    assert dumps_model(a) == dumps_model(b)
    f = WeightedLogLoss(rs.X, rs.y, rs.weight, 2.0)
    _, g = f(np.append(a.weights, a.intercept))
    assert np.max(np.abs(g)) <= 1e-6 * len(rs)
    assert a.lam == 2.0
