import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcct.errors import ModelError
from gridcct.gmrf import conditional_covariance_exact, sample_gmrf
from gridcct.stream_cov import CovAccumulator, SlidingCovAccumulator, conditional_covariance


def test_two_sample_hand_example():
    acc = CovAccumulator(2).update([1, 0]).update([-1, 0])
    assert acc.mean.tolist() == [0, 0]
    assert acc.covariance().tolist() == [[2, 0], [0, 0]]


def test_needs_two_samples():
    with pytest.raises(ModelError):
        CovAccumulator(2).update([1, 2]).covariance()


def test_constant_samples_give_zero():
    acc = CovAccumulator(3).update_many(np.tile([1.0, 2.0, 3.0], (10, 1)))
    assert np.array_equal(acc.covariance(), np.zeros((3, 3)))


def test_streaming_equals_batch(rng):
    X = rng.normal(size=(500, 6)) @ rng.normal(size=(6, 6))
    acc = CovAccumulator(6)
    for x in X:
        acc.update(x)
    assert np.linalg.norm(acc.covariance() - np.cov(X, rowvar=False)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(1, 5), st.integers(0, 10**6))
def test_chunked_updates_match(n, k, seed):
    X = np.random.default_rng(seed).normal(size=(n, k)) * 3 + 10
    acc = CovAccumulator(k)
    for part in np.array_split(X, 3):
        acc.update_many(part)
    C = acc.covariance()
    assert np.allclose(C, np.atleast_2d(np.cov(X, rowvar=False)), atol=1e-10)
    assert np.abs(C - C.T).max() <= 1e-12


def test_sliding_window_keeps_latest(rng):
    X = rng.normal(size=(40, 3))
    acc = SlidingCovAccumulator(3, 25).update_many(X)
    assert acc.n == 25
    assert np.allclose(acc.covariance(), np.cov(X[-25:], rowvar=False), atol=1e-12)


def test_conditional_empty_set_and_diagonal():
    Sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert conditional_covariance(Sigma, 0, 1) == 0.3
    D = np.diag([1.0, 2.0, 3.0, 4.0])
    assert conditional_covariance(D, 0, 1, [2, 3]) == 0.0


def test_estimated_conditionals_match_oracle(model14):
    n = 100_000
    X = sample_gmrf(model14, n=n, seed=5).values
    S_hat = np.cov(X, rowvar=False)
    Sigma = model14.covariance
    rng = np.random.default_rng(2)
    X0 = X - X.mean(axis=0)
    for _ in range(100):
        k = int(rng.integers(0, 3))
        i, j, *S = (int(v) for v in rng.choice(13, 2 + k, replace=False))
        est = conditional_covariance(S_hat, i, j, S)
        exact = conditional_covariance_exact(Sigma, i, j, S)
        # residuals on S give the per-sample terms whose mean is the estimate
        if S:
            coef = np.linalg.solve(Sigma[np.ix_(S, S)], Sigma[np.ix_(S, [i, j])])
            R = X0[:, [i, j]] - X0[:, S] @ coef
        else:
            R = X0[:, [i, j]]
        se = (R[:, 0] * R[:, 1]).std() / np.sqrt(n)
        assert abs(est - exact) <= 3 * se + 1e-12 * abs(Sigma).max()
