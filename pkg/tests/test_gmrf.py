import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import path_case
from gridcct.case_io import GridCase
from gridcct.errors import ModelError
from gridcct.gmrf import (
    SampleMatrix,
    conditional_covariance_exact,
    partial_correlations,
    precision_from_b,
    predicted_markov_graph,
    sample_gmrf,
    walk_summability_alpha,
)
from gridcct.grid_model import build_susceptance_matrix, hop_distances


def random_case(n, seed):
    rng = np.random.default_rng(seed)
    g = nx.random_labeled_tree(n, seed=seed) if hasattr(nx, "random_labeled_tree") else \
        nx.random_tree(n, seed=seed)
    g = nx.Graph(g)
    for _ in range(n // 2):
        u, v = rng.choice(n, 2, replace=False)
        g.add_edge(int(u), int(v))
    branches = [(u + 1, v + 1, float(rng.uniform(1, 20))) for u, v in g.edges]
    return GridCase([(i + 1, 1) for i in range(n)], branches, 1, name=f"rand{n}")


def assert_two_hop_zeros(case):
    sm = build_susceptance_matrix(case)
    J = precision_from_b(sm).J
    D = hop_distances(case)[np.ix_(sm.keep, sm.keep)]
    assert np.abs(J[D > 2]).max(initial=0.0) <= 1e-9


def test_full_product_fill_in():
    B = build_susceptance_matrix(path_case(3)).full
    assert (B.T @ B).tolist() == [[2, -3, 1], [-3, 6, -3], [1, -3, 2]]


def test_precision_zero_beyond_two_hops(case14, case30):
    assert_two_hop_zeros(case14)
    assert_two_hop_zeros(case30)


@settings(max_examples=20, deadline=None)
@given(st.integers(10, 40), st.integers(0, 10**6))
def test_precision_zero_beyond_two_hops_random(n, seed):
    assert_two_hop_zeros(random_case(n, seed))


def test_partial_correlation_scale_invariant(sm14):
    R1 = precision_from_b(sm14, 1.0).R
    R2 = precision_from_b(sm14, 2.0).R
    assert np.allclose(R1, R2, atol=1e-14)


def test_partial_correlation_hand():
    R = partial_correlations([[2, -1], [-1, 2]])
    assert R[0, 1] == pytest.approx(0.5)
    assert np.array_equal(partial_correlations(np.diag([1.0, 3.0, 2.0])), np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6))
def test_partial_correlation_symmetric(k, seed):
    A = np.random.default_rng(seed).normal(size=(k, k))
    J = A @ A.T + k * np.eye(k)
    R = partial_correlations(J)
    assert np.allclose(R, R.T)


def test_walk_summability_hand():
    assert walk_summability_alpha([[0, 0.5], [0.5, 0]]) == pytest.approx(0.5)
    assert walk_summability_alpha(np.zeros((3, 3))) == 0.0


def test_predicted_graph_path():
    # slack at the end keeps buses 1..3 as variables
    case = GridCase([(i, 1) for i in range(1, 5)], [(1, 2, 1), (2, 3, 1), (3, 4, 1)], 4)
    assert predicted_markov_graph(case) == {(1, 2), (2, 3)}
    assert predicted_markov_graph(case, "exact-two-hop") == {(1, 2), (2, 3), (1, 3)}


def test_exact_mode_within_two_hops(case30):
    sm = build_susceptance_matrix(case30)
    D = hop_distances(case30)
    idx = sm.index
    for u, v in predicted_markov_graph(case30, "exact-two-hop"):
        assert D[idx[u], idx[v]] <= 2


def test_first_neighbor_is_branch_set(case14):
    expected = {e for e in case14.edges() if case14.slack not in e}
    assert predicted_markov_graph(case14) == expected


def test_sampling_deterministic(model14):
    a = sample_gmrf(model14, n=50, seed=7)
    b = sample_gmrf(model14, n=50, seed=7)
    assert np.array_equal(a.values, b.values)


def test_sampling_matches_covariance(model14):
    n = 100_000
    X = sample_gmrf(model14, n=n, seed=3).values
    S = np.cov(X, rowvar=False)
    C = model14.covariance
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
    assert np.abs(S - C).max() > 0
    assert np.all(np.abs(S - C) <= 3 * se)


def test_noise_free_samples_solve_power_flow(sm14, model14):
    n, seed = 20, 11
    X = sample_gmrf(model14, n=n, seed=seed).values
    P = np.random.default_rng(seed).normal(0.0, model14.sigma, size=(n, 13))
    assert np.allclose(X @ sm14.reduced.T, P, atol=1e-12)


def test_sample_csv_round_trip(model14):
    s = sample_gmrf(model14, n=5, seed=1)
    back = SampleMatrix.from_csv(s.to_csv("hdr"))
    assert np.array_equal(back.values, s.values) and back.variables == s.variables


def test_conditional_covariance_exact():
    Sigma = np.array([[2.0, 1.0, 0.5], [1.0, 2.0, 1.0], [0.5, 1.0, 2.0]])
    assert conditional_covariance_exact(Sigma, 0, 2) == 0.5
    assert conditional_covariance_exact(Sigma, 0, 2, [1]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ModelError):
        conditional_covariance_exact(Sigma, 0, 2, [0])


def test_conditional_covariance_duality(model14):
    Sigma, J = model14.covariance, model14.J
    p = len(J)
    for i, j in [(0, 1), (0, 5), (2, 11), (3, 4)]:
        rest = [k for k in range(p) if k not in (i, j)]
        c = conditional_covariance_exact(Sigma, i, j, rest)
        assert (abs(c) < 1e-9 * abs(Sigma[i, j])) == (abs(J[i, j]) < 1e-9)


def test_singular_reduced_matrix_rejected():
    with pytest.raises(ModelError):
        precision_from_b(build_susceptance_matrix(path_case(3)), sigma=0.0)


def test_sample_covariance_converges(model14):
    C = model14.covariance
    errs = [np.linalg.norm(np.cov(sample_gmrf(model14, n=n, seed=n).values, rowvar=False) - C)
            for n in (1_000, 10_000, 100_000)]
    assert errs[0] > errs[1] > errs[2]
