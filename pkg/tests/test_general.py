import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_gradient, random_feasible, random_permutation_matrix, relative_error
from frgm.bench import accuracy
from frgm.core import ParameterError, complete_adjacency, is_feasible, pairwise_distances
from frgm.general import (
    GeneralProblem,
    function_space_distance,
    j_int,
    j_ori,
    match_general,
    transported_attr,
)
from frgm.lap import wasserstein_metric
from frgm.optimizer import Objective, fw_solve


def metric(rng, n, d=2):
    return pairwise_distances(rng.random((n, d)))


def problem(rng, m, n, **kw):
    U = rng.random((m, n))
    return GeneralProblem.build(metric(rng, m), metric(rng, n), U=U, **kw)


class TestTransportedAttr:
    def test_permutation_selects_entries(self, rng):
        E = metric(rng, 5)
        perm = rng.permutation(5)
        P = np.eye(5)[perm]
        np.testing.assert_array_equal(transported_attr(P, E), E[np.ix_(perm, perm)])

    def test_uniform_gives_mean(self, rng):
        E = metric(rng, 6)
        np.testing.assert_allclose(transported_attr(np.full((3, 6), 1 / 6), E), E.mean(), rtol=1e-12)

    def test_double_loop(self, rng):
        P = random_feasible(rng, 4, 5)
        E = rng.random((5, 5))
        E = E + E.T
        want = sum(P[1, j1] * P[2, j2] * E[j1, j2] for j1 in range(5) for j2 in range(5))
        assert transported_attr(P, E)[1, 2] == pytest.approx(want, rel=1e-13)

    @given(st.integers(1, 6), st.integers(0, 3), st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_symmetric(self, m, extra, seed):
        r = np.random.default_rng(seed)
        F = transported_attr(random_feasible(r, m, m + extra), metric(r, m + extra))
        np.testing.assert_allclose(F, F.T, atol=1e-14)


class TestJOri:
    def test_identical_graphs_zero(self, rng):
        E = metric(rng, 6)
        prob = GeneralProblem.build(E, E, alpha1=1.0)
        assert j_ori(prob, np.eye(6))[0] == pytest.approx(0.0, abs=1e-14)

    def test_alpha_zero_is_linear(self, rng):
        prob = problem(rng, 4, 6, alpha1=0.0)
        P = random_feasible(rng, 4, 6)
        val, grad = j_ori(prob, P)
        assert val == pytest.approx((P * prob.U).sum())
        np.testing.assert_array_equal(grad, prob.U)

    @pytest.mark.parametrize("m,n", [(5, 5), (4, 7)])
    def test_gradient_finite_difference(self, rng, m, n):
        prob = problem(rng, m, n, alpha1=0.7)
        for _ in range(3):
            P = random_feasible(rng, m, n)
            fd = fd_gradient(lambda Q: j_ori(prob, Q)[0], P)
            assert relative_error(j_ori(prob, P)[1], fd) <= 1e-4

    def test_sparse_adjacency_gradient(self, rng):
        E1 = metric(rng, 6)
        A = (rng.random((6, 6)) < 0.5).astype(float)
        A = np.triu(A, 1)
        A = A + A.T
        prob = GeneralProblem.build(E1, metric(rng, 8), adj1=A)
        P = random_feasible(rng, 6, 8)
        fd = fd_gradient(lambda Q: j_ori(prob, Q)[0], P)
        assert relative_error(j_ori(prob, P)[1], fd) <= 1e-4

    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_koopmans_beckmann_form(self, m, seed):
        r = np.random.default_rng(seed)
        prob = GeneralProblem.build(metric(r, m), metric(r, m), alpha1=1.0)
        perm = r.permutation(m)
        P = np.eye(m)[perm]
        kb = sum(
            prob.adj1[i1, i2] * (prob.E1hat[i1, i2] - prob.E2hat[perm[i1], perm[i2]]) ** 2
            for i1 in range(m)
            for i2 in range(m)
        )
        assert j_ori(prob, P)[0] == pytest.approx(kb, rel=1e-12, abs=1e-14)


class TestFunctionSpaceDistance:
    def test_permutation(self, rng):
        E = metric(rng, 6)
        perm = rng.permutation(6)[:4]
        P = np.eye(6)[perm]
        D = function_space_distance(P, E)
        np.testing.assert_array_equal(D, E[perm])
        assert np.all(D[np.arange(4), perm] == 0)

    def test_uniform(self, rng):
        E = metric(rng, 5)
        D = function_space_distance(np.full((3, 5), 0.2), E)
        np.testing.assert_allclose(D, np.tile(E.mean(axis=0), (3, 1)), rtol=1e-13)

    def test_matches_entropic_ot(self, rng):
        E = metric(rng, 6)
        P = random_feasible(rng, 6, 6)
        want = np.array([[wasserstein_metric(P[i], np.eye(6)[j], E, 1e-4) for j in range(6)] for i in range(6)])
        np.testing.assert_allclose(function_space_distance(P, E), want, atol=1e-3)
        np.testing.assert_allclose(function_space_distance(P, E, epsilon=1e-4), want, atol=1e-12)

    def test_inner_product_metric(self, rng):
        G = GeneralProblem.build(metric(rng, 5), metric(rng, 5)).E2hat
        P = random_feasible(rng, 3, 5)
        D = function_space_distance(P, G, kind="inner")
        for i in range(3):
            for j in range(5):
                diff = P[i] - np.eye(5)[j]
                assert D[i, j] == pytest.approx(np.sqrt(diff @ G @ diff), abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            function_space_distance(np.eye(2), np.eye(2), kind="hamming")


class TestJInt:
    def test_alpha_zero_binary_minimizer(self, rng):
        prob = problem(rng, 5, 7, alpha2=0.0)
        P1 = random_feasible(rng, 5, 7)
        obj = Objective(lambda P: j_int(prob, P1, P)[0], lambda P: j_int(prob, P1, P)[1])
        sol = fw_solve(obj, shape=(5, 7)).solution
        assert set(np.unique(sol)) <= {0.0, 1.0}

    def test_alpha_one_at_target(self, rng):
        prob = problem(rng, 4, 6, alpha2=1.0)
        P1 = random_feasible(rng, 4, 6)
        assert j_int(prob, P1, P1)[0] == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("m,n", [(5, 5), (3, 6)])
    def test_gradient_finite_difference(self, rng, m, n):
        prob = problem(rng, m, n)
        P1 = random_feasible(rng, m, n)
        for _ in range(3):
            P = random_feasible(rng, m, n)
            fd = fd_gradient(lambda Q: j_int(prob, P1, Q)[0], P)
            assert relative_error(j_int(prob, P1, P)[1], fd) <= 1e-4


def test_build_validation(rng):
    with pytest.raises(ParameterError):
        GeneralProblem.build(metric(rng, 5), metric(rng, 4))
    with pytest.raises(ParameterError):
        GeneralProblem.build(metric(rng, 3), metric(rng, 3), alpha1=1.5)
    with pytest.raises(ParameterError):
        GeneralProblem.build(rng.random((3, 3)), metric(rng, 3))


class TestMatchGeneral:
    def test_identical_graphs(self, rng):
        E = metric(rng, 10)
        res = match_general(GeneralProblem.build(E, E))
        assert res.assign == tuple(range(10))
        assert is_feasible(res.P1) and is_feasible(res.P2)

    def test_planted_permutation(self):
        hits = 0
        for seed in range(20):
            r = np.random.default_rng(seed)
            E1 = metric(r, 20)
            perm = r.permutation(20)
            # node i of graph 1 is node perm[i] of graph 2
            E2 = np.empty_like(E1)
            E2[np.ix_(perm, perm)] = E1
            res = match_general(GeneralProblem.build(E1, E2))
            hits += accuracy(res.assign, perm) >= 0.95
        assert hits >= 19

    def test_subgraph_beats_random(self, rng):
        X2 = rng.random((50, 2))
        sub = rng.permutation(50)[:25]
        E1 = pairwise_distances(X2[sub])
        res = match_general(GeneralProblem.build(E1, pairwise_distances(X2)))
        assert accuracy(res.assign, sub) > 1 / 50

    def test_planted_distance_zeros(self, rng):
        E = metric(rng, 8)
        perm = rng.permutation(8)
        D = function_space_distance(np.eye(8)[perm], E / E.max())
        assert np.all(D[np.arange(8), perm] == 0)

    def test_afw_and_inner_distance(self, rng):
        E = metric(rng, 8)
        res = match_general(GeneralProblem.build(E, E), solver="afw", distance="inner", max_iter=30)
        assert res.assign == tuple(range(8))
