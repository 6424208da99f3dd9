import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import (
    affine_stationarity,
    nonrigid_stationarity,
    random_adjacency,
    random_feasible,
    rot2,
    similarity_stationarity,
)
from frgm.bench import accuracy, gen_deformed, identity_baseline_error, load_template
from frgm.core import NumericalError, ParameterError
from frgm.deform import (
    Affine,
    Nonrigid,
    Similarity,
    TransformChain,
    apply_transform,
    default_sigma_w,
    fit_affine,
    fit_nonrigid,
    fit_similarity,
    gaussian_rbf_kernel,
    j_tau,
    match_deformable,
    soft_variance,
)


class TestKernel:
    def test_single_point(self):
        np.testing.assert_array_equal(gaussian_rbf_kernel(np.array([[1.0, 2.0]]), 0.7), [[1.0]])

    def test_two_points(self):
        K = gaussian_rbf_kernel(np.array([[0.0, 0], [0.5, 0]]), 0.5)
        assert K[0, 1] == pytest.approx(np.exp(-1)) and K[1, 0] == K[0, 1]

    def test_positive_definite(self, rng):
        K = gaussian_rbf_kernel(rng.normal(size=(10, 2)), 1.0)
        assert np.linalg.eigvalsh(K).min() > 0
        assert np.all((K > 0) & (K <= 1)) and np.all(np.diag(K) == 1)

    def test_bad_bandwidth(self):
        with pytest.raises(ParameterError):
            gaussian_rbf_kernel(np.zeros((2, 2)), 0.0)


class TestApplyTransform:
    def test_identity(self, rng):
        V = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(apply_transform(Similarity.identity(2), V), V)

    def test_scaled_rotation(self):
        R = np.array([[0.0, 1.0], [-1.0, 0.0]])  # maps (1, 0) to (0, 1)
        out = apply_transform(Similarity(2.0, R, [1.0, 0.0]), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(out, [[1.0, 2.0]])

    def test_zero_weights(self, rng):
        V = rng.normal(size=(6, 2))
        np.testing.assert_array_equal(apply_transform(Nonrigid(V, np.zeros((6, 2)), 0.5), V), V)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            apply_transform(Similarity.identity(3), np.zeros((4, 2)))

    def test_type_validation(self):
        with pytest.raises(ParameterError):
            Similarity(1.0, np.array([[1.0, 0], [0, -1]]), [0, 0])
        with pytest.raises(ParameterError):
            Similarity(-1.0, np.eye(2), [0, 0])
        with pytest.raises(ParameterError):
            Affine(np.zeros((2, 2)), [0, 0])
        with pytest.raises(ParameterError):
            Nonrigid(np.zeros((3, 2)), np.zeros((2, 2)), 1.0)

    def test_chain_collapse(self, rng):
        V = rng.normal(size=(7, 2))
        a = Similarity(1.5, rot2(0.4), [1.0, -2.0])
        b = Similarity(0.5, rot2(-1.3), [0.3, 0.2])
        chain = TransformChain((a, b))
        c = chain.collapse()
        assert isinstance(c, Similarity)
        np.testing.assert_allclose(c.apply(V), b.apply(a.apply(V)), atol=1e-12)
        mixed = chain.then(Affine(np.array([[1.0, 0.2], [0.0, 1.0]]), [0, 1]))
        np.testing.assert_allclose(mixed.collapse().apply(V), mixed.apply(V), atol=1e-12)
        nr = chain.then(Nonrigid(V, 0.1 * rng.normal(size=V.shape), 1.0))
        assert nr.collapse() is nr and nr.to_dict()["variant"] == "chain"

    def test_angle_in_dict(self):
        assert Similarity(1.0, rot2(0.7), [0, 0]).to_dict()["angle"] == pytest.approx(0.7)


class TestFitSimilarity:
    @pytest.mark.parametrize("d", [2, 3])
    def test_recovers_planted(self, rng, d):
        for _ in range(5):
            V1 = rng.normal(size=(12, d))
            R0 = rot2(rng.uniform(-np.pi, np.pi)) if d == 2 else Rotation.random(random_state=rng).as_matrix()
            s0, t0 = rng.uniform(0.2, 5), rng.normal(size=d)
            perm = rng.permutation(15)[:12]
            V2 = rng.normal(size=(15, d))
            V2[perm] = s0 * V1 @ R0 + t0
            P = np.eye(15)[perm]
            tau = fit_similarity(P, V1, V2, lam=0.0)
            assert np.abs(tau.apply(V1) - V2[perm]).max() <= 1e-9
            assert tau.s == pytest.approx(s0, rel=1e-9)

    def test_self_is_identity(self, rng):
        V = rng.normal(size=(8, 2))
        tau = fit_similarity(np.eye(8), V, V)
        assert tau.s == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(tau.R, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(tau.t, 0.0, atol=1e-9)

    @given(st.integers(2, 10), st.integers(0, 5), st.sampled_from([2, 3]), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_rotation_valid_and_stationary(self, m, extra, d, seed):
        r = np.random.default_rng(seed)
        V1, V2 = r.normal(size=(m, d)), r.normal(size=(m + extra, d))
        P = random_feasible(r, m, m + extra)
        adj = random_adjacency(r, m)
        tau = fit_similarity(P, V1, V2, adj, 0.5)
        np.testing.assert_allclose(tau.R.T @ tau.R, np.eye(d), atol=1e-9)
        assert abs(np.linalg.det(tau.R) - 1) <= 1e-9
        if tau.s > 1e-9:
            assert similarity_stationarity(tau, P, V1, V2, adj, 0.5) <= 1e-4

    def test_rank_deficient_falls_back(self, caplog):
        V1 = np.array([[0.0, 0], [1, 0], [2, 0]])
        V2 = np.array([[0.0, 0], [0, 0], [0, 0]]) + 1.0
        with caplog.at_level(logging.WARNING, logger="frgm.deform"):
            tau = fit_similarity(np.eye(3), V1, V2)
        np.testing.assert_array_equal(tau.R, np.eye(2))
        assert "rank-deficient" in caplog.text

    def test_needs_two_points(self):
        with pytest.raises(ParameterError):
            fit_similarity(np.ones((1, 1)), np.zeros((1, 2)), np.zeros((1, 2)))


class TestFitAffine:
    def test_recovers_planted(self, rng):
        for _ in range(5):
            V1 = rng.normal(size=(10, 2))
            A0 = rng.normal(size=(2, 2)) + 2 * np.eye(2)
            t0 = rng.normal(size=2)
            V2 = V1 @ A0 + t0
            tau = fit_affine(np.eye(10), V1, V2, lam=0.0)
            assert np.abs(tau.apply(V1) - V2).max() <= 1e-9
            np.testing.assert_allclose(tau.A, A0, atol=1e-9)

    def test_self_is_identity(self, rng):
        V = rng.normal(size=(8, 3))
        tau = fit_affine(np.eye(8), V, V)
        np.testing.assert_allclose(tau.A, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(tau.t, 0, atol=1e-9)

    @given(st.integers(3, 10), st.integers(0, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_stationary(self, m, extra, seed):
        r = np.random.default_rng(seed)
        V1, V2 = r.normal(size=(m, 2)), r.normal(size=(m + extra, 2))
        P = random_feasible(r, m, m + extra)
        adj = random_adjacency(r, m)
        try:
            tau = fit_affine(P, V1, V2, adj, 0.5)
        except ParameterError:
            return  # fitted A singular: soft targets collapsed
        assert affine_stationarity(tau, P, V1, V2, adj, 0.5) <= 1e-4

    def test_degenerate_source(self):
        V1 = np.array([[0.0, 0], [1, 1], [2, 2]])
        with pytest.raises(NumericalError):
            fit_affine(np.eye(3), V1, np.eye(3)[:, :2])


class TestFitNonrigid:
    def test_self_zero_weights(self, rng):
        V = rng.normal(size=(8, 2))
        tau = fit_nonrigid(np.eye(8), V, V)
        np.testing.assert_allclose(tau.W, 0.0, atol=1e-12)

    def test_planted_warp(self, rng):
        V1 = rng.normal(size=(30, 2))
        sw = default_sigma_w(V1)
        W0 = 0.05 * rng.normal(size=V1.shape)
        V2 = V1 + gaussian_rbf_kernel(V1, sw) @ W0
        tau = fit_nonrigid(np.eye(30), V1, V2, sigma_w=sw)
        assert np.sqrt(((tau.apply(V1) - V2) ** 2).sum(axis=1).mean()) <= 1e-3

    @given(st.integers(2, 10), st.integers(0, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_stationary_and_regularizer(self, m, extra, seed):
        r = np.random.default_rng(seed)
        V1, V2 = r.normal(size=(m, 2)), r.normal(size=(m + extra, 2))
        P = random_feasible(r, m, m + extra)
        adj = random_adjacency(r, m)
        tau = fit_nonrigid(P, V1, V2, adj, 0.5)
        assert nonrigid_stationarity(tau, P, V1, V2, adj, 0.5) <= 1e-4
        K = gaussian_rbf_kernel(tau.basis, tau.sigma_w)
        assert float((tau.W * (K @ tau.W)).sum()) >= 0

    def test_matches_least_squares_oracle(self, rng):
        # the closed form against a stacked least-squares solve of the same
        # objective, pinning the transposition convention
        m, n = 7, 9
        V1, V2 = rng.normal(size=(m, 2)), rng.normal(size=(n, 2))
        P = random_feasible(rng, m, n)
        adj = random_adjacency(rng, m)
        lam, sw = 0.5, 0.8
        tau = fit_nonrigid(P, V1, V2, adj, lam, sw)
        K = gaussian_rbf_kernel(V1, sw)
        M = np.eye(m) + lam * (np.diag(adj.sum(1)) - adj)
        s2 = soft_variance(P, V1, V2)
        Mh = np.linalg.cholesky(M).T
        Kh = np.linalg.cholesky(K).T
        A = np.vstack([Mh @ K, np.sqrt(s2) * Kh])
        B = np.vstack([-Mh @ (V1 - P @ V2), np.zeros((m, 2))])
        W = np.linalg.lstsq(A, B, rcond=None)[0]
        np.testing.assert_allclose(tau.W, W, atol=1e-9)

    def test_singular_system(self):
        V = np.array([[0.0, 0], [0.0, 0], [1, 1]])
        with pytest.raises(NumericalError):
            fit_nonrigid(np.eye(3), V, V, sigma_w=1.0)


class TestMatchDeformable:
    def test_quarter_turn(self):
        T = load_template("two-moons", 40)
        inst = gen_deformed(T, "similarity", {"angle": np.pi / 2}, seed=0)
        res = match_deformable(inst.V1, inst.V2, truth=inst.truth)
        assert accuracy(res.assign, inst.truth) == 1.0
        assert res.d1 <= 1e-3 and res.d2 == 0.0
        assert abs(res.transform.to_dict()["angle"]) == pytest.approx(np.pi / 2, abs=1e-6)

    def test_scale_five(self):
        inst = gen_deformed(load_template("grid", 40), "similarity", {"scale": 5.0}, seed=0)
        res = match_deformable(inst.V1, inst.V2)
        assert res.transform.s == pytest.approx(5.0, rel=0.01)

    def test_nonrigid_beats_baseline(self):
        T = load_template("two-moons", 100)
        inst = gen_deformed(T, "nonrigid", {"sigma": 0.2}, noise_sigma=0.02, seed=0)
        res = match_deformable(inst.V1, inst.V2, variant="nonrigid", truth=inst.truth)
        assert res.d2 < identity_baseline_error(inst.V1, inst.V2, inst.truth)

    def test_affine_variant(self):
        A = np.array([[1.2, 0.3], [-0.1, 0.8]])
        inst = gen_deformed(load_template("circle", 40), "affine", {"A": A, "t": [1.0, 2.0]}, seed=0)
        res = match_deformable(inst.V1, inst.V2, variant="affine", truth=inst.truth)
        assert accuracy(res.assign, inst.truth) == 1.0
        assert isinstance(res.transform, Affine) and res.d1 <= 1e-6

    def test_error_trace_non_increasing(self):
        ok = 0
        for seed in range(10):
            inst = gen_deformed(load_template("circle", 40), "similarity", {"angle": 0.3 * seed - 1.5, "scale": 1.7}, seed=seed)
            tr = match_deformable(inst.V1, inst.V2, rounds=5, truth=inst.truth).error_trace
            ok += all(b <= a + 1e-9 for a, b in zip(tr, tr[1:]))
        assert ok >= 9

    def test_refit_from_origin(self):
        inst = gen_deformed(load_template("grid", 40), "similarity", {"angle": 1.0}, seed=2)
        res = match_deformable(inst.V1, inst.V2, refit_from_origin=True, truth=inst.truth)
        assert accuracy(res.assign, inst.truth) == 1.0

    def test_validation(self):
        V = np.random.default_rng(0).normal(size=(5, 3))
        with pytest.raises(ParameterError):
            match_deformable(V, V)
        with pytest.raises(ParameterError):
            match_deformable(V[:, :2], V[:, :2], variant="spline")
        with pytest.raises(ParameterError):
            match_deformable(V[:, :2], V[:, :2], rounds=0)
