import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from vgpr.data import Dataset
from vgpr.kernel import Hyperparameters, covariance_block_grad
from vgpr.oracle import dense_covariance, dense_grad_fim, dense_loglik
from vgpr.ordering import build_plan
from vgpr.vecchia import (MiniBatch, NotPositiveDefiniteError, conditional_moments, default_keys,
                          sample_minibatch, vecchia_fim, vecchia_grad, vecchia_loglik, vecchia_terms)


class TestLoglik:
    def test_single_observation(self):
        ds = Dataset(np.array([[0.3, 0.1]]), np.array([0.7]))
        th = Hyperparameters(1.4, [1.0, 2.0], 0.2)
        plan = build_plan(ds.X, th, 5)
        v = 1.6
        expect = -0.5 * math.log(2 * math.pi * v) - 0.5 * 0.7 ** 2 / v
        np.testing.assert_allclose(vecchia_loglik(ds, plan, th), expect, rtol=1e-14)

    def test_full_conditioning_matches_dense(self):
        ds, th = random_dataset(50, 3, seed=1)
        plan = build_plan(ds.X, th, 49)
        np.testing.assert_allclose(vecchia_loglik(ds, plan, th), dense_loglik(ds, th), rtol=1e-8)

    def test_full_batch_equals_full(self):
        ds, th = random_dataset(60, 2, seed=2)
        plan = build_plan(ds.X, th, 5)
        full = vecchia_loglik(ds, plan, th)
        assert vecchia_loglik(ds, plan, th, MiniBatch(np.arange(60), 60)) == full

    def test_term_order_independence(self):
        ds, th = random_dataset(200, 3, seed=3)
        plan = build_plan(ds.X, th, 10)
        _, ll, _, _ = vecchia_terms(ds, plan, th, [])
        perm = np.random.default_rng(0).permutation(ll.size)
        assert abs(sum(ll[perm].tolist()) - vecchia_loglik(ds, plan, th)) < 1e-9

    def test_batch_sum_of_terms(self):
        ds, th = random_dataset(80, 2, seed=4)
        plan = build_plan(ds.X, th, 6)
        _, ll, _, _ = vecchia_terms(ds, plan, th, [])
        b = sample_minibatch(80, 17, 3)
        np.testing.assert_allclose(vecchia_loglik(ds, plan, th, b), ll[b.indices].sum(), rtol=1e-13)

    def test_jitter_handles_coincident_points(self):
        X = np.array([[0.5], [0.5], [0.2]])
        ds = Dataset(X, np.array([0.1, 0.1, -0.3]))
        th = Hyperparameters(1.0, [1.0], 0.0)
        plan = build_plan(X, th, 2)
        # exact duplicates without noise are singular; the jittered retry succeeds
        assert np.isfinite(vecchia_loglik(ds, plan, th))

    def test_failed_retry_raises(self, monkeypatch):
        X = np.array([[0.5], [0.1]])
        ds = Dataset(X, np.array([0.1, 0.2]))
        th = Hyperparameters(1.0, [1.0], 0.0)
        plan = build_plan(X, th, 1)

        def always_fail(a):
            raise np.linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(np.linalg, "cholesky", always_fail)
        with pytest.raises(NotPositiveDefiniteError):
            vecchia_loglik(ds, plan, th)

    def test_moments_stack(self):
        rng = np.random.default_rng(5)
        Xc = rng.uniform(size=(4, 3, 2))
        xi = rng.uniform(size=(4, 2))
        wc = rng.normal(size=(4, 3))
        th = Hyperparameters(1.2, [2.0, 0.5], 0.1)
        out = conditional_moments(Xc, xi, wc, None, th)
        for t in range(4):
            P = np.vstack([Xc[t], xi[t]])
            S = dense_covariance(P, th)
            b = np.linalg.solve(S[:3, :3], S[:3, 3])
            np.testing.assert_allclose(out["coef"][t], b, rtol=1e-10)
            np.testing.assert_allclose(out["var"][t], S[3, 3] - S[:3, 3] @ b, rtol=1e-10)
            np.testing.assert_allclose(out["mean"][t], b @ wc[t], rtol=1e-10, atol=1e-14)


class TestGradient:
    def test_matches_finite_differences(self):
        ds, th = random_dataset(300, 5, seed=7)
        plan = build_plan(ds.X, th, 10)
        keys = default_keys(5)
        g = vecchia_grad(ds, plan, th, keys)
        for j, key in enumerate(keys):
            v = th.get(key)
            h = 1e-5 * max(1.0, abs(v))
            fd = (vecchia_loglik(ds, plan, th.with_vector([key], [v + h]))
                  - vecchia_loglik(ds, plan, th.with_vector([key], [v - h]))) / (2 * h)
            np.testing.assert_allclose(g[j], fd, rtol=1e-4, atol=1e-6)

    def test_constant_column_zero(self):
        ds, th = random_dataset(40, 3, seed=8)
        ds.X[:, 1] = 0.4
        plan = build_plan(ds.X, th, 5)
        g = vecchia_grad(ds, plan, th, [1])
        assert g[0] == 0.0

    def test_full_batch_bitwise(self):
        ds, th = random_dataset(70, 3, seed=9)
        plan = build_plan(ds.X, th, 6)
        np.testing.assert_array_equal(vecchia_grad(ds, plan, th),
                                      vecchia_grad(ds, plan, th, batch=MiniBatch(np.arange(70), 70)))

    def test_exact_at_full_conditioning(self):
        ds, th = random_dataset(100, 3, seed=10)
        plan = build_plan(ds.X, th, 99)
        keys = default_keys(3)
        g_ref, F_ref = dense_grad_fim(ds, th, keys)
        np.testing.assert_allclose(vecchia_grad(ds, plan, th, keys), g_ref, rtol=1e-6)
        np.testing.assert_allclose(vecchia_fim(ds, plan, th, keys), F_ref, rtol=1e-6)

    def test_batch_average_unbiased_exhaustive(self):
        ds, th = random_dataset(8, 2, seed=11)
        plan = build_plan(ds.X, th, 2)
        full = vecchia_grad(ds, plan, th)
        subsets = list(itertools.combinations(range(8), 3))
        assert len(subsets) == 56
        mean = np.mean([vecchia_grad(ds, plan, th, batch=MiniBatch(np.array(s), 8)) for s in subsets], axis=0)
        np.testing.assert_allclose(mean, 3 / 8 * full, atol=1e-10, rtol=0)

    def test_subset_of_keys_consistent(self):
        ds, th = random_dataset(50, 4, seed=12)
        plan = build_plan(ds.X, th, 5)
        full = vecchia_grad(ds, plan, th)
        part = vecchia_grad(ds, plan, th, ["tau2", 2, "sigma2"])
        np.testing.assert_allclose(part, full[[5, 3, 0]], rtol=1e-12)


class TestFisher:
    def test_single_observation(self):
        ds = Dataset(np.array([[0.3]]), np.array([0.7]))
        th = Hyperparameters(1.4, [1.0], 0.2)
        plan = build_plan(ds.X, th, 3)
        F = vecchia_fim(ds, plan, th, ["sigma2"])
        np.testing.assert_allclose(F, [[1 / (2 * 1.6 ** 2)]], rtol=1e-14)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_psd(self, seed):
        ds, th = random_dataset(30, 3, seed=seed)
        plan = build_plan(ds.X, th, 4)
        F = vecchia_fim(ds, plan, th)
        assert np.max(np.abs(F - F.T)) < 1e-12
        w = np.linalg.eigvalsh(F)
        assert w.min() > -1e-8 * max(1.0, w.max())

    def test_score_covariance(self):
        ds, th = random_dataset(30, 2, seed=13, sr=[3.0, 1.0], tau2=0.1)
        plan = build_plan(ds.X, th, 29)
        keys = default_keys(2)
        F = vecchia_fim(ds, plan, th, keys)
        # scores of the exact density (equal to the Vecchia one at full conditioning), 5000 draws
        S = dense_covariance(ds, th)
        Si = np.linalg.inv(S)
        idx = np.arange(30)
        W = [Si @ covariance_block_grad(idx, idx, ds, th, k) @ Si for k in keys]
        tr = [np.trace(Wk @ S) for Wk in W]
        Y = np.linalg.cholesky(S) @ np.random.default_rng(0).standard_normal((30, 5000))
        scores = np.array([0.5 * np.einsum("in,ij,jn->n", Y, Wk, Y) - 0.5 * t for Wk, t in zip(W, tr)])
        C = np.cov(scores)
        assert np.linalg.norm(C - F) / np.linalg.norm(F) < 0.05


class TestMiniBatch:
    def test_full_size(self):
        np.testing.assert_array_equal(sample_minibatch(6, 6, 0).indices, np.arange(6))

    def test_inclusion_frequency(self):
        rng = np.random.default_rng(0)
        counts = np.zeros(10)
        for _ in range(20000):
            counts[sample_minibatch(10, 3, rng).indices] += 1
        np.testing.assert_allclose(counts / 20000, 0.3, atol=0.02)

    def test_seeded(self):
        a, b = sample_minibatch(100, 10, 42), sample_minibatch(100, 10, 42)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert len(set(a.indices.tolist())) == 10

    def test_too_large(self):
        with pytest.raises(ValueError):
            sample_minibatch(5, 6, 0)
