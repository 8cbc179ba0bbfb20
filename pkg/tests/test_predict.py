import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from vgpr.data import Dataset, standardize
from vgpr.kernel import covariance_block
from vgpr.oracle import dense_covariance
from vgpr.predict import destandardize, nearest_neighbors, predict, write_predictions


def dense_kriging(ds, th, Xt):
    S = dense_covariance(ds, th)
    idx_tr = np.arange(ds.n)
    P = np.vstack([ds.X, Xt])
    K = covariance_block(np.arange(ds.n, ds.n + len(Xt)), idx_tr, P, th)
    mean = K @ np.linalg.solve(S, ds.y)
    var = th.sigma2 + th.tau2 - np.einsum("ij,ji->i", K, np.linalg.solve(S, K.T))
    return mean, var


class TestNearestNeighbors:
    def test_brute_force(self):
        rng = np.random.default_rng(0)
        Xtr, Xte = rng.uniform(size=(200, 3)), rng.uniform(size=(30, 3))
        sr = np.array([5.0, 1.0, 0.0])
        nbr = nearest_neighbors(Xtr, Xte, sr, 6)
        for i in range(30):
            dist = ((Xtr - Xte[i]) ** 2 * sr).sum(axis=1)
            expect = sorted(range(200), key=lambda j: (dist[j], j))[:6]
            assert list(nbr[i]) == expect

    def test_ties_to_lower_index(self):
        Xtr = np.array([[1.0], [-1.0], [1.0]])
        assert list(nearest_neighbors(Xtr, np.zeros((1, 1)), [1.0], 2)[0]) == [0, 1]

    def test_clipped(self):
        assert nearest_neighbors(np.zeros((3, 1)), np.zeros((2, 1)), [1.0], 10).shape == (2, 3)


class TestPredict:
    def test_interpolates_without_noise(self):
        ds, th = random_dataset(80, 2, seed=1, tau2=1e-8)
        mean, var = predict(ds, th, ds.X[:10], 20)
        np.testing.assert_allclose(mean, ds.y[:10], atol=1e-4)
        assert np.all(var < 1e-4)

    def test_far_point_reverts_to_prior(self):
        ds, th = random_dataset(50, 2, seed=2)
        mean, var = predict(ds, th, np.array([[1e3, 1e3]]), 10)
        assert abs(mean[0]) < 1e-12
        np.testing.assert_allclose(var, th.sigma2 + th.tau2, rtol=1e-12)

    def test_all_neighbours_match_dense(self):
        ds, th = random_dataset(60, 3, seed=3)
        Xt = np.random.default_rng(4).uniform(size=(15, 3))
        mean, var = predict(ds, th, Xt, 60)
        m_ref, v_ref = dense_kriging(ds, th, Xt)
        np.testing.assert_allclose(mean, m_ref, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(var, v_ref, rtol=1e-8, atol=1e-10)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 40))
    def test_variance_bounds(self, seed, m):
        ds, th = random_dataset(40, 2, seed=seed)
        Xt = np.random.default_rng(seed).normal(size=(10, 2))
        _, var = predict(ds, th, Xt, m)
        assert np.all(var >= 0) and np.all(var <= th.sigma2 + th.tau2)
        _, lat = predict(ds, th, Xt, m, latent=True)
        np.testing.assert_allclose(lat, np.maximum(var - th.tau2, 0), atol=1e-15)

    def test_training_permutation_invariant(self):
        ds, th = random_dataset(100, 2, seed=5)
        Xt = np.random.default_rng(6).uniform(size=(12, 2))
        perm = np.random.default_rng(7).permutation(100)
        a = predict(ds, th, Xt, 100)
        b = predict(Dataset(ds.X[perm], ds.y[perm]), th, Xt, 100)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-12)

    def test_zero_relevance_columns_ignored(self):
        ds, th = random_dataset(50, 3, seed=8, sr=[2.0, 0.0, 1.0])
        Xt = np.random.default_rng(9).uniform(size=(5, 3))
        Xt2 = Xt.copy()
        Xt2[:, 1] += 100.0
        np.testing.assert_array_equal(predict(ds, th, Xt, 10)[0], predict(ds, th, Xt2, 10)[0])

    def test_shape_errors(self):
        ds, th = random_dataset(10, 2, seed=0)
        with pytest.raises(ValueError):
            predict(ds, th, np.zeros((1, 3)), 5)
        with pytest.raises(ValueError):
            predict(ds, th, np.zeros((1, 2)), 0)


class TestOutput:
    def test_destandardize(self):
        raw = Dataset(np.array([[1.0], [2.0], [3.0]]), np.array([10.0, 20.0, 30.0]))
        ds = standardize(raw)
        mean, var = destandardize(ds, [0.0, 1.0], [1.0, 0.25])
        np.testing.assert_allclose(mean, [20.0, 30.0])
        np.testing.assert_allclose(var, [100.0, 25.0])

    def test_write(self, tmp_path):
        write_predictions(tmp_path / "p.csv", [0.5, 1.0 / 3.0], [0.1, 0.2])
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines == ["row_id,mean,variance", "0,0.5,0.1", f"1,{1 / 3!r},0.2"]
