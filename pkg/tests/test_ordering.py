import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgpr.kernel import Hyperparameters
from vgpr.ordering import build_plan, fic_conditioning, maxmin_order, nn_conditioning


def replay_greedy(Z, order):
    """Check every chosen point maximizes the minimum distance to its predecessors."""
    n = Z.shape[0]
    D = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    for i in range(1, n):
        placed = order[:i]
        rest = np.setdiff1d(np.arange(n), placed)
        best = D[np.ix_(rest, placed)].min(axis=1).max()
        assert D[order[i], placed].min() >= best - 1e-12


class TestMaxmin:
    def test_one_dimensional_example(self):
        X = np.arange(5.0)[:, None]
        np.testing.assert_array_equal(maxmin_order(X, [1.0]), [2, 0, 4, 1, 3])

    def test_single_point(self):
        np.testing.assert_array_equal(maxmin_order(np.zeros((1, 2)), [1.0, 1.0]), [0])

    def test_zero_relevance_identity(self):
        X = np.random.default_rng(0).normal(size=(7, 2))
        np.testing.assert_array_equal(maxmin_order(X, [0.0, 0.0]), np.arange(7))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 80), st.integers(1, 3), st.integers(0, 10_000))
    def test_greedy_property(self, n, d, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(n, d))
        sr = rng.uniform(0.1, 10, size=d)
        order = maxmin_order(X, sr)
        np.testing.assert_array_equal(np.sort(order), np.arange(n))
        replay_greedy(X * np.sqrt(sr / sr.max()), order)

    def test_greedy_property_n200(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(200, 3))
        sr = np.array([9.0, 1.0, 0.0])
        replay_greedy(X * np.sqrt(sr / 9.0), maxmin_order(X, sr))


class TestConditioning:
    def test_first_point_empty_and_small_i(self):
        X = np.random.default_rng(1).uniform(size=(10, 2))
        perm = maxmin_order(X, [1.0, 1.0])
        cond, sizes = nn_conditioning(X, perm, [1.0, 1.0], 4)
        assert sizes[0] == 0
        for i in range(1, 5):
            assert sorted(cond[i, : sizes[i]]) == list(range(i))

    def test_one_dimensional_nearest(self):
        X = np.array([[0.0], [10.0], [1.0]])
        cond, sizes = nn_conditioning(X, np.arange(3), [1.0], 1)
        assert cond[2, 0] == 0

    def test_ties_to_lower_position(self):
        X = np.array([[0.0], [2.0], [1.0]])
        cond, _ = nn_conditioning(X, np.arange(3), [1.0], 1)
        assert cond[2, 0] == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(500, 2))
        sr = np.array([4.0, 1.0])
        perm = maxmin_order(X, sr)
        cond, sizes = nn_conditioning(X, perm, sr, 7)
        Z = (X * np.sqrt(sr))[perm]
        for i in range(1, 500):
            dist = ((Z[:i] - Z[i]) ** 2).sum(axis=1)
            expect = sorted(range(i), key=lambda j: (dist[j], j))[: min(i, 7)]
            assert list(cond[i, : sizes[i]]) == expect

    def test_fic_example(self):
        cond, sizes = fic_conditioning(5, 2)
        sets = [list(cond[i, : sizes[i]]) for i in range(5)]
        assert sets == [[], [0], [0, 1], [0, 1], [0, 1]]

    def test_fic_full(self):
        cond, sizes = fic_conditioning(6, 10)
        assert [list(cond[i, : sizes[i]]) for i in range(6)] == [list(range(i)) for i in range(6)]

    def test_fic_single(self):
        cond, sizes = fic_conditioning(1, 3)
        assert sizes.tolist() == [0]

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            fic_conditioning(5, 0)


class TestBuildPlan:
    @pytest.mark.parametrize("strategy", ["scaled-nn", "unscaled-nn", "fic"])
    def test_plan_invariants(self, strategy):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(60, 3))
        plan = build_plan(X, Hyperparameters(1.0, [5.0, 1.0, 0.0], 0.1), 6, strategy)
        np.testing.assert_array_equal(np.sort(plan.perm), np.arange(60))
        for i, c in enumerate(plan.conditioning_sets()):
            assert len(c) == min(i, 6)
            assert np.all(c < i) and len(set(c)) == len(c)

    def test_full_conditioning(self):
        X = np.random.default_rng(4).uniform(size=(15, 2))
        for strategy in ["scaled-nn", "unscaled-nn", "fic"]:
            plan = build_plan(X, [1.0, 2.0], 14, strategy)
            for i, c in enumerate(plan.conditioning_sets()):
                assert sorted(c) == list(range(i))

    def test_scaled_differs_from_unscaled(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(100, 2))
        a = build_plan(X, [100.0, 0.01], 5, "scaled-nn")
        b = build_plan(X, [100.0, 0.01], 5, "unscaled-nn")
        assert not np.array_equal(a.perm, b.perm)

    def test_deterministic_and_scale_invariant(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(80, 3))
        sr = np.array([3.0, 0.5, 1.7])
        a = build_plan(X, sr, 5)
        b = build_plan(X, sr, 5)
        c = build_plan(X, 7.3 * sr, 5)
        for p in (b, c):
            np.testing.assert_array_equal(a.perm, p.perm)
            np.testing.assert_array_equal(a.cond, p.cond)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            build_plan(np.zeros((3, 1)), [1.0], 1, "pic")
