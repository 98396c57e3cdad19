import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtr

from graphlabel.analysis import (PosteriorSummary, UnreachableVertexError, batch_means_se, inverse_scaled_c_transform,
                                 knn_baseline, misclassification_rate, mse_of_mean, oracle_sweep,
                                 posterior_summary, predict_labels, scaled_c_transform)
from graphlabel.graph import Graph, path_graph, path_spectrum_closed_form
from graphlabel.model import ObservationSet, PriorConfig, SoftLabelTruth, mask_labels, sample_labels, synth_soft_labels
from graphlabel.sampler import PosteriorDraws, SamplerConfig


def _draws(f):
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    return PosteriorDraws(f, np.ones(len(f)))


class TestPosteriorSummary:
    def test_single_draw_is_a_point(self):
        s = posterior_summary(_draws([[0.3, -1.0]]))
        np.testing.assert_array_equal(s.lower, s.upper)
        np.testing.assert_allclose(s.mean, ndtr([0.3, -1.0]))

    def test_symmetric_pairs(self, rng):
        x = rng.standard_normal((500, 3))
        s = posterior_summary(_draws(np.vstack([x, -x])))
        np.testing.assert_allclose(s.mean, 0.5, atol=1e-15)

    def test_normal_interval(self, rng):
        s = posterior_summary(_draws(rng.standard_normal((10_000, 1))))
        assert s.lower[0] == pytest.approx(0.025, abs=0.01)
        assert s.upper[0] == pytest.approx(0.975, abs=0.01)

    def test_nested_levels(self, rng):
        d = _draws(rng.standard_normal((300, 10)) * 2 + 0.5)
        inner, outer = posterior_summary(d, 0.5), posterior_summary(d, 0.9)
        assert np.all(outer.lower <= inner.lower) and np.all(inner.upper <= outer.upper)

    def test_c_summary(self):
        d = PosteriorDraws(np.zeros((5, 2)), np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
        s = posterior_summary(d)
        assert s.c_mean == 3.0 and s.c_quantiles[0.5] == 3.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            posterior_summary(PosteriorDraws(np.zeros((0, 3)), np.zeros(0)))
        with pytest.raises(ValueError):
            posterior_summary(_draws([[0.0]]), level=1.0)


class TestPredictLabels:
    def test_threshold_is_strict(self):
        np.testing.assert_array_equal(predict_labels(np.array([0.5, 0.9, 0.1])), [0, 1, 0])

    @given(st.lists(st.floats(-0.4, 0.4).filter(lambda e: abs(e) > 1e-12), min_size=1, max_size=40))
    def test_sign_of_offset(self, eps):
        eps = np.array(eps)
        np.testing.assert_array_equal(predict_labels(0.5 + eps), (eps > 0).astype(int))

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.05, 0.95))
    def test_reflection(self, means, t):
        m = np.array(means)
        off = m != t
        flipped = predict_labels(1 - m, 1 - t)
        # away from the boundary reflection swaps the labels; on it both sides predict 0
        np.testing.assert_array_equal(flipped[off], 1 - predict_labels(m, t)[off])
        assert np.all(flipped[~off] == 0) and np.all(predict_labels(m, t)[~off] == 0)

    def test_accepts_summary(self):
        s = PosteriorSummary(np.array([0.2, 0.8]), np.zeros(2), np.ones(2), 0.95, 1.0)
        np.testing.assert_array_equal(predict_labels(s), [0, 1])


class TestMisclassification:
    def test_cases(self):
        truth = np.array([0, 1] * 6)
        assert misclassification_rate(truth, truth, range(12)) == 0.0
        wrong = truth.copy()
        wrong[[3, 8]] ^= 1
        assert misclassification_rate(wrong, truth, range(12)) == pytest.approx(2 / 12)
        assert misclassification_rate(1 - truth, truth, range(12)) == 1.0

    @given(st.integers(0, 2**32 - 1))
    def test_bounds_and_permutation(self, seed):
        rng = np.random.default_rng(seed)
        pred, truth = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
        idx = rng.choice(30, 12, replace=False)
        r = misclassification_rate(pred, truth, idx)
        assert 0 <= r <= 1
        assert r == misclassification_rate(pred, truth, rng.permutation(idx))

    def test_empty(self):
        with pytest.raises(ValueError):
            misclassification_rate([1], [1], [])


class TestMse:
    def test_exact(self):
        ell = np.linspace(0.1, 0.8, 9)
        assert mse_of_mean(ell, ell) == 0.0
        assert mse_of_mean(ell + 0.1, ell) == pytest.approx(0.01)

    def test_accepts_truth(self):
        truth = synth_soft_labels(path_spectrum_closed_form(10), "path")
        assert mse_of_mean(truth.ell0, truth) == 0.0


class TestBatchMeans:
    def test_iid(self, rng):
        x = rng.standard_normal(100_000)
        assert batch_means_se(x) == pytest.approx(1 / np.sqrt(100_000), rel=0.3)

    def test_ar1_inflation(self, rng):
        rho, n = 0.9, 200_000
        e = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for i in range(1, n):
            x[i] = rho * x[i - 1] + e[i]
        # long-run sd of the AR(1) mean: 1 / (1 - rho)
        assert batch_means_se(x) == pytest.approx(1 / (1 - rho) / np.sqrt(n), rel=0.3)

    def test_too_short(self):
        with pytest.raises(ValueError):
            batch_means_se(np.zeros(10))


class TestScaledTransform:
    def test_unit_exponent(self):
        # r / (2q) = 1 and c = n give 1/n
        assert scaled_c_transform(50.0, 2.0, 1.0, 50) == pytest.approx(1 / 50)

    def test_c_one(self):
        assert scaled_c_transform(1.0, 1.0, 2.0, 500) == pytest.approx(500 ** 0.75)

    def test_decreasing(self):
        c = np.logspace(-3, 6, 20)
        assert np.all(np.diff(scaled_c_transform(c, 1.7, 1.85, 848)) < 0)

    @given(st.floats(1e-8, 1e8), st.floats(1, 3), st.floats(0.5, 5), st.integers(2, 5000))
    def test_round_trip(self, c, r, q, n):
        t = scaled_c_transform(c, r, q, n)
        assert inverse_scaled_c_transform(t, r, q, n) == pytest.approx(c, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scaled_c_transform([1.0, 0.0], 1, 1, 10)


class TestOracleSweep:
    def _problem(self, n=100):
        spec = path_spectrum_closed_form(n)
        truth = synth_soft_labels(spec, "path")
        obs = mask_labels(sample_labels(truth, seed=1), 0.2, seed=2)
        return spec, truth, obs

    def test_one_point_grid(self):
        spec, truth, obs = self._problem(30)
        res = oracle_sweep([42.0], obs, PriorConfig(q=1.5), SamplerConfig(n_iter=50, seed=1), truth,
                           spectrum=spec)
        assert res.c_star == 42.0 and len(res.curve) == 1 and res.failed == []

    def test_reproducible(self):
        spec, truth, obs = self._problem(30)
        args = ([1.0, 10.0, 100.0], obs, PriorConfig(q=1.5), SamplerConfig(n_iter=100, seed=3), truth)
        assert oracle_sweep(*args, spectrum=spec).curve == oracle_sweep(*args, spectrum=spec).curve

    def test_parallel_matches_serial(self):
        spec, truth, obs = self._problem(30)
        args = ([1.0, 10.0, 100.0], obs, PriorConfig(q=1.5), SamplerConfig(n_iter=100, seed=3), truth)
        assert oracle_sweep(*args, spectrum=spec, n_jobs=2).curve == oracle_sweep(*args, spectrum=spec).curve

    def test_failed_points_recorded(self):
        spec, truth, obs = self._problem(30)
        # the sparse strategy cannot run without the graph, so every point fails
        cfg = SamplerConfig(n_iter=10, strategy="sparse")
        with pytest.raises(RuntimeError):
            oracle_sweep([1.0, 2.0], obs, PriorConfig(q=2), cfg, truth, spectrum=spec)

    def test_u_shape_on_path_100(self):
        spec, truth, obs = self._problem(100)
        grid = np.logspace(0, 5, 11)
        res = oracle_sweep(grid, obs, PriorConfig(q=1.5), SamplerConfig(n_iter=2000, seed=4), truth,
                           spectrum=spec)
        mse = dict(res.curve)
        best = mse[res.c_star]
        assert 1 < res.c_star < 1e5
        near = [c for c in mse if c <= res.c_star / 100 or c >= res.c_star * 100]
        assert near and all(mse[c] > best for c in near)

    def test_bad_grid(self):
        spec, truth, obs = self._problem(30)
        for grid in ([], [3.0, 1.0], [-1.0]):
            with pytest.raises(ValueError):
                oracle_sweep(grid, obs, PriorConfig(q=1.5), SamplerConfig(n_iter=10), truth, spectrum=spec)


class TestKnnBaseline:
    def test_single_neighbour(self):
        g = Graph.from_pairs(2, [(0, 1)])
        assert knn_baseline(g, ObservationSet(2, [0], [1]), 1).tolist() == [1]

    def test_vote_tie_gives_zero(self):
        obs = ObservationSet(3, [0, 2], [0, 1])
        assert knn_baseline(path_graph(3), obs, 2).tolist() == [0]

    def test_radius_includes_equidistant(self):
        # vertex 1 has two observed neighbours labelled 1 and one labelled 0 at distance 1
        g = Graph.from_pairs(5, [(0, 1), (1, 2), (1, 3), (3, 4)])
        obs = ObservationSet(5, [0, 2, 3, 4], [1, 1, 0, 0])
        assert knn_baseline(g, obs, 1).tolist() == [1]

    def test_aligned_with_missing(self):
        g = path_graph(7)
        obs = ObservationSet(7, [0, 6], [0, 1])
        assert knn_baseline(g, obs, 1).tolist() == [0, 0, 0, 1, 1]

    def test_perfect_predictions(self):
        y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        obs = ObservationSet(8, [0, 2, 5, 7], y[[0, 2, 5, 7]])
        pred = knn_baseline(path_graph(8), obs, 1)
        assert misclassification_rate(pred, y[obs.missing], range(len(pred))) == 0.0

    def test_unreachable(self):
        g = Graph.from_pairs(4, [(0, 1), (2, 3)])
        obs = ObservationSet(4, [0], [1])
        with pytest.raises(UnreachableVertexError):
            knn_baseline(g, obs, 1)
        assert knn_baseline(g, obs, 1, on_unreachable="mark").tolist() == [1, -1, -1]

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_permutation_invariance(self, seed, k):
        # the radius rule and vote-tie rule never look at vertex ids
        rng = np.random.default_rng(seed)
        n = 25
        parents = [int(rng.integers(0, i)) for i in range(1, n)]
        pairs = np.array([(i + 1, p) for i, p in enumerate(parents)])
        y = rng.integers(0, 2, n)
        obs = mask_labels(y, 0.4, seed=seed)
        perm = rng.permutation(n)
        g2 = Graph.from_pairs(n, perm[pairs])
        obs2 = ObservationSet(n, perm[obs.vertices], obs.labels)
        pred = knn_baseline(Graph.from_pairs(n, pairs), obs, k)
        pred2 = knn_baseline(g2, obs2, k)
        by_vertex = dict(zip(perm[obs.missing].tolist(), pred.tolist()))
        assert by_vertex == dict(zip(obs2.missing.tolist(), pred2.tolist()))

    def test_bad_k(self):
        with pytest.raises(ValueError):
            knn_baseline(path_graph(3), ObservationSet(3, [0], [1]), 0)


def test_truth_type_has_no_copy_semantics():
    t = SoftLabelTruth(np.zeros(2), np.full(2, 0.5), np.zeros(2), 1.0)
    assert t.n == 2 and t.hard_labels.tolist() == [0, 0]
