import math

import numpy as np
import pytest

from polyqe.corpus import AnnotatedSegment
from polyqe.embedstore import EmbeddingStore
from polyqe.knnqe import (
    DEFAULT_GAMMA_GRID,
    KernelConfig,
    KernelKnnRegressor,
    kernel_weights,
    knn_polycand,
    knn_polyic,
    tune_gamma,
    weighted_score_average,
)
from polyqe.retrieval import RetrievalQuery, build_index


def segment(i, score, src="shared src"):
    return AnnotatedSegment(id=f"n{i}", src=src, mt=f"translation {i}",
                            langs="en-cs", score=score)


class TestKernelWeights:
    def test_infinite_gamma_is_exactly_uniform(self):
        weights = kernel_weights([0.9, 0.4, -0.2], math.inf)
        assert np.array_equal(weights, np.full(3, 1.0 / 3.0))

    def test_matches_direct_formula(self):
        sims = np.array([1.0, 0.5])
        gamma = 0.5
        # w_i = exp(-(1 - sim_i)/gamma): (1, e^-1), then normalized
        expected = np.array([1.0, math.exp(-1.0)])
        expected /= expected.sum()
        assert np.allclose(kernel_weights(sims, gamma), expected, atol=1e-15)

    def test_no_underflow_for_tiny_gamma(self):
        weights = kernel_weights([0.99, 0.5, 0.1], 1e-9)
        assert np.all(np.isfinite(weights))
        assert weights[0] == pytest.approx(1.0)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            KernelConfig(gamma=0.0)
        with pytest.raises(ValueError):
            KernelConfig(gamma=-1.0)


class TestKnnPolycand:
    def pool_of(self, scores, sims):
        return [(segment(i, s), sim) for i, (s, sim) in enumerate(zip(scores, sims))]

    def test_k1_is_exactly_the_nearest_base_score(self):
        pool = self.pool_of([80.0, 40.0], [1.0, 0.5])
        result = knn_polycand(pool, lambda seg: seg.score, k=1)
        assert result == 80.0

    def test_infinite_gamma_is_plain_mean(self):
        pool = self.pool_of([80.0, 40.0, 30.0], [0.9, 0.8, 0.2])
        result = knn_polycand(pool, lambda seg: seg.score, k=3,
                              kernel=KernelConfig(gamma=math.inf))
        assert result == pytest.approx((80.0 + 40.0 + 30.0) / 3.0, abs=1e-15)

    def test_weighted_example_against_direct_arithmetic(self):
        # cos = (1.0, 0.5), gamma = 0.5, base scores (80, 40)
        pool = self.pool_of([80.0, 40.0], [1.0, 0.5])
        result = knn_polycand(pool, lambda seg: seg.score, k=2,
                              kernel=KernelConfig(gamma=0.5))
        oracle = (80.0 + 40.0 * math.exp(-1.0)) / (1.0 + math.exp(-1.0))
        assert result == pytest.approx(oracle, abs=1e-12)
        assert result == pytest.approx(69.242, abs=1e-3)

    def test_scorer_is_called_on_topk_only(self):
        pool = self.pool_of([10.0, 20.0, 99.0], [0.9, 0.8, 0.1])
        seen = []

        def scorer(seg):
            seen.append(seg.id)
            return seg.score

        knn_polycand(pool, scorer, k=2)
        assert seen == ["n0", "n1"]

    def test_empty_pool_is_error(self):
        with pytest.raises(ValueError, match="empty"):
            knn_polycand([], lambda seg: 0.0, k=1)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            scores = rng.uniform(0, 100, size=4)
            sims = np.sort(rng.uniform(-1, 1, size=4))[::-1]
            pool = self.pool_of(scores, sims)
            for gamma in (1e-3, 0.7, 5.0, math.inf):
                value = knn_polycand(pool, lambda seg: seg.score, k=4,
                                     kernel=KernelConfig(gamma=gamma))
                assert scores.min() - 1e-9 <= value <= scores.max() + 1e-9


class TestKnnPolyic:
    def build_index(self, scores, vectors):
        store = EmbeddingStore(len(vectors[0]))
        segments = []
        for i, (score, vec) in enumerate(zip(scores, vectors)):
            seg = AnnotatedSegment(id=f"kb{i}", src=f"kb source {i}", mt=f"kb mt {i}",
                                   langs="en-cs", score=score)
            segments.append(seg)
            store.add(seg.id, "src", np.asarray(vec, dtype=np.float64))
            store.add(seg.id, "mt", np.asarray(vec, dtype=np.float64))
        return build_index(segments, store, "src")

    def test_k1_returns_nearest_gold_score(self):
        index = self.build_index([90.0, 10.0], [[1.0, 0.0], [0.0, 1.0]])
        query = RetrievalQuery(key=np.array([0.9, 0.1]))
        assert knn_polyic(query, index, k=1) == 90.0

    def test_constant_scores_are_a_fixed_point(self):
        index = self.build_index([42.0, 42.0, 42.0],
                                 [[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
        query = RetrievalQuery(key=np.array([1.0, 0.5]))
        for gamma in (1e-4, 1.0, math.inf):
            value = knn_polyic(query, index, k=3, kernel=KernelConfig(gamma=gamma))
            assert value == pytest.approx(42.0, abs=1e-12)

    def test_weighted_against_direct_arithmetic(self):
        # sims (0.9, 0.8, 0.5), scores (90, 70, 10), gamma = 0.1
        sims = np.array([0.9, 0.8, 0.5])
        scores = np.array([90.0, 70.0, 10.0])
        raw = np.exp(-(1.0 - sims) / 0.1)  # exp(-1), exp(-2), exp(-5)
        oracle = float((raw / raw.sum()) @ scores)
        got = weighted_score_average(scores, sims, KernelConfig(gamma=0.1))
        assert got == pytest.approx(oracle, abs=1e-12)

    def test_empty_knowledge_base_is_error(self):
        store = EmbeddingStore(2)
        index = build_index([], store, "src")
        with pytest.raises(ValueError, match="empty knowledge base"):
            knn_polyic(RetrievalQuery(key=np.ones(2)), index, k=1)

    def test_unscored_kb_segment_is_error(self):
        store = EmbeddingStore(2)
        seg = AnnotatedSegment(id="u", src="s", mt="t", langs="en-cs")
        store.add("u", "src", np.array([1.0, 0.0]))
        store.add("u", "mt", np.array([1.0, 0.0]))
        index = build_index([seg], store, "src")
        with pytest.raises(ValueError, match="gold score"):
            knn_polyic(RetrievalQuery(key=np.array([1.0, 0.0])), index, k=1)


class TestGammaLimits:
    def test_large_float_gamma_close_to_symbolic_infinity(self):
        sims = np.array([0.95, 0.6, 0.3, -0.1])
        scores = np.array([88.0, 12.0, 55.0, 70.0])
        weighted = weighted_score_average(scores, sims, KernelConfig(gamma=1e9))
        unweighted = weighted_score_average(scores, sims, KernelConfig(gamma=math.inf))
        assert abs(weighted - unweighted) < 1e-9
        assert unweighted == pytest.approx(scores.mean(), abs=1e-12)

    def test_tiny_gamma_converges_to_nearest_neighbor(self):
        sims = np.array([0.97, 0.9, 0.2])
        scores = np.array([33.0, 99.0, 50.0])
        value = weighted_score_average(scores, sims, KernelConfig(gamma=1e-6))
        assert value == pytest.approx(33.0, abs=1e-9)


class TestTuneGamma:
    def test_picks_minimizer(self):
        gold = [50.0, 60.0]

        def predict(gamma):
            # contrived: only gamma == 1.0 matches the gold scores
            return gold if gamma == 1.0 else [0.0, 0.0]

        assert tune_gamma(predict, gold) == 1.0

    def test_tie_prefers_first_grid_entry(self):
        gold = [10.0]
        assert tune_gamma(lambda g: [10.0], gold) == DEFAULT_GAMMA_GRID[0]


class TestKernelKnnRegressor:
    def test_matches_function_api(self):
        rng = np.random.default_rng(1)
        keys = rng.normal(size=(30, 4))
        scores = rng.uniform(0, 100, size=30)
        est = KernelKnnRegressor(k=5, gamma=0.3).fit(keys, scores)
        queries = rng.normal(size=(6, 4))
        preds = est.predict(queries)
        keys_unit = keys / np.linalg.norm(keys, axis=1, keepdims=True)
        for row, expected in zip(queries, preds):
            q = row / np.linalg.norm(row)
            sims = np.clip(keys_unit @ q, -1, 1)
            order = np.argsort(-sims, kind="stable")[:5]
            oracle = weighted_score_average(scores[order], sims[order],
                                            KernelConfig(gamma=0.3))
            assert expected == pytest.approx(oracle, abs=1e-12)

    def test_sklearn_protocol(self):
        from sklearn.base import clone

        est = KernelKnnRegressor(k=3, gamma=math.inf)
        assert clone(est).get_params() == {"k": 3, "gamma": math.inf}

    def test_unfitted_raises(self):
        with pytest.raises(ValueError, match="not fitted"):
            KernelKnnRegressor().predict(np.ones((1, 3)))
