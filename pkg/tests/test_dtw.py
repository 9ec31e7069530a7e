import math

import numpy as np
import pytest

from utils.dtw import (DTWError, batch_similarity, dtw_align, to_trend_vectors, trend_similarity,
                       vector_angle)


def all_paths(n):
    """Every monotone warping path from (0, 0) to (n-1, n-1)."""
    def walk(a, b):
        if (a, b) == (n - 1, n - 1):
            yield [(a, b)]
            return
        for da, db in ((1, 1), (1, 0), (0, 1)):
            if a + da < n and b + db < n:
                for rest in walk(a + da, b + db):
                    yield [(a, b)] + rest
    return list(walk(0, 0))


def brute_force(va, vb):
    angles = [[vector_angle(va.vector(a), vb.vector(b)) for b in range(len(vb))] for a in range(len(va))]
    costs = []
    for path in all_paths(len(va)):
        total = sum(angles[a][b] for a, b in path)
        costs.append((total, len(path)))
    best = min(c for c, _ in costs)
    lengths = {k for c, k in costs if c <= best + 1e-12}
    return best, lengths


class TestAlignment:
    @pytest.mark.parametrize('u', [3, 4, 5, 6])
    def test_matches_exhaustive_search(self, u):
        rng = np.random.default_rng(u)
        for _ in range(250):
            va = to_trend_vectors(rng.normal(size=u))
            vb = to_trend_vectors(rng.normal(size=u))
            best, lengths = brute_force(va, vb)
            result = dtw_align(va, vb)
            assert result.cumulative_distance == pytest.approx(best, abs=1e-12)
            assert result.path_length in lengths
            assert u - 1 <= result.path_length <= 2 * (u - 1) - 1

    def test_identical_windows(self):
        window = [1.0, 3.0, 2.0, 5.0, 4.0]
        result = dtw_align(to_trend_vectors(window), to_trend_vectors(window))
        assert result.cumulative_distance == pytest.approx(0.0, abs=1e-12)
        assert result.path_length == 4
        assert result.similarity == pytest.approx(1.0)


class TestSimilarity:
    def test_vertical_shift_is_free(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            window = rng.normal(20, 3, 12)
            assert trend_similarity(window, window + rng.uniform(-50, 50)) == pytest.approx(1.0, abs=1e-9)

    def test_value_scale_divides_out(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=12), rng.normal(size=12)
        assert trend_similarity(a * 40, b * 40, value_scale=40) == pytest.approx(trend_similarity(a, b))

    def test_single_step_known_value(self):
        # (1, 1) against (1, 0)
        assert trend_similarity([0.0, 1.0], [0.0, 0.0]) == pytest.approx(math.cos(math.pi / 4))

    def test_opposite_steep_trends_score_zero(self):
        assert trend_similarity([0.0, 100.0], [0.0, -100.0]) == 0.0

    def test_unit_slope_anti_trending_pair(self):
        rising = np.arange(12, dtype=np.float64)
        result = dtw_align(to_trend_vectors(rising), to_trend_vectors(-rising))
        assert result.cumulative_distance / result.path_length == pytest.approx(math.pi / 2, abs=1e-12)
        assert abs(result.similarity) <= 1e-12
        assert abs(batch_similarity(rising[None, :], -rising[None, :])[0]) <= 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            s = trend_similarity(rng.normal(size=12), rng.normal(size=12))
            assert 0.0 <= s <= 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=12), rng.normal(size=12)
        assert trend_similarity(a, b) == pytest.approx(trend_similarity(b, a))


class TestTrendVectors:
    def test_offsets_set_dt(self):
        seq = to_trend_vectors([1.0, 2.0, 4.0], offsets=[0, 1, 3])
        np.testing.assert_array_equal(seq.dt, [1.0, 2.0])
        np.testing.assert_array_equal(seq.dv, [1.0, 2.0])

    @pytest.mark.parametrize('window, kwargs', [
        ([1.0], {}),
        ([1.0, np.nan, 2.0], {}),
        ([1.0, 2.0], {'value_scale': 0.0}),
        ([1.0, 2.0, 3.0], {'offsets': [0, 2, 2]}),
        ([1.0, 2.0, 3.0], {'offsets': [0, 1]}),
    ])
    def test_rejects(self, window, kwargs):
        with pytest.raises(DTWError):
            to_trend_vectors(window, **kwargs)

    def test_length_mismatch(self):
        with pytest.raises(DTWError, match='differ in length'):
            dtw_align(to_trend_vectors([1.0, 2.0, 3.0]), to_trend_vectors([1.0, 2.0]))


class TestBatch:
    def test_matches_pairwise(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(30, 12))
        b = rng.normal(size=(30, 12))
        out = batch_similarity(a, b, value_scale=0.5)
        expected = [trend_similarity(x, y, value_scale=0.5) for x, y in zip(a, b)]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_incomplete_rows_are_nan(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 12))
        b = rng.normal(size=(3, 12))
        a[1, 5] = np.nan
        b[2, 0] = np.nan
        out = batch_similarity(a, b)
        assert not np.isnan(out[0])
        assert np.isnan(out[1]) and np.isnan(out[2])

    def test_shape_mismatch(self):
        with pytest.raises(DTWError):
            batch_similarity(np.zeros((2, 12)), np.zeros((2, 10)))
