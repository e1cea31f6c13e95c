import itertools
import math
import os
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase

from apps.metrics.exceptions import BandwidthError, SampleSizeError
from apps.metrics.services import (
    KernelConfig,
    dominant_frequency_bins,
    dtw_exact,
    dtw_path,
    evaluate_epoch,
    fastdtw,
    mean_pairwise_distance,
    median_pairwise_distance,
    mmd2_unbiased,
)


def mmd2_oracle(x, y, alphas):
    def k(a, b):
        return sum(math.exp(-alpha * float(np.sum((a - b) ** 2))) for alpha in alphas)

    n, m = len(x), len(y)
    xx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    yy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    xy = sum(k(x[i], y[j]) for i in range(n) for j in range(m)) / (n * m)
    return xx + yy - 2.0 * xy


def monotone_paths(n, m):
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                for rest in walk(i + di, j + dj):
                    yield [(i, j)] + rest

    return list(walk(0, 0))


class MmdTestCase(SimpleTestCase):
    """Unbiased MMD2 with Gaussian kernels, against the literal triple sum."""

    def setUp(self):
        self.rng = np.random.default_rng(17)

    def test_repeated_identical_points(self):
        """Sets made of one repeated point are indistinguishable."""
        point = np.array([[0.3, -1.2, 0.5]])
        x, y = np.repeat(point, 4, axis=0), np.repeat(point, 6, axis=0)
        kernel = KernelConfig(bandwidths=(1.0, 0.25), rule="explicit")
        self.assertAlmostEqual(mmd2_unbiased(x, y, kernel), 0.0, places=12)

    def test_three_by_three_against_loops(self):
        """A fixed bandwidth on three rows a side."""
        x, y = self.rng.normal(size=(3, 2)), self.rng.normal(size=(3, 2))
        kernel = KernelConfig(bandwidths=(1.0,), rule="explicit")
        self.assertAlmostEqual(mmd2_unbiased(x, y, kernel), mmd2_oracle(x, y, [1.0]), delta=1e-12)

    def test_median_heuristic_against_triple_sum(self):
        """
        500 random instances of up to 20 rows each, bandwidth from the pooled
        median distance, checked against the literal triple sum.
        """
        for _ in range(500):
            # 1. ARRANGE
            n, m = self.rng.integers(2, 21, size=2)
            x, y = self.rng.normal(size=(n, 5)), self.rng.normal(0.3, 1.2, size=(m, 5))
            median = median_pairwise_distance(np.vstack([x, y]))
            alpha = 1.0 / (2.0 * median**2)

            # 2. ACT & 3. ASSERT
            self.assertAlmostEqual(mmd2_unbiased(x, y), mmd2_oracle(x, y, [alpha]), delta=1e-12)

    def test_symmetry(self):
        """Swapping the two sets leaves MMD2 unchanged."""
        x, y = self.rng.normal(size=(30, 4)), self.rng.normal(size=(25, 4))
        self.assertAlmostEqual(mmd2_unbiased(x, y), mmd2_unbiased(y, x), delta=1e-12)

    def test_same_distribution_is_near_zero(self):
        """Two large draws from one distribution score close to zero."""
        x, y = self.rng.standard_normal((500, 4)), self.rng.standard_normal((500, 4))
        self.assertLess(abs(mmd2_unbiased(x, y)), 0.05)

    def test_shifted_distribution_is_detected(self):
        """A mean shift of 2 in every coordinate is clearly detected."""
        x, y = self.rng.standard_normal((200, 4)), self.rng.standard_normal((200, 4)) + 2.0
        self.assertGreater(mmd2_unbiased(x, y), 0.1)

    def test_single_row_is_rejected(self):
        """The unbiased estimate needs two rows per set."""
        with self.assertRaises(SampleSizeError):
            mmd2_unbiased(np.zeros((1, 3)), np.ones((4, 3)))

    def test_explicit_rule_needs_bandwidths(self):
        """Explicit bandwidths must be given and positive."""
        with self.assertRaises(ValueError):
            KernelConfig(rule="explicit")
        with self.assertRaises(ValueError):
            KernelConfig(bandwidths=(0.0,), rule="explicit")


class MedianDistanceTestCase(SimpleTestCase):
    """Pooled median pairwise distance used for the bandwidth."""

    def test_two_points(self):
        self.assertEqual(median_pairwise_distance(np.array([[0.0, 0.0], [0.0, 2.0]])), 2.0)

    def test_collinear_points(self):
        """Distances 1, 2 and 3 have median 2."""
        self.assertEqual(median_pairwise_distance(np.array([[0.0], [1.0], [3.0]])), 2.0)

    def test_against_sorted_pairs(self):
        """An even number of pairs averages the two middle distances."""
        points = np.random.default_rng(2).normal(size=(100, 3))
        distances = sorted(
            float(np.linalg.norm(points[i] - points[j])) for i, j in itertools.combinations(range(100), 2)
        )
        middle = len(distances) // 2
        expected = (distances[middle - 1] + distances[middle]) / 2.0
        self.assertAlmostEqual(median_pairwise_distance(points), expected, delta=1e-12)

    def test_identical_points(self):
        """All-zero distances leave no usable bandwidth."""
        with self.assertRaises(BandwidthError):
            median_pairwise_distance(np.ones((5, 2)))


class DtwTestCase(SimpleTestCase):
    """Exact DTW by dynamic programming, against path enumeration."""

    def setUp(self):
        self.rng = np.random.default_rng(23)

    def test_identical_series(self):
        series = self.rng.normal(size=40)
        self.assertEqual(dtw_exact(series, series), 0.0)

    def test_two_by_two_table(self):
        """Constant series one apart cost one per aligned step."""
        self.assertEqual(dtw_exact([1.0, 1.0], [2.0, 2.0]), 2.0)

    def test_exhaustive_path_enumeration(self):
        """A shifted spike against the cheapest of every monotone path."""
        x, y = np.array([0.0, 0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0, 0.0])
        expected = min(sum((x[i] - y[j]) ** 2 for i, j in path) for path in monotone_paths(4, 4))
        self.assertEqual(dtw_exact(x, y), expected)

    def test_random_short_series_against_enumeration(self):
        """200 random pairs with both lengths up to 6, against every monotone path."""
        paths = {}
        for _ in range(200):
            # 1. ARRANGE
            n, m = (int(v) for v in self.rng.integers(1, 7, size=2))
            x, y = self.rng.normal(size=n), self.rng.normal(size=m)
            if (n, m) not in paths:
                paths[(n, m)] = monotone_paths(n, m)

            # 2. ACT
            expected = min(sum((x[i] - y[j]) ** 2 for i, j in path) for path in paths[(n, m)])

            # 3. ASSERT
            self.assertAlmostEqual(dtw_exact(x, y), expected, delta=1e-12)

    def test_symmetry_and_sign(self):
        """Swapping the series leaves the cost unchanged and it is never negative."""
        for _ in range(20):
            x, y = self.rng.normal(size=30), self.rng.normal(size=45)
            self.assertAlmostEqual(dtw_exact(x, y), dtw_exact(y, x), delta=1e-12)
            self.assertGreaterEqual(dtw_exact(x, y), 0.0)

    def test_empty_series(self):
        with self.assertRaises(SampleSizeError):
            dtw_exact([], [1.0])

    def test_warp_path_reproduces_cost(self):
        """The warp path runs corner to corner in unit steps and sums to the cost."""
        x, y = self.rng.normal(size=12), self.rng.normal(size=9)
        cost, path = dtw_path(x, y)
        self.assertEqual(tuple(path[0]), (0, 0))
        self.assertEqual(tuple(path[-1]), (11, 8))
        steps = np.diff(path, axis=0)
        self.assertTrue(np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1))
        self.assertAlmostEqual(sum((x[i] - y[j]) ** 2 for i, j in path), cost, delta=1e-12)


class FastDtwTestCase(SimpleTestCase):
    """Multilevel FastDTW against the exact table."""

    def setUp(self):
        self.rng = np.random.default_rng(31)

    def test_identical_series(self):
        """A series warped onto itself costs nothing at any level."""
        series = self.rng.normal(size=187)
        self.assertEqual(fastdtw(series, series), 0.0)

    def test_base_case_is_exact(self):
        """Series short enough for the base case are solved on the full table."""
        x, y = self.rng.normal(size=3), self.rng.normal(size=3)
        self.assertEqual(fastdtw(x, y, radius=1), dtw_exact(x, y))

    def test_wide_radius_is_exact(self):
        """A radius as wide as the series recovers the exact cost."""
        x, y = self.rng.normal(size=60), self.rng.normal(size=60)
        self.assertEqual(fastdtw(x, y, radius=60), dtw_exact(x, y))

    def test_never_below_exact_on_ecg_length_pairs(self):
        """200 random length-187 pairs: the approximation only searches a subset of paths."""
        # 1. ARRANGE
        pairs = [(self.rng.random(187), self.rng.random(187)) for _ in range(200)]

        # 2. ACT
        exact = np.array([dtw_exact(x, y) for x, y in pairs])
        approx = np.array([fastdtw(x, y, radius=1) for x, y in pairs])

        # 3. ASSERT
        self.assertTrue(np.all(approx >= exact - 1e-12))
        relative_error = np.median((approx - exact) / exact)
        self.assertTrue(math.isfinite(relative_error))
        self.assertGreaterEqual(relative_error, 0.0)

    def test_wider_radius_never_raises_cost(self):
        """
        For every pair on its own, the cost at radius r + 1 is at most the cost
        at radius r and never drops below the exact distance.
        """
        for _ in range(100):
            # 1. ARRANGE
            n, m = (int(v) for v in self.rng.integers(20, 121, size=2))
            x, y = np.cumsum(self.rng.normal(size=n)), np.cumsum(self.rng.normal(size=m))

            # 2. ACT
            costs = [fastdtw(x, y, radius=r) for r in range(5)]
            exact = dtw_exact(x, y)

            # 3. ASSERT
            for narrow, wide in zip(costs, costs[1:]):
                self.assertLessEqual(wide, narrow)
            self.assertGreaterEqual(costs[-1], exact - 1e-9)

    def test_odd_lengths_and_zero_radius(self):
        """Odd lengths drop a trailing sample when coarsened and still give a finite bound."""
        x, y = self.rng.normal(size=37), self.rng.normal(size=53)
        cost = fastdtw(x, y, radius=0)
        self.assertTrue(math.isfinite(cost))
        self.assertGreaterEqual(cost, dtw_exact(x, y) - 1e-12)

    def test_negative_radius(self):
        with self.assertRaises(ValueError):
            fastdtw([1.0], [1.0], radius=-1)


@skipUnless(os.getenv("TSGAN_RUN_SLOW") == "1", "1000 exact DTW tables; set TSGAN_RUN_SLOW=1")
class FastDtwBoundTestCase(SimpleTestCase):
    """FastDTW never undercuts exact DTW over a thousand random pairs."""

    def test_thousand_pairs_up_to_length_200(self):
        """Random lengths up to 200, radius 0 to 3: the approximation is never below exact."""
        rng = np.random.default_rng(37)
        for _ in range(1000):
            # 1. ARRANGE
            n, m = (int(v) for v in rng.integers(2, 201, size=2))
            x, y = rng.random(n), rng.random(m)
            radius = int(rng.integers(0, 4))

            # 2. ACT
            approx, exact = fastdtw(x, y, radius=radius), dtw_exact(x, y)

            # 3. ASSERT
            self.assertGreaterEqual(approx, exact - 1e-12, f"n={n} m={m} radius={radius}")


class EvaluateEpochTestCase(SimpleTestCase):
    """The per-epoch subsample, MMD2 and paired DTW protocol."""

    def setUp(self):
        self.test = np.random.default_rng(4).normal(size=(60, 20))

    def test_identical_sets_aligned(self):
        """Aligned pairing of a set with itself scores DTW zero on every row."""
        record = evaluate_epoch(self.test, self.test.copy(), 1.0, 1.0, np.random.default_rng(0), pairing="aligned")
        self.assertEqual(record.dtw_mean, 0.0)
        self.assertEqual(record.dtw_pairs, 60)
        self.assertEqual(record.mmd_samples, (60, 60))

    def test_sine_protocol_fractions(self):
        """All of the MMD rows and 13% of the DTW rows, one median bandwidth."""
        synth = np.random.default_rng(5).normal(size=(100, 20))
        record = evaluate_epoch(self.test, synth, 1.0, 0.13, np.random.default_rng(1), seed=1)
        self.assertEqual(record.mmd_samples, (60, 100))
        self.assertEqual(record.dtw_pairs, 8)
        self.assertGreaterEqual(record.dtw_mean, 0.0)
        self.assertEqual(len(record.bandwidths), 1)
        self.assertEqual(record.seed, 1)

    def test_seeded_evaluation_repeats(self):
        """The same generator state gives the same record."""
        synth = np.random.default_rng(6).normal(size=(60, 20))
        first = evaluate_epoch(self.test, synth, 0.65, 0.13, np.random.default_rng(9))
        second = evaluate_epoch(self.test, synth, 0.65, 0.13, np.random.default_rng(9))
        self.assertEqual(first, second)

    def test_mmd_subsample_too_small(self):
        """A 40% subsample of three rows is too small for MMD2."""
        with self.assertRaises(SampleSizeError):
            evaluate_epoch(self.test[:3], self.test[:3], 0.4, 1.0, np.random.default_rng(0))

    def test_fraction_outside_range(self):
        """Fractions must lie in (0, 1]."""
        with self.assertRaises(ValueError):
            evaluate_epoch(self.test, self.test, 0.0, 0.5, np.random.default_rng(0))


class DiversityTestCase(SimpleTestCase):
    """Sample diversity and dominant-frequency helpers."""

    def test_mean_pairwise_distance(self):
        self.assertEqual(mean_pairwise_distance(np.array([[0.0, 0.0], [3.0, 4.0]])), 5.0)

    def test_collapsed_batch_scores_zero(self):
        self.assertEqual(mean_pairwise_distance(np.ones((6, 10))), 0.0)

    def test_dominant_bin(self):
        """Three and five cycles per window land in bins 3 and 5."""
        t = np.arange(40) * 2.0 * np.pi / 40
        batch = np.stack([np.sin(3.0 * t), 0.5 * np.sin(5.0 * t + 1.0)])
        np.testing.assert_array_equal(dominant_frequency_bins(batch), [3, 5])
