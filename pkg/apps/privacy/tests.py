import os
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.distance import pdist

from apps.data.services import SineCorpusConfig, generate_sine_corpus
from apps.privacy.exceptions import InfeasibleSampleError
from apps.privacy.services import (
    REPORT_HEADER,
    AttackConfig,
    mean_distance_baseline,
    presence_disclosure,
    recall_curve,
)


class MeanDistanceTestCase(SimpleTestCase):
    """Mean pairwise distance over the pooled train, test and synthetic rows."""

    def setUp(self):
        self.rng = np.random.default_rng(12)

    def test_identical_records(self):
        """Identical rows are all at distance zero."""
        ones = np.ones((4, 6))
        self.assertEqual(mean_distance_baseline(ones, ones, ones, self.rng), 0.0)

    def test_two_records(self):
        """One pair three-four-five apart."""
        a, b = np.zeros((1, 2)), np.array([[3.0, 4.0]])
        self.assertEqual(mean_distance_baseline(a, b, np.empty((0, 2)), self.rng, max_pairs=1), 5.0)

    def test_sampled_mean_is_within_two_percent(self):
        """1000 records: sampled pairs against the exact all-pairs mean."""
        # 1. ARRANGE
        data = self.rng.uniform(size=(1000, 10))
        exact = float(np.mean(pdist(data)))

        # 2. ACT
        sampled = mean_distance_baseline(data[:400], data[400:700], data[700:], self.rng, max_pairs=100_000)

        # 3. ASSERT
        self.assertLess(abs(sampled - exact) / exact, 0.02)

    def test_empty_input(self):
        """Nothing to pair is an error."""
        with self.assertRaises(ValueError):
            mean_distance_baseline(np.empty((0, 3)), np.empty((0, 3)), np.ones((1, 3)), self.rng)


class PresenceDisclosureTestCase(SimpleTestCase):
    """Membership claims from nearest synthetic distances over the r by epsilon grid."""

    def setUp(self):
        rng = np.random.default_rng(40)
        self.train = rng.normal(size=(120, 8))
        self.test = rng.normal(size=(100, 8))
        self.cfg = AttackConfig(r_values=(25, 50, 100), seed=3)

    def test_memorized_training_set_is_fully_recalled(self):
        """Synthetic data equal to the training set recalls every sampled member at every epsilon."""
        report = presence_disclosure(self.train, self.test, self.train.copy(), self.cfg)
        self.assertTrue(all(cell.recall == 1.0 for cell in report.cells))
        self.assertEqual(len(report.cells), 3 * 10)

    def test_distant_synthetic_set_claims_nothing(self):
        """Far-away synthetic data makes no claims, so precision is undefined."""
        report = presence_disclosure(self.train, self.test, self.train + 1e3, self.cfg)
        for cell in report.cells:
            self.assertEqual((cell.tp, cell.fp), (0, 0))
            self.assertIsNone(cell.precision)
            self.assertEqual(cell.recall, 0.0)

    def test_counting_identity(self):
        """Members split into tp and fn, held-out records into fp and tn."""
        synth = np.random.default_rng(8).normal(size=(150, 8))
        for cell in presence_disclosure(self.train, self.test, synth, self.cfg).cells:
            self.assertEqual(cell.tp + cell.fn, cell.r)
            self.assertEqual(cell.fp + cell.tn, cell.r)

    def test_recall_grows_with_epsilon(self):
        """Claims are nested in epsilon, so recall never drops as it widens."""
        synth = self.train[:60] + np.random.default_rng(9).normal(scale=0.5, size=(60, 8))
        report = presence_disclosure(self.train, self.test, synth, self.cfg)
        for r in self.cfg.r_values:
            curve = recall_curve(report, r, self.cfg.epsilon_fractions)
            self.assertEqual(curve, sorted(curve))

    def test_fixed_seed_is_deterministic(self):
        """The same seed samples the same records."""
        synth = np.random.default_rng(10).normal(size=(90, 8))
        first = presence_disclosure(self.train, self.test, synth, self.cfg)
        second = presence_disclosure(self.train, self.test, synth, self.cfg)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_sample_larger_than_test_set(self):
        """Asking for more records than the test set holds is infeasible."""
        with self.assertRaises(InfeasibleSampleError):
            presence_disclosure(self.train, self.test, self.train, AttackConfig(r_values=(101,)))

    def test_independent_synthetic_set_gives_coin_flip_precision(self):
        """Synthetic data unrelated to either set: claims split evenly between train and test."""
        precisions = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            train, test, synth = rng.normal(size=(200, 5)), rng.normal(size=(200, 5)), rng.normal(size=(200, 5))
            cell = presence_disclosure(train, test, synth, AttackConfig(r_values=(100,), epsilon_fractions=(0.5,), seed=seed)).cells[0]
            precisions.append(cell.precision)
        self.assertTrue(0.45 <= np.mean(precisions) <= 0.55)

    def test_rows_leave_undefined_precision_empty(self):
        """Undefined precision is an empty CSV cell and null in JSON."""
        report = presence_disclosure(self.train, self.test, self.train + 1e3, AttackConfig(r_values=(10,), epsilon_fractions=(0.1,)))
        header, row = report.to_rows()
        self.assertEqual(tuple(header), REPORT_HEADER)
        self.assertEqual(row[:6], ["10", "0.1", "0", "0", "10", "10"])
        self.assertEqual(row[6], "")
        self.assertIsNone(report.to_dict()["cells"][0]["precision"])


class AttackConfigTestCase(SimpleTestCase):
    """Validation of the attack grid."""

    def test_fractions_must_be_sorted(self):
        """Epsilon fractions must ascend."""
        with self.assertRaises(ValueError):
            AttackConfig(r_values=(10,), epsilon_fractions=(0.3, 0.1))

    def test_fractions_must_lie_inside_unit_interval(self):
        """Epsilon fractions must lie strictly inside (0, 1)."""
        with self.assertRaises(ValueError):
            AttackConfig(r_values=(10,), epsilon_fractions=(0.5, 1.0))

    def test_sizes_must_be_positive(self):
        """At least one sample size is needed."""
        with self.assertRaises(ValueError):
            AttackConfig(r_values=())


@skipUnless(os.getenv("TSGAN_RUN_SLOW") == "1", "full-size sine corpora; set TSGAN_RUN_SLOW=1")
class SineIndependenceTestCase(SimpleTestCase):
    """A generator that never saw the training set cannot tell members from held-out records."""

    R_VALUES = (500, 1000, 2000, 3000)
    MIN_CLAIMS = 20

    def test_independent_sine_draws_give_coin_flip_precision(self):
        """
        Train, test and synthetic sets are independent draws of the same sine
        distribution. Over five seeds, at least 80% of the cells with 20 or
        more claims keep precision inside [0.4, 0.6].
        """
        # 1. ARRANGE
        precisions = []
        for seed in range(5):
            train, test = generate_sine_corpus(SineCorpusConfig(seed=200 + seed))
            synth, _ = generate_sine_corpus(SineCorpusConfig(n_train=3000, n_test=0, seed=300 + seed))

            # 2. ACT
            report = presence_disclosure(train, test, synth, AttackConfig(r_values=self.R_VALUES, seed=seed))
            precisions.extend(cell.precision for cell in report.cells if cell.tp + cell.fp >= self.MIN_CLAIMS)

        # 3. ASSERT
        self.assertTrue(precisions, "no cell reached the minimum claim count")
        inside = [0.4 <= precision <= 0.6 for precision in precisions]
        self.assertGreaterEqual(sum(inside) / len(inside), 0.8, f"precisions: {precisions}")
