import math
import os
import tempfile
from collections import Counter
from pathlib import Path
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import curve_fit

from apps.data.exceptions import EmptyRecordError, MalformedRowError
from apps.data.services import (
    ECG_LENGTH,
    EcgRecord,
    SineCorpusConfig,
    batch_iterator,
    detect_r_peaks,
    generate_sine_corpus,
    generate_sine_corpus_with_parameters,
    load_corpus_csv,
    load_ecg_csv,
    make_two_peak,
    median_rr_interval,
    minmax_normalize,
    preprocess_raw_windows,
    resample_linear,
    split_windows,
    write_corpus_csv,
)


FIXTURES = Path(__file__).resolve().parent / "fixtures"


def kachuee_like_records(n: int, rng: np.random.Generator, sigma: float = 4.0) -> list[EcgRecord]:
    """Beats sliced just before an R-peak: R a few samples in, the next R one RR interval later, a T wave between."""
    records = []
    for _ in range(n):
        rr = int(rng.integers(90, 141))
        onset = int(rng.integers(2, 6))
        t = np.arange(math.ceil(1.2 * rr) + onset) - onset
        amplitude = rng.uniform(0.9, 0.94)
        beat = (
            0.05
            + amplitude * np.exp(-0.5 * (t / sigma) ** 2)
            + amplitude * np.exp(-0.5 * ((t - rr) / sigma) ** 2)
            + 0.3 * np.exp(-0.5 * ((t - 0.35 * rr) / 8.0) ** 2)
        )
        samples = np.zeros(ECG_LENGTH)
        samples[: beat.size] = beat
        records.append(EcgRecord(samples=samples, label=0))
    return records


class SineCorpusTestCase(SimpleTestCase):
    """Seeded sine-wave corpora with uniformly drawn amplitude, frequency and phase."""

    def setUp(self):
        self.cfg = SineCorpusConfig(n_train=500, n_test=200, seed=4)

    def test_default_sizes(self):
        """10000 training and 3000 test waves of 40 samples by default."""
        train, test = generate_sine_corpus(SineCorpusConfig(seed=1))
        self.assertEqual(train.shape, (10000, 40))
        self.assertEqual(test.shape, (3000, 40))

    def test_amplitude_bounds(self):
        """Drawn amplitudes stay within [0.1, 0.9] and so does every sample."""
        corpus = generate_sine_corpus_with_parameters(self.cfg)
        self.assertLessEqual(np.abs(corpus.train).max(), 0.9)
        self.assertTrue(np.all(corpus.train_parameters[:, 0] >= 0.1))
        self.assertTrue(np.all(corpus.test_parameters[:, 0] <= 0.9))

    def test_dominant_dft_bin_inside_frequency_band(self):
        """Frequencies in [2, 6] put the dominant DFT bin between 2 and 6."""
        train, _ = generate_sine_corpus(self.cfg)
        bins = np.argmax(np.abs(np.fft.rfft(train, axis=1))[:, 1:], axis=1) + 1
        self.assertTrue(np.all((bins >= 2) & (bins <= 6)))

    def test_least_squares_fit_recovers_each_wave(self):
        """Fitting the sine model to each wave recovers its drawn amplitude."""
        corpus = generate_sine_corpus_with_parameters(self.cfg)
        grid = np.arange(40) * (2.0 * np.pi / 40)

        def model(t, a, w, phi):
            return a * np.sin(w * t + phi)

        for wave, params in zip(corpus.train[:20], corpus.train_parameters[:20]):
            fitted, _ = curve_fit(model, grid, wave, p0=params + 0.01, ftol=1e-14, xtol=1e-14)
            self.assertLess(np.abs(model(grid, *fitted) - wave).max(), 1e-6)
            self.assertAlmostEqual(abs(fitted[0]), params[0], places=5)

    def test_seeded_reproducibility(self):
        """The same seed gives the same corpus."""
        first, _ = generate_sine_corpus(self.cfg)
        second, _ = generate_sine_corpus(self.cfg)
        np.testing.assert_array_equal(first, second)

    def test_inverted_range_is_rejected(self):
        """A lower bound above the upper bound names the offending field."""
        with self.assertRaisesMessage(ValueError, "amplitude"):
            SineCorpusConfig(amplitude=(0.9, 0.1))


class CorpusCsvTestCase(SimpleTestCase):
    """Corpus CSV loading and writing, with and without a header row."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _write_raw(self, name, rows):
        path = self.root / name
        path.write_text("\n".join(",".join(str(cell) for cell in row) for row in rows) + "\n", encoding="utf-8")
        return path

    def test_zero_row_loads_as_record(self):
        """An all-zero row is still a valid record."""
        path = self._write_raw("zeros.csv", [[0.0] * 187 + [0.0]])
        (record,) = load_ecg_csv(path)
        np.testing.assert_array_equal(record.samples, np.zeros(187))
        self.assertEqual(record.label, 0)

    def test_short_row_names_the_row(self):
        """The error names the 1-based row that is short."""
        path = self._write_raw("short.csv", [[0.0] * 188, [0.0] * 186])
        with self.assertRaises(MalformedRowError) as ctx:
            load_ecg_csv(path)
        self.assertEqual(ctx.exception.row, 2)
        self.assertIn("row 2", str(ctx.exception))

    def test_non_numeric_cell(self):
        """A text cell in a numeric column is rejected."""
        path = self._write_raw("text.csv", [[0.0] * 5 + ["abc"] + [0.0] * 182])
        with self.assertRaises(MalformedRowError):
            load_ecg_csv(path)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_corpus_csv(self.root / "absent.csv")

    def test_written_corpus_loads_back_exactly(self):
        """Written floats load back bit for bit, labels included, under a t0..label header."""
        batch = np.random.default_rng(2).standard_normal((4, 6)) * 1e-3
        path = write_corpus_csv(self.root / "corpus.csv", batch, labels=[0, 1, 0, 2])
        loaded, labels = load_corpus_csv(path)
        np.testing.assert_array_equal(loaded, batch)
        np.testing.assert_array_equal(labels, [0, 1, 0, 2])
        self.assertTrue(path.read_text(encoding="utf-8").startswith("t0,t1,t2,t3,t4,t5,label\n"))

    def test_header_only_file(self):
        """A header with no rows loads as an empty batch of the requested width."""
        path = write_corpus_csv(self.root / "empty.csv", np.empty((0, 40)))
        loaded, _ = load_corpus_csv(path, length=40)
        self.assertEqual(loaded.shape, (0, 40))

    def test_header_only_file_without_length(self):
        """The header alone fixes the width when no length is requested."""
        # 1. ARRANGE
        path = write_corpus_csv(self.root / "empty.csv", np.empty((0, 40)))

        # 2. ACT
        loaded, labels = load_corpus_csv(path)

        # 3. ASSERT
        self.assertEqual(loaded.shape, (0, 40))
        self.assertEqual(labels.shape, (0,))

    def test_rows_must_match_the_header(self):
        """A row narrower than its header is rejected at that row."""
        path = self._write_raw("mismatch.csv", [["t0", "t1", "t2", "label"], [0.1, 0.2, 0]])
        with self.assertRaises(MalformedRowError) as ctx:
            load_corpus_csv(path)
        self.assertEqual(ctx.exception.row, 2)

    def test_same_corpus_writes_identical_bytes(self):
        """Writing the same corpus twice gives identical files."""
        train, _ = generate_sine_corpus(SineCorpusConfig(n_train=50, n_test=0, seed=9))
        first = write_corpus_csv(self.root / "a.csv", train).read_bytes()
        second = write_corpus_csv(self.root / "b.csv", train).read_bytes()
        self.assertEqual(first, second)


class RPeakTestCase(SimpleTestCase):
    """Thresholded local-maximum R-peak detection."""

    def test_single_spike(self):
        """A lone spike above the threshold is one R-peak."""
        self.assertEqual(detect_r_peaks(np.array([0.0, 1.0, 0.0])), [1])

    def test_constant_series_has_no_peak(self):
        """A flat series has no local maximum."""
        self.assertEqual(detect_r_peaks(np.full(20, 0.95)), [])

    def test_plateau_reports_first_index(self):
        """A flat-topped peak is reported at its first sample."""
        self.assertEqual(detect_r_peaks(np.array([0.0, 0.95, 0.95, 0.95, 0.1])), [1])

    def test_double_spike_spacing(self):
        """Two spikes 37 samples apart give an RR interval of 37."""
        series = np.zeros(100)
        series[[20, 57]] = 1.0
        peaks = detect_r_peaks(series)
        self.assertEqual(peaks, [20, 57])
        self.assertEqual(peaks[1] - peaks[0], 37)

    def test_maxima_below_threshold_are_ignored(self):
        """The threshold is strict: a maximum of exactly 0.9 does not count."""
        self.assertEqual(detect_r_peaks(np.array([0.0, 0.9, 0.0, 0.91, 0.0])), [3])


class TwoPeakTestCase(SimpleTestCase):
    """Conversion of single-beat ECG records into two-peak records."""

    def test_constant_core_stays_constant(self):
        """A constant core and its mean padding give a constant record."""
        samples = np.zeros(ECG_LENGTH)
        samples[:90] = 0.4
        out = make_two_peak(EcgRecord(samples=samples))
        np.testing.assert_array_equal(out.samples, np.full(ECG_LENGTH, 0.4))

    def test_single_peak_core_gives_two_peaks(self):
        """One wide peak in the core becomes one peak in each half."""
        samples = np.zeros(ECG_LENGTH)
        t = np.arange(90)
        samples[:90] = 0.05 + 0.95 * np.exp(-0.5 * ((t - 45) / 4.0) ** 2)
        out = make_two_peak(EcgRecord(samples=samples))
        self.assertEqual(len(detect_r_peaks(out.samples)), 2)

    def test_sharp_peaks_survive_resampling(self):
        """
        Peaks one or two samples wide fall between output samples after
        resampling; both copies must still clear the R-peak threshold.
        """
        for sigma in (1.0, 1.5):
            # 1. ARRANGE
            samples = np.zeros(ECG_LENGTH)
            t = np.arange(60)
            samples[:60] = 0.1 + 0.85 * np.exp(-0.5 * ((t - 5) / sigma) ** 2)

            # 2. ACT
            out = make_two_peak(EcgRecord(samples=samples))

            # 3. ASSERT
            peaks = detect_r_peaks(out.samples)
            self.assertEqual(len(peaks), 2, f"sigma={sigma}")
            self.assertAlmostEqual(out.samples.max(), samples.max(), delta=1e-12)
            self.assertGreater(peaks[1] - peaks[0], ECG_LENGTH // 3)

    def test_three_sample_spike(self):
        """A spike only one sample wide keeps its height in both halves."""
        samples = np.zeros(ECG_LENGTH)
        samples[4:7] = (0.5, 0.95, 0.5)
        samples[7:60] = 0.2
        out = make_two_peak(EcgRecord(samples=samples))
        self.assertEqual(len(detect_r_peaks(out.samples)), 2)
        self.assertEqual(out.samples.max(), 0.95)

    def test_checked_in_records_keep_both_peaks(self):
        """Records on disk with two R-peaks inside each row, some only one or two samples wide."""
        # 1. ARRANGE
        records = load_ecg_csv(FIXTURES / "two_peak_records.csv")
        normal = [record for record in records if record.label == 0]

        # 2. ACT
        outputs = [make_two_peak(record) for record in normal]

        # 3. ASSERT
        self.assertEqual((len(records), len(normal)), (12, 11))
        for record, out in zip(normal, outputs):
            self.assertEqual(len(detect_r_peaks(record.samples)), 2)
            self.assertGreaterEqual(len(detect_r_peaks(out.samples)), 2)
            self.assertGreaterEqual(out.samples.min(), 0.0)
            self.assertLessEqual(out.samples.max(), 1.0)

    def test_all_zero_record_is_rejected(self):
        """An all-zero record has no core to copy."""
        with self.assertRaises(EmptyRecordError):
            make_two_peak(EcgRecord(samples=np.zeros(ECG_LENGTH)))

    def test_fixture_records_keep_two_peaks(self):
        """Every record with an input R-peak comes out with at least two, at wide and narrow peak widths."""
        rng = np.random.default_rng(187)
        for sigma in (4.0, 1.5, 1.0):
            # 1. ARRANGE
            records = kachuee_like_records(200, rng, sigma=sigma)

            # 2. ACT
            outputs = [make_two_peak(record) for record in records]

            # 3. ASSERT
            for record, out in zip(records, outputs):
                self.assertEqual(out.samples.shape, (ECG_LENGTH,))
                self.assertGreaterEqual(out.samples.min(), 0.0)
                self.assertLessEqual(out.samples.max(), 1.0)
                self.assertTrue(detect_r_peaks(record.samples))
                self.assertGreaterEqual(len(detect_r_peaks(out.samples)), 2, f"sigma={sigma}")

    @skipUnless(os.getenv("TSGAN_KACHUEE_DIR"), "set TSGAN_KACHUEE_DIR to the Kachuee CSV directory")
    def test_published_split_counts(self):
        """The Kachuee files give 72471 and 18118 normal two-peak records."""
        root = Path(os.environ["TSGAN_KACHUEE_DIR"])
        for name, expected in (("mitbih_train.csv", 72471), ("mitbih_test.csv", 18118)):
            normal = [record for record in load_ecg_csv(root / name) if record.label == 0]
            two_peak = [make_two_peak(record) for record in normal]
            self.assertEqual(len(two_peak), expected)


class RawWindowTestCase(SimpleTestCase):
    """Raw-signal preprocessing: resample, window, normalize and slice at R-peaks."""

    def _spike_train(self, seconds=20, hz=360.0, period=300, sigma=10.0, offset=150):
        t = np.arange(int(seconds * hz))
        signal = np.zeros(t.size)
        for center in range(offset, t.size, period):
            signal += np.exp(-0.5 * ((t - center) / sigma) ** 2)
        return 200.0 * signal

    def test_constant_signal_emits_nothing(self):
        """A flat signal has no R-peaks and so no beats."""
        self.assertEqual(preprocess_raw_windows(np.full(3600 * 3, 50.0)), [])

    def test_spike_train_rr_interval(self):
        """1.2 Hz beats at 125 Hz: RR of 104 samples and slices of 125."""
        resampled = resample_linear(self._spike_train() / 200.0, 360.0, 125.0)
        window = minmax_normalize(split_windows(resampled, 125.0, 10.0)[0])
        rr = median_rr_interval(detect_r_peaks(window))
        self.assertEqual(rr, 104.0)
        self.assertEqual(math.ceil(1.2 * rr), 125)

    def test_spike_train_beats(self):
        """Every beat starts at its R-peak and is zero after the 1.2 RR slice."""
        beats = preprocess_raw_windows(self._spike_train())
        self.assertGreater(len(beats), 20)
        for beat in beats:
            self.assertEqual(beat.shape, (ECG_LENGTH,))
            self.assertTrue(np.all(beat[125:] == 0.0))
            self.assertGreater(beat[0], 0.9)

    def test_raw_variant_starts_before_the_peak(self):
        """The raw variant keeps a short lead-in before each R-peak."""
        beats = preprocess_raw_windows(self._spike_train(), variant="two-peak-raw")
        self.assertTrue(beats)
        for beat in beats:
            self.assertEqual(int(np.argmax(beat[:20])), 8)
            self.assertTrue(np.all(beat[math.ceil(1.25 * 104) + 8 :] == 0.0))

    def test_windows_are_normalized(self):
        """Each 10-second window is min-max scaled to [0, 1]."""
        signal = np.random.default_rng(3).normal(size=125 * 35)
        for window in split_windows(signal, 125.0, 10.0):
            normalized = minmax_normalize(window)
            self.assertEqual(normalized.min(), 0.0)
            self.assertEqual(normalized.max(), 1.0)

    def test_resampled_length(self):
        """Ten seconds at 360 Hz resample to 1250 samples at 125 Hz."""
        self.assertEqual(resample_linear(np.zeros(3600), 360.0, 125.0).size, 1250)


class BatchIteratorTestCase(SimpleTestCase):
    """Shuffled fixed-size minibatches that drop the remainder."""

    def test_even_split(self):
        """Two batches of 50 cover all 100 rows once."""
        batches = list(batch_iterator(np.arange(100.0).reshape(100, 1), 50, np.random.default_rng(0)))
        self.assertEqual(len(batches), 2)
        self.assertEqual(sorted(np.concatenate(batches).ravel().tolist()), list(range(100)))

    def test_remainder_is_dropped(self):
        """Rows that do not fill a batch are left out."""
        data = np.zeros((119 * 3 + 5, 2))
        batches = list(batch_iterator(data, 119, np.random.default_rng(0)))
        self.assertEqual(len(batches), 3)
        self.assertTrue(all(batch.shape == (119, 2) for batch in batches))

    def test_rows_are_a_sub_multiset(self):
        """Batches only contain rows of the data, each at most as often as it appears."""
        data = np.random.default_rng(1).integers(0, 5, size=(53, 3)).astype(float)
        rows = [tuple(row) for batch in batch_iterator(data, 10, np.random.default_rng(2)) for row in batch]
        self.assertEqual(len(rows), 50)
        self.assertFalse(Counter(rows) - Counter(tuple(row) for row in data))

    def test_batch_larger_than_data(self):
        """A batch larger than the data is an error."""
        with self.assertRaises(ValueError):
            batch_iterator(np.zeros((3, 2)), 4, np.random.default_rng(0))
