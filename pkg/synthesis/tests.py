# synthesis/tests.py

import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.apps import apps as app_registry
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.data.services import detect_r_peaks, load_corpus_csv, write_corpus_csv
from apps.data.tests import FIXTURES, kachuee_like_records
from apps.gan.presets import PRESETS

from .manifests import MANIFEST_NAME, config_hash
from .serializers import AttackConfigSerializer


def read_rows(path):
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


class CommandTestCase(SimpleTestCase):
    """Shared temp directory plus a small sine corpus written by `datagen`."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()

    def small_corpus(self, name="data", n_train=60, n_test=20, seed=0):
        out_dir = self.root / name
        self.call("datagen", n_train=n_train, n_test=n_test, seed=seed, out=str(out_dir))
        return out_dir

    def write_config(self, payload, name="config.json"):
        path = self.root / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    def assertManifest(self, out_dir, command):
        manifest = json.loads((Path(out_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
        self.assertEqual(manifest["command"], command)
        self.assertEqual(manifest["config_hash"], config_hash(manifest["config"]))
        for relative in manifest["outputs"].values():
            self.assertTrue((Path(out_dir) / relative).exists(), relative)
        return manifest


class DatagenCommandTestCase(CommandTestCase):
    """The datagen command writes seeded train and test sine corpora."""

    def test_default_corpus_sizes(self):
        """Default config: 10000 training and 3000 test waves of 40 samples."""
        # 1. ARRANGE
        out_dir = self.root / "default"

        # 2. ACT
        self.call("datagen", out=str(out_dir))

        # 3. ASSERT
        train_rows = read_rows(out_dir / "train.csv")
        test_rows = read_rows(out_dir / "test.csv")
        self.assertEqual(len(train_rows) - 1, 10000)
        self.assertEqual(len(test_rows) - 1, 3000)
        self.assertEqual(len(train_rows[1]), 41)
        self.assertManifest(out_dir, "datagen")

    def test_same_seed_gives_identical_files(self):
        """Two runs with one seed write byte-identical corpora."""
        first = self.small_corpus("first", seed=5)
        second = self.small_corpus("second", seed=5)
        for name in ("train.csv", "test.csv"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_inverted_amplitude_range_is_rejected(self):
        """Config validation errors exit as usage errors and name the field."""
        config = self.write_config({"amplitude": [0.9, 0.1]})
        with self.assertRaises(CommandError) as ctx:
            self.call("datagen", config=config, out=str(self.root / "bad"))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("amplitude", str(ctx.exception))

    def test_malformed_config_file(self):
        """A config that is not JSON is a usage error."""
        path = self.root / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with self.assertRaises(CommandError) as ctx:
            self.call("datagen", config=str(path))
        self.assertEqual(ctx.exception.returncode, 1)


class IngestCommandTestCase(CommandTestCase):
    """The ingest command turns Kachuee records into a two-peak corpus."""

    def test_normal_records_become_two_peak_corpus(self):
        """Abnormal and all-zero records are dropped; the rest keep length 187."""
        # 1. ARRANGE
        rng = np.random.default_rng(2)
        records = kachuee_like_records(10, rng) + kachuee_like_records(3, rng)
        batch = np.vstack([record.samples for record in records] + [np.zeros(187)])
        labels = [0] * 10 + [1] * 3 + [0]
        source = write_corpus_csv(self.root / "mitbih_train.csv", batch, labels)

        # 2. ACT
        self.call("ingest", train_csv=str(source), out=str(self.root / "ecg"))

        # 3. ASSERT
        rows = read_rows(self.root / "ecg" / "train.csv")
        self.assertEqual(len(rows) - 1, 10)
        self.assertTrue(all(len(row) == 188 for row in rows[1:]))
        self.assertManifest(self.root / "ecg", "ingest")

    def test_checked_in_records(self):
        """The checked-in records ingest to one two-peak row per normal record, each with both peaks."""
        # 1. ARRANGE
        source = FIXTURES / "two_peak_records.csv"

        # 2. ACT
        self.call("ingest", train_csv=str(source), out=str(self.root / "fixture"))

        # 3. ASSERT
        corpus, _ = load_corpus_csv(self.root / "fixture" / "train.csv", length=187)
        self.assertEqual(corpus.shape, (11, 187))
        self.assertTrue(all(len(detect_r_peaks(row)) >= 2 for row in corpus))

    def test_missing_input_file(self):
        """A missing Kachuee file exits as a usage error."""
        with self.assertRaises(CommandError) as ctx:
            self.call("ingest", train_csv=str(self.root / "absent.csv"), out=str(self.root / "ecg"))
        self.assertEqual(ctx.exception.returncode, 1)


class TrainCommandTestCase(CommandTestCase):
    """The train command, from a smoke run to the minibatch sweep."""

    def setUp(self):
        super().setUp()
        self.data = self.small_corpus()

    def train(self, name, **options):
        out_dir = self.root / name
        self.call(
            "train",
            preset="lstm-gan",
            train_csv=str(self.data / "train.csv"),
            test_csv=str(self.data / "test.csv"),
            epochs=1,
            max_batches=1,
            out=str(out_dir),
            **options,
        )
        return out_dir

    def test_preset_list(self):
        """The command accepts exactly the seven named presets."""
        self.assertEqual(
            sorted(PRESETS),
            sorted(["lstm-gan", "1cnn-gan", "2cnn-gan", "1cnn-bilstm-gan", "2cnn-bilstm-gan", "4cnn-gan", "4cnn-bilstm-gan"]),
        )

    def test_smoke_run_writes_one_epoch_row(self):
        """One epoch writes its epochs.csv row, checkpoint, summary and manifest."""
        # 1. ARRANGE / 2. ACT
        out_dir = self.train("smoke")

        # 3. ASSERT
        rows = read_rows(out_dir / "epochs.csv")
        self.assertEqual(rows[0], ["epoch", "g_loss", "d_loss", "mmd2", "dtw_mean", "checkpoint_id"])
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1][0], "1")
        self.assertEqual(rows[1][-1], "epoch-0001")
        self.assertTrue((out_dir / "checkpoints" / "epoch-0001.json").exists())
        summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
        self.assertFalse(summary["failed"])
        manifest = self.assertManifest(out_dir, "train")
        self.assertEqual(manifest["status"], "ok")

    def test_rerun_with_same_seed_gives_identical_epoch_csv(self):
        """A rerun with the same seed reproduces the epoch rows and the checkpoint bytes."""
        first = self.train("first", seed=3)
        second = self.train("second", seed=3)
        self.assertEqual((first / "epochs.csv").read_bytes(), (second / "epochs.csv").read_bytes())
        self.assertEqual(
            (first / "checkpoints" / "epoch-0001.json").read_bytes(),
            (second / "checkpoints" / "epoch-0001.json").read_bytes(),
        )

    def test_unknown_preset_is_a_usage_error(self):
        """An unknown preset fails in the parser with exit code 1."""
        with self.assertRaises(CommandError) as ctx:
            self.call("train", "--preset", "5cnn-gan")
        self.assertEqual(ctx.exception.returncode, 1)

    def test_missing_training_file(self):
        """A missing training corpus exits as a usage error."""
        with self.assertRaises(CommandError) as ctx:
            self.call("train", preset="lstm-gan", train_csv=str(self.root / "absent.csv"), out=str(self.root / "run"))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_length_mismatch_is_a_usage_error(self):
        """Sine data fed to an ECG preset is a usage error, not a crash."""
        with self.assertRaises(CommandError) as ctx:
            self.call("train", preset="4cnn-gan", train_csv=str(self.data / "train.csv"), out=str(self.root / "run"))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_shape_trace_for_sine_stack(self):
        """The shape trace prints each realized layer shape for the sine stack."""
        output = self.call("train", preset="2cnn-gan", shape_trace=True)
        for shape in ("10*38", "10*18", "5*16", "5*7"):
            self.assertIn(shape, output)
        self.assertIn("typos: none", output)

    def test_shape_trace_for_ecg_stack_lists_typos(self):
        """The ECG stack's trace lists seven printed inconsistencies."""
        output = self.call("train", preset="4cnn-gan", shape_trace=True)
        self.assertIn("12*3", output)
        typo_lines = [line for line in output.splitlines() if line.startswith("  - ")]
        self.assertEqual(len(typo_lines), 7)

    def test_sweep_writes_one_directory_per_member(self):
        """Eager Celery: every minibatch output count trains in its own directory."""
        self.call(
            "train",
            preset="lstm-gan",
            train_csv=str(self.data / "train.csv"),
            epochs=1,
            max_batches=1,
            sweep=True,
            out=str(self.root / "sweep"),
        )
        for b in (0, 3, 5, 8, 10):
            member = self.root / "sweep" / f"minibatch-{b}"
            manifest = self.assertManifest(member, "train")
            self.assertEqual(manifest["config"]["minibatch_outputs"], b)


class SynthCommandTestCase(CommandTestCase):
    """The synth command samples a corpus from a saved generator checkpoint."""

    def setUp(self):
        super().setUp()
        data = self.small_corpus()
        run = self.root / "run"
        self.call("train", preset="lstm-gan", train_csv=str(data / "train.csv"), epochs=1, max_batches=1, out=str(run))
        self.checkpoint = str(run / "checkpoints" / "epoch-0001.json")

    def test_zero_rows_gives_header_only_file(self):
        """Zero rows still write a header of the checkpoint's length."""
        self.call("synth", checkpoint=self.checkpoint, n=0, out=str(self.root / "empty"))
        rows = read_rows(self.root / "empty" / "synth.csv")
        self.assertEqual(len(rows), 1)
        self.assertEqual(len(rows[0]), 41)

    def test_rows_match_checkpoint_length_and_seed(self):
        """Same checkpoint and seed give the same bytes."""
        self.call("synth", checkpoint=self.checkpoint, n=7, seed=4, out=str(self.root / "a"))
        self.call("synth", checkpoint=self.checkpoint, n=7, seed=4, out=str(self.root / "b"))
        rows = read_rows(self.root / "a" / "synth.csv")
        self.assertEqual(len(rows) - 1, 7)
        self.assertTrue(all(len(row) == 41 for row in rows))
        self.assertEqual((self.root / "a" / "synth.csv").read_bytes(), (self.root / "b" / "synth.csv").read_bytes())
        self.assertManifest(self.root / "a", "synth")

    def test_requested_length_must_match_checkpoint(self):
        """A length the checkpoint cannot produce is a usage error."""
        with self.assertRaises(CommandError) as ctx:
            self.call("synth", checkpoint=self.checkpoint, n=3, length=187, out=str(self.root / "bad"))
        self.assertEqual(ctx.exception.returncode, 1)


class EvalCommandTestCase(CommandTestCase):
    """The eval command scores a synthetic corpus against a real one."""

    def setUp(self):
        super().setUp()
        self.data = self.small_corpus()
        self.test_csv = str(self.data / "test.csv")

    def metrics(self, name):
        return json.loads((self.root / name / "metrics.json").read_text(encoding="utf-8"))

    def test_identical_files_with_aligned_pairing(self):
        """A file scored against itself with aligned pairing has DTW zero."""
        self.call("eval", real=self.test_csv, synth=self.test_csv, pairing="aligned", out=str(self.root / "same"))
        self.assertEqual(self.metrics("same")["dtw_mean"], 0.0)
        rows = read_rows(self.root / "same" / "metrics.csv")
        self.assertEqual(rows[0][:2], ["mmd2", "dtw_mean"])
        self.assertManifest(self.root / "same", "eval")

    def test_sine_protocol_defaults(self):
        """The sine protocol uses all rows for MMD and 13% for DTW."""
        self.call("eval", real=self.test_csv, synth=str(self.data / "train.csv"), out=str(self.root / "sine"))
        metrics = self.metrics("sine")
        self.assertEqual((metrics["mmd_fraction"], metrics["dtw_fraction"]), (1.0, 0.13))
        self.assertEqual(metrics["config"]["protocol"], "sine")

    def test_ecg_protocol_defaults(self):
        """The ECG protocol uses 65% of rows for MMD and 13% for DTW."""
        self.call("eval", real=self.test_csv, synth=str(self.data / "train.csv"), protocol="ecg", out=str(self.root / "ecg"))
        metrics = self.metrics("ecg")
        self.assertEqual((metrics["mmd_fraction"], metrics["dtw_fraction"]), (0.65, 0.13))

    def test_single_row_cannot_be_scored(self):
        """A one-row real set fails at scoring time with exit code 2."""
        one = write_corpus_csv(self.root / "one.csv", np.zeros((1, 40)))
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", real=str(one), synth=self.test_csv, out=str(self.root / "bad"))
        self.assertEqual(ctx.exception.returncode, 2)


class AttackCommandTestCase(CommandTestCase):
    """The attack command runs the presence-disclosure grid."""

    def setUp(self):
        super().setUp()
        self.data = self.small_corpus()
        self.files = {"train": str(self.data / "train.csv"), "test": str(self.data / "test.csv")}

    def test_memorized_training_set_gives_full_recall(self):
        """Scoring the training set as its own synthetic set recalls every member."""
        # 1. ARRANGE / 2. ACT
        self.call("attack", synth=self.files["train"], r_values=[10, 20], out=str(self.root / "attack"), **self.files)

        # 3. ASSERT
        rows = read_rows(self.root / "attack" / "attack.csv")
        self.assertEqual(len(rows) - 1, 2 * 10)
        recall = rows[0].index("recall")
        self.assertTrue(all(float(row[recall]) == 1.0 for row in rows[1:]))
        self.assertManifest(self.root / "attack", "attack")

    def test_grid_defaults(self):
        """Sine and ECG grids fill in their published sample sizes and epsilon fractions."""
        files = {"train": "a.csv", "test": "b.csv", "synth": "c.csv"}
        sine = AttackConfigSerializer(data=files)
        self.assertTrue(sine.is_valid(), sine.errors)
        self.assertEqual(sine.to_config().r_values, (250, 500, 1000, 1500, 2000, 2500, 3000))
        self.assertEqual(sine.to_config().epsilon_fractions, tuple(round(0.05 * i, 2) for i in range(1, 11)))

        ecg = AttackConfigSerializer(data={**files, "grid": "ecg"})
        self.assertTrue(ecg.is_valid(), ecg.errors)
        self.assertEqual(ecg.to_config().r_values, tuple(range(1000, 10001, 1000)))

    def test_infeasible_sample_size(self):
        """Sampling more records than the test set holds is a usage error."""
        with self.assertRaises(CommandError) as ctx:
            self.call("attack", synth=self.files["train"], r_values=[500], out=str(self.root / "bad"), **self.files)
        self.assertEqual(ctx.exception.returncode, 1)


class ProjectSettingsTestCase(SimpleTestCase):
    """The project installs only the apps its commands use."""

    def test_no_auth_or_contenttypes(self):
        """There are no users, permissions or generic relations; DRF runs without an authenticated user."""
        self.assertFalse(app_registry.is_installed("django.contrib.auth"))
        self.assertFalse(app_registry.is_installed("django.contrib.contenttypes"))
        self.assertTrue(app_registry.is_installed("rest_framework"))
        self.assertTrue(app_registry.is_installed("synthesis"))
