# synthesis/services.py

"""
Job orchestration behind the management commands.

Each job reads its inputs, calls into the `apps` packages, writes its
artifacts into one output directory and finishes with that directory's
manifest.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from apps.data.exceptions import EmptyRecordError
from apps.data.services import (
    SineCorpusConfig,
    generate_sine_corpus,
    load_corpus_csv,
    load_ecg_csv,
    load_raw_signal,
    make_two_peak,
    preprocess_raw_windows,
    write_corpus_csv,
)
from apps.gan.networks import Discriminator
from apps.gan.presets import get_preset
from apps.gan.services import (
    RunSummary,
    ShapeTraceReport,
    generate_corpus,
    load_generator,
    shape_trace,
    summarize_reports,
    train,
)
from apps.gan.specs import EpochReport, TrainingOutcome
from apps.layers.exceptions import GeometryError
from apps.metrics.services import MetricsRecord, evaluate_epoch
from apps.privacy.services import AttackConfig, presence_disclosure

from .manifests import RunManifest

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_rows(path: Path, rows: list[list[str]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        csv.writer(handle, lineterminator="\n").writerows(rows)
    return path


# ==============================================================================
# DATASETS
# ==============================================================================

class CorpusJobService:
    @staticmethod
    def datagen(cfg: SineCorpusConfig, config: dict[str, Any], out_dir: Path) -> RunManifest:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(command="datagen", config=config, seed=cfg.seed)
        train_set, test_set = generate_sine_corpus(cfg)
        manifest.add_output("train", write_corpus_csv(out_dir / "train.csv", train_set), out_dir)
        manifest.add_output("test", write_corpus_csv(out_dir / "test.csv", test_set), out_dir)
        manifest.write(out_dir)
        return manifest

    @staticmethod
    def _two_peak_corpus(path: Path) -> tuple[np.ndarray, int]:
        records = [record for record in load_ecg_csv(path) if record.label == 0]
        converted, skipped = [], 0
        for record in records:
            try:
                converted.append(make_two_peak(record).samples)
            except EmptyRecordError:
                skipped += 1
        logger.info("[ingest] %s: %d normal records converted, %d empty skipped", path.name, len(converted), skipped)
        return np.array(converted).reshape(-1, 187), skipped

    @staticmethod
    def ingest(options: dict[str, Any], out_dir: Path) -> RunManifest:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(command="ingest", config=options)
        if options["mode"] == "kachuee":
            for name in ("train", "test"):
                source = options.get(f"{name}_csv")
                if not source:
                    continue
                corpus, _ = CorpusJobService._two_peak_corpus(Path(source))
                manifest.inputs[name] = source
                manifest.add_output(name, write_corpus_csv(out_dir / f"{name}.csv", corpus), out_dir)
        else:
            signal, source_hz, gain = load_raw_signal(options["signal"])
            beats = preprocess_raw_windows(
                signal,
                source_hz=source_hz,
                target_hz=options["target_hz"],
                window_s=options["window_s"],
                gain=gain,
                variant=options["variant"],
            )
            manifest.inputs["signal"] = options["signal"]
            corpus = np.array(beats).reshape(-1, 187)
            manifest.add_output("beats", write_corpus_csv(out_dir / "beats.csv", corpus), out_dir)
        manifest.write(out_dir)
        return manifest


# ==============================================================================
# TRAINING
# ==============================================================================

@dataclass
class TrainingJobResult:
    out_dir: Path
    outcome: TrainingOutcome
    summary: RunSummary
    manifest: RunManifest


class TrainingJobService:
    @staticmethod
    def build_specs(options: dict[str, Any]):
        preset = get_preset(options["preset"])
        g_spec = preset.generator_spec()
        d_spec = preset.discriminator_spec(options["minibatch_outputs"], options["minibatch_kernel_dim"])
        cfg = preset.train_config(
            epochs=options["epochs"],
            batch_size=options["batch_size"],
            learning_rate=options["learning_rate"],
            betas=tuple(options["betas"]),
            eps=options["eps"],
            d_steps=options["d_steps"],
            seed=options["seed"],
            max_batches=options.get("max_batches"),
            max_train_records=options.get("max_train_records"),
        )
        return preset, g_spec, d_spec, cfg

    @staticmethod
    def shape_trace(options: dict[str, Any]) -> ShapeTraceReport | None:
        preset, _, d_spec, _ = TrainingJobService.build_specs(options)
        if d_spec.kind != "cnn":
            return None
        discriminator = Discriminator.build(d_spec, np.random.default_rng(options["seed"]))
        return shape_trace(discriminator, preset.printed_geometry)

    @staticmethod
    def _eval_hook(test: np.ndarray, options: dict[str, Any]):
        count = options.get("eval_synth_count") or test.shape[0]

        def hook(epoch, generator) -> MetricsRecord:
            rng = np.random.default_rng([options["seed"], epoch])
            synth = generate_corpus(generator, count, rng)
            return evaluate_epoch(
                test,
                synth,
                options["mmd_fraction"],
                options["dtw_fraction"],
                rng,
                radius=options["radius"],
                seed=options["seed"],
            )

        return hook

    @staticmethod
    def run(options: dict[str, Any], out_dir: Path) -> TrainingJobResult:
        """One training run: epochs.csv, checkpoints/, summary.json and the manifest."""
        preset, g_spec, d_spec, cfg = TrainingJobService.build_specs(options)
        train_data, _ = load_corpus_csv(options["train_csv"], length=preset.series_length)
        hook = None
        manifest = RunManifest(command="train", config=options, seed=cfg.seed, inputs={"train": options["train_csv"]})
        if options.get("test_csv"):
            test_data, _ = load_corpus_csv(options["test_csv"], length=preset.series_length)
            hook = TrainingJobService._eval_hook(test_data, options)
            manifest.inputs["test"] = options["test_csv"]

        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_dir = out_dir / "checkpoints"
        checkpoint_dir.mkdir(exist_ok=True)
        epochs_path = out_dir / "epochs.csv"
        with epochs_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(EpochReport.CSV_HEADER)

            def append(report: EpochReport) -> None:
                writer.writerow(report.to_row())
                handle.flush()

            logger.info("[train] %s: %d epochs, batch %d, B=%d", preset.name, cfg.epochs, cfg.batch_size, d_spec.minibatch_outputs)
            outcome = train(
                g_spec,
                d_spec,
                cfg,
                train_data,
                hook,
                checkpoint_dir=checkpoint_dir,
                checkpoint_metadata={"preset": preset.name, "seed": cfg.seed},
                on_epoch=append,
            )

        summary = summarize_reports(outcome.reports, preset.min_mmd)
        summary_path = _write_json(
            out_dir / "summary.json",
            {
                **summary.to_dict(),
                "preset": preset.name,
                "failed": outcome.failed,
                "failure_reason": outcome.failure_reason,
                "optimizer_steps": outcome.optimizer_steps,
                "epochs_completed": len(outcome.reports),
            },
        )
        manifest.add_output("epochs", epochs_path, out_dir)
        manifest.add_output("summary", summary_path, out_dir)
        for report in outcome.reports:
            manifest.add_output(report.checkpoint_id, checkpoint_dir / f"{report.checkpoint_id}.json", out_dir)
        manifest.status = "diverged" if outcome.failed else "ok"
        manifest.write(out_dir)
        return TrainingJobResult(out_dir=out_dir, outcome=outcome, summary=summary, manifest=manifest)


# ==============================================================================
# SYNTHESIS, EVALUATION AND AUDIT
# ==============================================================================

class SynthesisJobService:
    @staticmethod
    def synthesize(options: dict[str, Any], out_dir: Path) -> RunManifest:
        generator = load_generator(options["checkpoint"])
        length = generator.spec.series_length
        if options.get("length") is not None and options["length"] != length:
            raise GeometryError(f"checkpoint generates series of length {length}, requested {options['length']}")
        out_dir.mkdir(parents=True, exist_ok=True)
        batch = generate_corpus(generator, options["n"], np.random.default_rng(options["seed"]))
        manifest = RunManifest(command="synth", config=options, seed=options["seed"], inputs={"checkpoint": options["checkpoint"]})
        manifest.add_output("synth", write_corpus_csv(out_dir / "synth.csv", batch), out_dir)
        manifest.write(out_dir)
        return manifest


class EvaluationJobService:
    @staticmethod
    def evaluate(options: dict[str, Any], out_dir: Path) -> MetricsRecord:
        real, _ = load_corpus_csv(options["real"])
        synth, _ = load_corpus_csv(options["synth"], length=real.shape[1])
        record = evaluate_epoch(
            real,
            synth,
            options["mmd_fraction"],
            options["dtw_fraction"],
            np.random.default_rng(options["seed"]),
            radius=options["radius"],
            pairing=options["pairing"],
            seed=options["seed"],
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            command="eval",
            config=options,
            seed=options["seed"],
            inputs={"real": options["real"], "synth": options["synth"]},
        )
        payload = {**asdict(record), "config": options}
        manifest.add_output("metrics_json", _write_json(out_dir / "metrics.json", payload), out_dir)
        rows = [
            ["mmd2", "dtw_mean", "mmd_fraction", "dtw_fraction", "dtw_pairs"],
            [repr(record.mmd2), repr(record.dtw_mean), repr(record.mmd_fraction), repr(record.dtw_fraction), str(record.dtw_pairs)],
        ]
        manifest.add_output("metrics_csv", _write_rows(out_dir / "metrics.csv", rows), out_dir)
        manifest.write(out_dir)
        return record


class AttackJobService:
    @staticmethod
    def attack(options: dict[str, Any], cfg: AttackConfig, out_dir: Path):
        train_set, _ = load_corpus_csv(options["train"])
        length = train_set.shape[1]
        test_set, _ = load_corpus_csv(options["test"], length=length)
        synth, _ = load_corpus_csv(options["synth"], length=length)
        report = presence_disclosure(train_set, test_set, synth, cfg)

        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            command="attack",
            config=options,
            seed=cfg.seed,
            inputs={"train": options["train"], "test": options["test"], "synth": options["synth"]},
        )
        manifest.add_output("report_csv", _write_rows(out_dir / "attack.csv", report.to_rows()), out_dir)
        manifest.add_output("report_json", _write_json(out_dir / "attack.json", report.to_dict()), out_dir)
        manifest.write(out_dir)
        return report
