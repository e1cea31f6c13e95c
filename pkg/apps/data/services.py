from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np
from scipy.signal import find_peaks

from apps.data.exceptions import EmptyRecordError, MalformedRowError

logger = logging.getLogger(__name__)

ECG_LENGTH = 187
R_PEAK_THRESHOLD = 0.9
SegmentVariant = Literal["kachuee", "two-peak-raw"]


@dataclass(frozen=True)
class SineCorpusConfig:
    n_train: int = 10000
    n_test: int = 3000
    length: int = 40
    amplitude: tuple[float, float] = (0.1, 0.9)
    frequency: tuple[float, float] = (2.0, 6.0)
    phase: tuple[float, float] = (-math.pi, math.pi)
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length: must be >= 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("n_train/n_test: must be >= 0")
        for name in ("amplitude", "frequency", "phase"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name}: lower bound {low} exceeds upper bound {high}")


@dataclass(frozen=True)
class SineCorpus:
    train: np.ndarray
    test: np.ndarray
    train_parameters: np.ndarray
    test_parameters: np.ndarray


@dataclass(frozen=True)
class EcgRecord:
    samples: np.ndarray
    label: int = 0

    def __post_init__(self):
        if self.samples.shape != (ECG_LENGTH,):
            raise ValueError(f"ECG record must hold {ECG_LENGTH} samples, got shape {self.samples.shape}")


@dataclass(frozen=True)
class TwoPeakConfig:
    target_length: int = ECG_LENGTH
    min_pad: int = 4


class SineCorpusService:
    """Waves w[t] = A sin(w * t * 2pi / length + phi), t = 0..length-1.

    With this grid an angular frequency w in radians per window gives w full
    cycles over the series, so the dominant DFT bin is round(w).
    """

    @staticmethod
    def _draw(n: int, cfg: SineCorpusConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        amplitude = rng.uniform(*cfg.amplitude, size=n)
        frequency = rng.uniform(*cfg.frequency, size=n)
        phase = rng.uniform(*cfg.phase, size=n)
        grid = np.arange(cfg.length) * (2.0 * np.pi / cfg.length)
        waves = amplitude[:, None] * np.sin(frequency[:, None] * grid[None, :] + phase[:, None])
        return waves, np.column_stack([amplitude, frequency, phase])

    @staticmethod
    def generate_with_parameters(cfg: SineCorpusConfig) -> SineCorpus:
        rng = np.random.default_rng(cfg.seed)
        train, train_parameters = SineCorpusService._draw(cfg.n_train, cfg, rng)
        test, test_parameters = SineCorpusService._draw(cfg.n_test, cfg, rng)
        return SineCorpus(train, test, train_parameters, test_parameters)

    @staticmethod
    def generate(cfg: SineCorpusConfig) -> tuple[np.ndarray, np.ndarray]:
        corpus = SineCorpusService.generate_with_parameters(cfg)
        return corpus.train, corpus.test


class CorpusCsvService:
    """Corpus CSVs: one series per row followed by an integer label.

    Files written here start with a ``t0,...,t{T-1},label`` header; Kachuee
    files have none. Both are accepted on load.
    """

    @staticmethod
    def _parse_row(number: int, cells: list[str], length: int | None) -> tuple[list[float], int]:
        if length is not None and len(cells) != length + 1:
            raise MalformedRowError(number, f"expected {length + 1} columns, found {len(cells)}")
        if len(cells) < 2:
            raise MalformedRowError(number, f"expected at least 2 columns, found {len(cells)}")
        values = []
        for column, cell in enumerate(cells, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise MalformedRowError(number, f"column {column} is not numeric: {cell!r}") from None
        label = values.pop()
        if not math.isfinite(label) or label != int(label):
            raise MalformedRowError(number, f"label {label!r} is not an integer")
        return values, int(label)

    @staticmethod
    def load(path: Path | str, length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(series, labels) from a corpus CSV; rows must all share one length.

        A header fixes the width, so a header-only file loads as shape (0, T).
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"corpus file not found: {path}")
        series, labels = [], []
        with path.open(newline="", encoding="utf-8") as handle:
            for number, cells in enumerate(csv.reader(handle), start=1):
                if not cells:
                    continue
                if number == 1 and cells[0].strip() == "t0":
                    if length is not None and len(cells) != length + 1:
                        raise MalformedRowError(number, f"header has {len(cells) - 1} series columns, expected {length}")
                    length = len(cells) - 1
                    continue
                values, label = CorpusCsvService._parse_row(number, cells, length)
                if length is None:
                    length = len(values)
                elif len(values) != length:
                    raise MalformedRowError(number, f"expected {length + 1} columns, found {len(values) + 1}")
                series.append(values)
                labels.append(label)
        width = length or 0
        return np.array(series, dtype=np.float64).reshape(-1, width), np.array(labels, dtype=np.int64)

    @staticmethod
    def write(path: Path | str, batch: np.ndarray, labels: Sequence[int] | None = None) -> Path:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2:
            raise ValueError(f"corpus must be (n, T), got shape {batch.shape}")
        labels = [0] * batch.shape[0] if labels is None else list(labels)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([f"t{i}" for i in range(batch.shape[1])] + ["label"])
            for row, label in zip(batch, labels):
                writer.writerow([repr(float(value)) for value in row] + [str(int(label))])
        return path

    @staticmethod
    def load_ecg(path: Path | str) -> list[EcgRecord]:
        series, labels = CorpusCsvService.load(path, length=ECG_LENGTH)
        out_of_range = np.flatnonzero((series < 0.0).any(axis=1) | (series > 1.0).any(axis=1))
        if out_of_range.size:
            raise MalformedRowError(int(out_of_range[0]) + 1, "samples outside [0, 1]")
        return [EcgRecord(samples=row, label=int(label)) for row, label in zip(series, labels)]

    @staticmethod
    def load_raw_signal(path: Path | str) -> tuple[np.ndarray, float, float]:
        """Single-column sample stream plus sidecar ``<stem>.json`` holding source_hz and gain."""
        path = Path(path)
        sidecar = path.with_suffix(".json")
        if not sidecar.exists():
            raise FileNotFoundError(f"raw signal sidecar not found: {sidecar}")
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        signal = np.loadtxt(path, dtype=np.float64, ndmin=1)
        return signal, float(meta.get("source_hz", 360.0)), float(meta.get("gain", 200.0))


class EcgPipelineService:
    @staticmethod
    def detect_r_peaks(series: np.ndarray, threshold: float = R_PEAK_THRESHOLD) -> list[int]:
        """Strict local maxima above ``threshold``; a plateau reports its first index."""
        series = np.asarray(series, dtype=np.float64)
        _, properties = find_peaks(series, plateau_size=1)
        starts = properties["left_edges"]
        return [int(index) for index in starts if series[index] > threshold]

    @staticmethod
    def resample_to_length(series: np.ndarray, length: int) -> np.ndarray:
        series = np.asarray(series, dtype=np.float64)
        positions = np.linspace(0.0, series.size - 1, length)
        return np.interp(positions, np.arange(series.size), series)

    @staticmethod
    def resample_linear(signal: np.ndarray, source_hz: float, target_hz: float) -> np.ndarray:
        signal = np.asarray(signal, dtype=np.float64)
        if signal.size == 0:
            return signal
        duration = (signal.size - 1) / source_hz
        count = int(math.floor(duration * target_hz + 1e-9)) + 1
        return np.interp(np.arange(count) / target_hz, np.arange(signal.size) / source_hz, signal)

    @staticmethod
    def split_windows(signal: np.ndarray, hz: float, seconds: float) -> list[np.ndarray]:
        size = int(round(hz * seconds))
        return [signal[start : start + size] for start in range(0, signal.size - size + 1, size)]

    @staticmethod
    def minmax_normalize(series: np.ndarray) -> np.ndarray:
        low, high = float(np.min(series)), float(np.max(series))
        if high == low:
            raise ValueError("cannot min-max normalize a constant series")
        return (series - low) / (high - low)

    @staticmethod
    def median_rr_interval(peaks: Sequence[int]) -> float:
        if len(peaks) < 2:
            raise ValueError("need at least two R-peaks for an RR interval")
        return float(np.median(np.diff(peaks)))

    @staticmethod
    def _fit(segment: np.ndarray, length: int) -> np.ndarray:
        out = np.zeros(length)
        out[: min(length, segment.size)] = segment[:length]
        return out

    @staticmethod
    def segment_window(window: np.ndarray, variant: SegmentVariant = "kachuee") -> list[np.ndarray]:
        """Beats sliced at each R-peak of a normalized window, zero-padded or truncated to 187."""
        peaks = EcgPipelineService.detect_r_peaks(window)
        if len(peaks) < 2:
            return []
        rr = EcgPipelineService.median_rr_interval(peaks)
        beats = []
        if variant == "kachuee":
            span = math.ceil(1.2 * rr)
            for peak in peaks:
                beats.append(EcgPipelineService._fit(window[peak : peak + span], ECG_LENGTH))
        elif variant == "two-peak-raw":
            span = math.ceil(1.25 * rr) + 8
            for peak in peaks:
                if peak < 8:
                    continue
                beats.append(EcgPipelineService._fit(window[peak - 8 : peak - 8 + span], ECG_LENGTH))
        else:
            raise ValueError(f"unknown segmentation variant {variant!r}")
        return beats

    @staticmethod
    def preprocess_raw_windows(
        signal: np.ndarray,
        source_hz: float = 360.0,
        target_hz: float = 125.0,
        window_s: float = 10.0,
        gain: float = 200.0,
        variant: SegmentVariant = "kachuee",
    ) -> list[np.ndarray]:
        """Gain removal, resampling, 10-second windows, normalization and beat slicing."""
        scaled = np.asarray(signal, dtype=np.float64) / gain
        resampled = EcgPipelineService.resample_linear(scaled, source_hz, target_hz)
        beats, skipped = [], 0
        for window in EcgPipelineService.split_windows(resampled, target_hz, window_s):
            if np.ptp(window) == 0:
                skipped += 1
                continue
            segments = EcgPipelineService.segment_window(EcgPipelineService.minmax_normalize(window), variant)
            if not segments:
                skipped += 1
            beats.extend(segments)
        if skipped:
            logger.info("[ingest] skipped %d windows with fewer than two R-peaks", skipped)
        return beats

    @staticmethod
    def make_two_peak(record: EcgRecord, cfg: TwoPeakConfig = TwoPeakConfig()) -> EcgRecord:
        """[core, mean pad, core] resampled to the record length.

        Linear resampling shrinks peaks narrower than the sample spacing, so
        the output sample nearest each copy of the core's maximum is pinned to
        that maximum and the highest R-peak of the core stays one in both halves.
        """
        samples = record.samples
        nonzero = np.flatnonzero(samples)
        if nonzero.size == 0:
            raise EmptyRecordError("record has no non-zero samples")
        core = samples[: nonzero[-1] + 1]
        pad = np.full(max(cfg.min_pad, samples.size - core.size), core.mean())
        joined = np.concatenate([core, pad, core])
        out = EcgPipelineService.resample_to_length(joined, cfg.target_length)
        peak = int(np.argmax(core))
        sources = np.array([peak, core.size + pad.size + peak])
        targets = np.rint(sources * (cfg.target_length - 1) / (joined.size - 1)).astype(np.int64)
        out[targets] = joined[sources]
        if out.min() < 0.0 or out.max() > 1.0:
            out = EcgPipelineService.minmax_normalize(out)
        return EcgRecord(samples=out, label=record.label)


class BatchService:
    @staticmethod
    def batch_iterator(data: np.ndarray, m: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
        """Shuffled non-overlapping m-row batches; the final partial batch is dropped."""
        data = np.asarray(data)
        if m < 1 or m > data.shape[0]:
            raise ValueError(f"batch size {m} must be between 1 and the number of records {data.shape[0]}")
        order = rng.permutation(data.shape[0])

        def batches() -> Iterator[np.ndarray]:
            for k in range(data.shape[0] // m):
                yield data[order[k * m : (k + 1) * m]]

        return batches()


generate_sine_corpus = SineCorpusService.generate
generate_sine_corpus_with_parameters = SineCorpusService.generate_with_parameters
load_corpus_csv = CorpusCsvService.load
write_corpus_csv = CorpusCsvService.write
load_ecg_csv = CorpusCsvService.load_ecg
load_raw_signal = CorpusCsvService.load_raw_signal
detect_r_peaks = EcgPipelineService.detect_r_peaks
make_two_peak = EcgPipelineService.make_two_peak
preprocess_raw_windows = EcgPipelineService.preprocess_raw_windows
resample_linear = EcgPipelineService.resample_linear
split_windows = EcgPipelineService.split_windows
minmax_normalize = EcgPipelineService.minmax_normalize
median_rr_interval = EcgPipelineService.median_rr_interval
batch_iterator = BatchService.batch_iterator
