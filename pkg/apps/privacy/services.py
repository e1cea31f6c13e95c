from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from apps.privacy.exceptions import InfeasibleSampleError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 11))
DEFAULT_MAX_PAIRS = 100_000
DISTANCE_BLOCK_CELLS = 4_000_000
REPORT_HEADER = ("r", "eps_fraction", "tp", "fp", "tn", "fn", "precision", "recall")


@dataclass(frozen=True)
class AttackConfig:
    r_values: tuple[int, ...]
    epsilon_fractions: tuple[float, ...] = DEFAULT_EPSILON_FRACTIONS
    seed: int = 0
    max_pairs: int = DEFAULT_MAX_PAIRS

    def __post_init__(self):
        if not self.r_values or any(r < 1 for r in self.r_values):
            raise ValueError("r_values must be a non-empty list of positive sizes")
        if not self.epsilon_fractions or any(not 0.0 < f < 1.0 for f in self.epsilon_fractions):
            raise ValueError("epsilon_fractions must lie in (0, 1)")
        if list(self.epsilon_fractions) != sorted(self.epsilon_fractions):
            raise ValueError("epsilon_fractions must be sorted ascending")
        if self.max_pairs < 1:
            raise ValueError("max_pairs must be >= 1")


@dataclass(frozen=True)
class AttackCell:
    r: int
    eps_fraction: float
    epsilon: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float | None:
        claims = self.tp + self.fp
        return self.tp / claims if claims else None

    @property
    def recall(self) -> float:
        return self.tp / self.r

    def to_row(self) -> list[str]:
        precision = self.precision
        return [
            str(self.r),
            repr(self.eps_fraction),
            str(self.tp),
            str(self.fp),
            str(self.tn),
            str(self.fn),
            "" if precision is None else repr(precision),
            repr(self.recall),
        ]


@dataclass
class AttackReport:
    mean_distance: float
    max_pairs: int
    seed: int
    cells: list[AttackCell] = field(default_factory=list)

    def cell(self, r: int, eps_fraction: float) -> AttackCell:
        for cell in self.cells:
            if cell.r == r and cell.eps_fraction == eps_fraction:
                return cell
        raise KeyError((r, eps_fraction))

    def to_rows(self) -> list[list[str]]:
        return [list(REPORT_HEADER)] + [cell.to_row() for cell in self.cells]

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_distance": self.mean_distance,
            "max_pairs": self.max_pairs,
            "seed": self.seed,
            "cells": [{**asdict(cell), "precision": cell.precision, "recall": cell.recall} for cell in self.cells],
        }


def _as_batch(name: str, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"{name} must be an (n, T) batch, got shape {batch.shape}")
    return batch


class PresenceDisclosureService:
    @staticmethod
    def mean_distance_baseline(
        train: np.ndarray,
        test: np.ndarray,
        synth: np.ndarray,
        rng: np.random.Generator,
        max_pairs: int = DEFAULT_MAX_PAIRS,
    ) -> float:
        """Mean Euclidean distance between records of the pooled sets.

        Exact when the pool has at most ``max_pairs`` pairs, otherwise the
        mean over ``max_pairs`` uniformly drawn pairs of distinct records.
        """
        pooled = np.vstack([_as_batch("train", train), _as_batch("test", test), _as_batch("synth", synth)])
        count = pooled.shape[0]
        if count < 2:
            raise ValueError("mean distance needs at least 2 records across train, test and synth")
        if count * (count - 1) // 2 <= max_pairs:
            return float(np.mean(pdist(pooled, "euclidean")))
        first = rng.integers(0, count, size=max_pairs)
        second = rng.integers(0, count - 1, size=max_pairs)
        second += second >= first
        total = 0.0
        step = max(1, DISTANCE_BLOCK_CELLS // pooled.shape[1])
        for start in range(0, max_pairs, step):
            a, b = first[start : start + step], second[start : start + step]
            total += float(np.linalg.norm(pooled[a] - pooled[b], axis=1).sum())
        return total / max_pairs

    @staticmethod
    def nearest_synthetic_distance(records: np.ndarray, synth: np.ndarray) -> np.ndarray:
        """Distance from each record to its closest synthetic record, in row blocks."""
        rows = max(1, DISTANCE_BLOCK_CELLS // max(1, synth.shape[0]))
        parts = [cdist(records[start : start + rows], synth, "euclidean").min(axis=1) for start in range(0, records.shape[0], rows)]
        return np.concatenate(parts) if parts else np.empty(0)

    @staticmethod
    def presence_disclosure(train: np.ndarray, test: np.ndarray, synth: np.ndarray, cfg: AttackConfig) -> AttackReport:
        """Claim a sampled record as a training member when a synthetic record lies strictly within epsilon.

        For each r, r records are drawn without replacement from train and r
        from test; nearest distances are computed once and thresholded at
        every epsilon fraction of the mean-distance baseline.
        """
        train, test, synth = _as_batch("train", train), _as_batch("test", test), _as_batch("synth", synth)
        if not train.shape[0] or not test.shape[0] or not synth.shape[0]:
            raise ValueError("train, test and synth must all be non-empty")
        available = min(train.shape[0], test.shape[0])
        for r in cfg.r_values:
            if r > available:
                raise InfeasibleSampleError(r, available)

        rng = np.random.default_rng(cfg.seed)
        baseline = PresenceDisclosureService.mean_distance_baseline(train, test, synth, rng, cfg.max_pairs)
        report = AttackReport(mean_distance=baseline, max_pairs=cfg.max_pairs, seed=cfg.seed)
        for r in cfg.r_values:
            train_rows = train[rng.choice(train.shape[0], size=r, replace=False)]
            test_rows = test[rng.choice(test.shape[0], size=r, replace=False)]
            train_distance = PresenceDisclosureService.nearest_synthetic_distance(train_rows, synth)
            test_distance = PresenceDisclosureService.nearest_synthetic_distance(test_rows, synth)
            for fraction in cfg.epsilon_fractions:
                epsilon = fraction * baseline
                tp = int(np.count_nonzero(train_distance < epsilon))
                fp = int(np.count_nonzero(test_distance < epsilon))
                report.cells.append(AttackCell(r, fraction, epsilon, tp=tp, fp=fp, tn=r - fp, fn=r - tp))
            logger.info("[attack] r=%d recall at max epsilon %.3f", r, report.cells[-1].recall)
        return report


mean_distance_baseline = PresenceDisclosureService.mean_distance_baseline
presence_disclosure = PresenceDisclosureService.presence_disclosure


def recall_curve(report: AttackReport, r: int, fractions: Sequence[float]) -> list[float]:
    return [report.cell(r, fraction).recall for fraction in fractions]
