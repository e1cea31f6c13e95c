from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from apps.metrics.exceptions import BandwidthError, SampleSizeError
from apps.metrics.kernels import dtw_table, warp_path

logger = logging.getLogger(__name__)

BandwidthRule = Literal["median-heuristic", "explicit"]
Pairing = Literal["independent", "aligned"]
KERNEL_BLOCK_ROWS = 1024


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian RBF kernel K(x, x') = sum_j exp(-alpha_j * ||x - x'||^2).

    With the median heuristic a single alpha = 1 / (2 * median^2) is taken
    from the pooled pairwise distances, over at most ``median_subsample``
    points.
    """

    bandwidths: tuple[float, ...] = ()
    rule: BandwidthRule = "median-heuristic"
    median_subsample: int = 2000

    def __post_init__(self):
        if self.rule not in ("median-heuristic", "explicit"):
            raise ValueError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == "explicit" and not self.bandwidths:
            raise ValueError("explicit bandwidth rule needs at least one bandwidth")
        if any(not alpha > 0 for alpha in self.bandwidths):
            raise ValueError("bandwidths must be positive")
        if self.median_subsample < 2:
            raise ValueError("median_subsample must be >= 2")


@dataclass(frozen=True)
class MetricsRecord:
    mmd2: float
    dtw_mean: float
    mmd_fraction: float
    dtw_fraction: float
    mmd_samples: tuple[int, int] = (0, 0)
    dtw_pairs: int = 0
    bandwidths: tuple[float, ...] = field(default=())
    seed: int | None = None


def _as_batch(name: str, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"{name} must be an (n, T) batch, got shape {batch.shape}")
    return batch


def _as_series(name: str, series) -> np.ndarray:
    series = np.ascontiguousarray(series, dtype=np.float64).reshape(-1)
    if series.size == 0:
        raise SampleSizeError(f"{name} is an empty series")
    return series


class MmdService:
    @staticmethod
    def median_pairwise_distance(points: np.ndarray) -> float:
        """Median of the Euclidean distances over all pairs i < j."""
        points = _as_batch("points", points)
        if points.shape[0] < 2:
            raise SampleSizeError(f"median distance needs at least 2 points, got {points.shape[0]}")
        median = float(np.median(pdist(points, "euclidean")))
        if median == 0.0:
            raise BandwidthError("median pairwise distance is zero; all points coincide")
        return median

    @staticmethod
    def resolve_bandwidths(
        kernel: KernelConfig, x: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None
    ) -> tuple[float, ...]:
        if kernel.rule == "explicit":
            return kernel.bandwidths
        pooled = np.vstack([x, y])
        if pooled.shape[0] > kernel.median_subsample:
            rng = rng if rng is not None else np.random.default_rng(0)
            pooled = pooled[rng.choice(pooled.shape[0], kernel.median_subsample, replace=False)]
        median = MmdService.median_pairwise_distance(pooled)
        return (1.0 / (2.0 * median * median),)

    @staticmethod
    def _kernel_sum(a: np.ndarray, b: np.ndarray, alphas: Sequence[float], skip_diagonal: bool) -> float:
        total = 0.0
        for start in range(0, a.shape[0], KERNEL_BLOCK_ROWS):
            block = a[start : start + KERNEL_BLOCK_ROWS]
            squared = cdist(block, b, "sqeuclidean")
            values = np.zeros_like(squared)
            for alpha in alphas:
                values += np.exp(-alpha * squared)
            if skip_diagonal:
                rows = np.arange(block.shape[0])
                values[rows, start + rows] = 0.0
            total += float(values.sum())
        return total

    @staticmethod
    def mmd2_unbiased(
        x: np.ndarray,
        y: np.ndarray,
        kernel: KernelConfig | None = None,
        rng: np.random.Generator | None = None,
    ) -> float:
        """Unbiased three-term MMD² estimate; small negative values are returned as is."""
        x, y = _as_batch("X", x), _as_batch("Y", y)
        n, m = x.shape[0], y.shape[0]
        if n < 2 or m < 2:
            raise SampleSizeError(f"MMD² needs at least 2 rows per sample, got n={n}, m={m}")
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"series lengths differ: {x.shape[1]} vs {y.shape[1]}")
        alphas = MmdService.resolve_bandwidths(kernel or KernelConfig(), x, y, rng)
        xx = MmdService._kernel_sum(x, x, alphas, skip_diagonal=True) / (n * (n - 1))
        yy = MmdService._kernel_sum(y, y, alphas, skip_diagonal=True) / (m * (m - 1))
        xy = MmdService._kernel_sum(x, y, alphas, skip_diagonal=False) / (n * m)
        return xx + yy - 2.0 * xy

    @staticmethod
    def mean_pairwise_distance(batch: np.ndarray) -> float:
        """Mean Euclidean distance between rows; low values signal mode collapse."""
        batch = _as_batch("batch", batch)
        if batch.shape[0] < 2:
            raise SampleSizeError("mean pairwise distance needs at least 2 rows")
        return float(np.mean(pdist(batch, "euclidean")))

    @staticmethod
    def dominant_frequency_bins(batch: np.ndarray) -> np.ndarray:
        """Per-row argmax of the real DFT magnitude, DC bin excluded."""
        batch = _as_batch("batch", batch)
        if batch.shape[1] < 3:
            raise SampleSizeError("need at least 3 samples per row for a non-DC bin")
        spectrum = np.abs(np.fft.rfft(batch, axis=1))[:, 1:]
        return np.argmax(spectrum, axis=1) + 1


class DtwService:
    @staticmethod
    def _full_window(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(n, dtype=np.int64), np.full(n, m - 1, dtype=np.int64)

    @staticmethod
    def dtw_exact(x, y) -> float:
        """Full O(NM) dynamic program with f(a, b) = (a - b)^2."""
        x, y = _as_series("x", x), _as_series("y", y)
        table = dtw_table(x, y, *DtwService._full_window(x.size, y.size))
        return float(table[-1, -1])

    @staticmethod
    def dtw_path(x, y) -> tuple[float, np.ndarray]:
        """Exact cost and the optimal warp path as (k, 2) index pairs from (0, 0)."""
        x, y = _as_series("x", x), _as_series("y", y)
        table = dtw_table(x, y, *DtwService._full_window(x.size, y.size))
        return float(table[-1, -1]), warp_path(table)

    @staticmethod
    def _coarsen(series: np.ndarray) -> np.ndarray:
        # Pairwise means; an odd trailing sample is dropped.
        even = series.size - series.size % 2
        return (series[0:even:2] + series[1:even:2]) / 2.0

    @staticmethod
    def _expand_window(path: np.ndarray, n: int, m: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
        """Project a coarse path to full resolution, widened by ``radius`` coarse cells."""
        lo = np.full(n, m, dtype=np.int64)
        hi = np.full(n, -1, dtype=np.int64)
        for i, j in path:
            first_col = max(2 * (j - radius), 0)
            last_col = min(2 * (j + radius) + 1, m - 1)
            rows = np.arange(2 * (i - radius), 2 * (i + radius) + 2)
            rows = rows[(rows >= 0) & (rows < n)]
            lo[rows] = np.minimum(lo[rows], first_col)
            hi[rows] = np.maximum(hi[rows], last_col)
        lo[0] = 0
        for i in range(n):
            if hi[i] < 0:
                lo[i], hi[i] = lo[i - 1], hi[i - 1]
            if i:
                lo[i] = min(lo[i], hi[i - 1])
                hi[i] = max(hi[i], hi[i - 1])
        hi[n - 1] = m - 1
        return lo, hi

    @staticmethod
    def _fastdtw(x: np.ndarray, y: np.ndarray, radius: int) -> tuple[float, np.ndarray]:
        min_size = radius + 2
        if x.size <= min_size or y.size <= min_size:
            table = dtw_table(x, y, *DtwService._full_window(x.size, y.size))
            return float(table[-1, -1]), warp_path(table)
        _, coarse_path = DtwService._fastdtw(DtwService._coarsen(x), DtwService._coarsen(y), radius)
        lo, hi = DtwService._expand_window(coarse_path, x.size, y.size, radius)
        table = dtw_table(x, y, lo, hi)
        return float(table[-1, -1]), warp_path(table)

    @staticmethod
    def fastdtw(x, y, radius: int = 1) -> float:
        """Multilevel approximation: coarsen, solve, project the path and refine within a radius.

        The cost is the best refinement over every radius from 0 to ``radius``,
        so widening the radius never raises it. Each refinement searches a
        subset of the full path set, so the result is never below ``dtw_exact``.
        """
        if radius < 0:
            raise ValueError(f"radius must be >= 0, got {radius}")
        x, y = _as_series("x", x), _as_series("y", y)
        best = math.inf
        for width in range(radius + 1):
            best = min(best, DtwService._fastdtw(x, y, width)[0])
            # Full-table base case; wider radii give the same exact cost.
            if min(x.size, y.size) <= width + 2:
                break
        return best


class EvaluationService:
    @staticmethod
    def _subsample_size(name: str, fraction: float, rows: int) -> int:
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {fraction}")
        return int(round(fraction * rows))

    @staticmethod
    def evaluate_epoch(
        test: np.ndarray,
        synth: np.ndarray,
        mmd_fraction: float,
        dtw_fraction: float,
        rng: np.random.Generator,
        *,
        kernel: KernelConfig | None = None,
        radius: int = 1,
        pairing: Pairing = "independent",
        seed: int | None = None,
    ) -> MetricsRecord:
        """MMD² on a random subsample of both sets and mean FastDTW over position-paired subsamples.

        ``pairing="aligned"`` applies one shuffle to both sets instead of
        independent shuffles; it needs equally sized sets.
        """
        test, synth = _as_batch("test", test), _as_batch("synth", synth)
        mmd_test = EvaluationService._subsample_size("mmd_fraction", mmd_fraction, test.shape[0])
        mmd_synth = EvaluationService._subsample_size("mmd_fraction", mmd_fraction, synth.shape[0])
        if mmd_test < 2 or mmd_synth < 2:
            raise SampleSizeError(f"MMD subsample too small: {mmd_test} test, {mmd_synth} synthetic rows")
        dtw_pairs = min(
            EvaluationService._subsample_size("dtw_fraction", dtw_fraction, test.shape[0]),
            EvaluationService._subsample_size("dtw_fraction", dtw_fraction, synth.shape[0]),
        )
        if dtw_pairs < 1:
            raise SampleSizeError("DTW subsample is empty")
        if pairing == "aligned" and test.shape[0] != synth.shape[0]:
            raise ValueError("aligned pairing needs test and synthetic sets of equal size")

        kernel = kernel or KernelConfig()
        x = test[rng.permutation(test.shape[0])[:mmd_test]]
        y = synth[rng.permutation(synth.shape[0])[:mmd_synth]]
        bandwidths = MmdService.resolve_bandwidths(kernel, x, y, rng)
        mmd2 = MmdService.mmd2_unbiased(x, y, KernelConfig(bandwidths=bandwidths, rule="explicit"))

        test_order = rng.permutation(test.shape[0])
        synth_order = test_order if pairing == "aligned" else rng.permutation(synth.shape[0])
        costs = [
            DtwService.fastdtw(test[a], synth[b], radius)
            for a, b in zip(test_order[:dtw_pairs], synth_order[:dtw_pairs])
        ]
        dtw_mean = math.fsum(costs) / dtw_pairs
        logger.info("[eval] mmd2 %.6f over %d+%d rows, dtw %.4f over %d pairs", mmd2, mmd_test, mmd_synth, dtw_mean, dtw_pairs)
        return MetricsRecord(
            mmd2=mmd2,
            dtw_mean=dtw_mean,
            mmd_fraction=mmd_fraction,
            dtw_fraction=dtw_fraction,
            mmd_samples=(mmd_test, mmd_synth),
            dtw_pairs=dtw_pairs,
            bandwidths=tuple(bandwidths),
            seed=seed,
        )


median_pairwise_distance = MmdService.median_pairwise_distance
mmd2_unbiased = MmdService.mmd2_unbiased
mean_pairwise_distance = MmdService.mean_pairwise_distance
dominant_frequency_bins = MmdService.dominant_frequency_bins
dtw_exact = DtwService.dtw_exact
dtw_path = DtwService.dtw_path
fastdtw = DtwService.fastdtw
evaluate_epoch = EvaluationService.evaluate_epoch
