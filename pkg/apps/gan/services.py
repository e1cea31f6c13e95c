from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from apps.autodiff import ops
from apps.autodiff.services import backward
from apps.autodiff.tensor import Tensor, no_grad
from apps.data.services import batch_iterator
from apps.gan.networks import Discriminator, Generator
from apps.gan.specs import ConvStage, DiscriminatorSpec, EpochReport, GeneratorSpec, TrainConfig, TrainingOutcome
from apps.layers.checkpoints import CheckpointService

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-7
EvalHook = Callable[[int, Generator], Any]


def checkpoint_id(epoch: int) -> str:
    return f"epoch-{epoch:04d}"


class NoiseService:
    @staticmethod
    def sample_noise(m: int, length: int, rng: np.random.Generator) -> np.ndarray:
        """m x T i.i.d. standard normal entries."""
        if m < 0 or length < 1:
            raise ValueError(f"noise needs m >= 0 and T >= 1, got m={m}, T={length}")
        return rng.standard_normal((m, length))


class GenerationService:
    @staticmethod
    def generate(generator: Generator, noise: np.ndarray | Tensor) -> Tensor:
        return generator(ops.as_tensor(noise))

    @staticmethod
    def generate_corpus(generator: Generator, n: int, rng: np.random.Generator, chunk: int = 500) -> np.ndarray:
        """n synthetic series without recording a graph."""
        length = generator.spec.series_length
        parts = [np.empty((0, length))]
        with no_grad():
            for start in range(0, n, chunk):
                noise = NoiseService.sample_noise(min(chunk, n - start), length, rng)
                parts.append(generator(Tensor(noise)).values)
        return np.concatenate(parts, axis=0)

    @staticmethod
    def discriminate(discriminator: Discriminator, series: np.ndarray | Tensor) -> Tensor:
        return discriminator(ops.as_tensor(series))


class LossService:
    """Adversarial losses on probabilities clamped to [1e-7, 1 - 1e-7]."""

    @staticmethod
    def _clamped(probabilities: Tensor) -> Tensor:
        return ops.clip(ops.as_tensor(probabilities), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)

    @staticmethod
    def d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
        """-mean(log D(x)) - mean(log(1 - D(G(z))))."""
        real_term = ops.reduce_mean(ops.log(LossService._clamped(d_real)))
        fake_term = ops.reduce_mean(ops.log(ops.sub(1.0, LossService._clamped(d_fake))))
        return ops.sub(ops.scale(real_term, -1.0), fake_term)

    @staticmethod
    def g_loss(d_fake: Tensor) -> Tensor:
        """Non-saturating generator objective: -mean(log D(G(z)))."""
        return ops.scale(ops.reduce_mean(ops.log(LossService._clamped(d_fake))), -1.0)


@dataclass
class AdamState:
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; missing gradients count as zero."""
    beta1, beta2 = betas
    step = state.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    updated, first, second = {}, {}, {}
    for name, value in params.items():
        grad = grads.get(name)
        grad = np.zeros_like(value) if grad is None else grad
        m = beta1 * state.first_moment.get(name, np.zeros_like(value)) + (1.0 - beta1) * grad
        v = beta2 * state.second_moment.get(name, np.zeros_like(value)) + (1.0 - beta2) * grad * grad
        updated[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        first[name], second[name] = m, v
    return updated, AdamState(step=step, first_moment=first, second_moment=second)


class AdamOptimizer:
    """Applies ``adam_step`` in place to a named set of parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    @property
    def steps(self) -> int:
        return self.state.step

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def step(self) -> None:
        values = {name: tensor.values for name, tensor in self.params.items()}
        grads = {name: tensor.grad for name, tensor in self.params.items()}
        updated, self.state = adam_step(values, grads, self.state, self.lr, self.betas, self.eps)
        for name, tensor in self.params.items():
            tensor.values[...] = updated[name]


class CheckpointedModelService:
    @staticmethod
    def save(path: Path, generator: Generator, discriminator: Discriminator, metadata: Mapping[str, Any]) -> Path:
        tensors = {**generator.parameters(), **discriminator.parameters()}
        meta = {
            **metadata,
            "generator": asdict(generator.spec),
            "discriminator": asdict(discriminator.spec),
        }
        return CheckpointService.save(path, tensors, meta)

    @staticmethod
    def load_generator(path: Path | str) -> Generator:
        checkpoint = CheckpointService.load(path)
        spec = GeneratorSpec(**checkpoint.metadata["generator"])
        generator = Generator.build(spec, np.random.default_rng(0))
        CheckpointService.restore(generator.parameters(), checkpoint)
        return generator

    @staticmethod
    def load_discriminator(path: Path | str) -> Discriminator:
        checkpoint = CheckpointService.load(path)
        meta = dict(checkpoint.metadata["discriminator"])
        meta["conv_stages"] = tuple(ConvStage(**stage) for stage in meta.get("conv_stages", ()))
        discriminator = Discriminator.build(DiscriminatorSpec(**meta), np.random.default_rng(0))
        CheckpointService.restore(discriminator.parameters(), checkpoint)
        return discriminator


class TrainingService:
    @staticmethod
    def _diverged(loss: float, threshold: float) -> bool:
        return not math.isfinite(loss) or abs(loss) > threshold

    @staticmethod
    def _params_finite(params: Iterable[Tensor]) -> bool:
        return all(np.isfinite(tensor.values).all() for tensor in params)

    @staticmethod
    def train(
        g_spec: GeneratorSpec,
        d_spec: DiscriminatorSpec,
        cfg: TrainConfig,
        data: np.ndarray,
        eval_hook: EvalHook | None = None,
        *,
        checkpoint_dir: Path | None = None,
        checkpoint_metadata: Mapping[str, Any] | None = None,
        on_epoch: Callable[[EpochReport], None] | None = None,
        networks: tuple[Generator, Discriminator] | None = None,
    ) -> TrainingOutcome:
        """Alternate k discriminator updates and one generator update per batch.

        The run stops at the first loss whose magnitude exceeds the divergence
        threshold (or that is not finite) and is flagged failed; reports of the
        epochs completed before that are kept. Without an ``eval_hook`` the
        metric columns are NaN.
        """
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("training data must be a non-empty (n, T) batch")
        if data.shape[1] != g_spec.series_length or data.shape[1] != d_spec.series_length:
            raise ValueError(
                f"series length {data.shape[1]} does not match generator T={g_spec.series_length} "
                f"and discriminator T={d_spec.series_length}"
            )
        if cfg.max_train_records is not None:
            data = data[: cfg.max_train_records]

        rng = np.random.default_rng(cfg.seed)
        if networks is None:
            generator, discriminator = Generator.build(g_spec, rng), Discriminator.build(d_spec, rng)
        else:
            generator, discriminator = networks
        d_optimizer = AdamOptimizer(discriminator.parameters(), cfg.learning_rate, cfg.betas, cfg.eps)
        g_optimizer = AdamOptimizer(generator.parameters(), cfg.learning_rate, cfg.betas, cfg.eps)
        length, m = g_spec.series_length, cfg.batch_size

        outcome = TrainingOutcome()
        for epoch in range(1, cfg.epochs + 1):
            d_losses, g_losses = [], []
            for index, batch in enumerate(batch_iterator(data, m, rng)):
                if cfg.max_batches is not None and index >= cfg.max_batches:
                    break
                real = Tensor(batch)
                for _ in range(cfg.d_steps):
                    with no_grad():
                        fake = generator(Tensor(NoiseService.sample_noise(m, length, rng)))
                    d_optimizer.zero_grad()
                    loss = LossService.d_loss(discriminator(real), discriminator(fake.detach()))
                    backward(loss)
                    d_optimizer.step()
                    d_losses.append(loss.item())
                    if TrainingService._diverged(d_losses[-1], cfg.divergence_threshold):
                        outcome.failure_reason = f"discriminator loss {d_losses[-1]!r} at epoch {epoch}"
                        break

                if not outcome.failure_reason:
                    g_optimizer.zero_grad()
                    fake = generator(Tensor(NoiseService.sample_noise(m, length, rng)))
                    loss = LossService.g_loss(discriminator(fake))
                    backward(loss)
                    g_optimizer.step()
                    g_losses.append(loss.item())
                    if TrainingService._diverged(g_losses[-1], cfg.divergence_threshold):
                        outcome.failure_reason = f"generator loss {g_losses[-1]!r} at epoch {epoch}"

                if not outcome.failure_reason and not TrainingService._params_finite(
                    list(generator.parameters().values()) + list(discriminator.parameters().values())
                ):
                    outcome.failure_reason = f"non-finite parameters at epoch {epoch}"
                if outcome.failure_reason:
                    break

            outcome.optimizer_steps = d_optimizer.steps + g_optimizer.steps
            if outcome.failure_reason:
                outcome.failed = True
                logger.warning("[train] run diverged: %s", outcome.failure_reason)
                break

            record = eval_hook(epoch, generator) if eval_hook is not None else None
            report = EpochReport(
                epoch=epoch,
                g_loss=float(np.mean(g_losses)) if g_losses else math.nan,
                d_loss=float(np.mean(d_losses)) if d_losses else math.nan,
                mmd2=record.mmd2 if record is not None else math.nan,
                dtw_mean=record.dtw_mean if record is not None else math.nan,
                checkpoint_id=checkpoint_id(epoch),
            )
            if checkpoint_dir is not None:
                CheckpointedModelService.save(
                    Path(checkpoint_dir) / f"{report.checkpoint_id}.json",
                    generator,
                    discriminator,
                    {**(checkpoint_metadata or {}), "epoch": epoch},
                )
            outcome.reports.append(report)
            logger.info(
                "[train] epoch %d g_loss %.4f d_loss %.4f mmd2 %.5f dtw %.3f",
                epoch,
                report.g_loss,
                report.d_loss,
                report.mmd2,
                report.dtw_mean,
            )
            if on_epoch is not None:
                on_epoch(report)

        outcome.generator, outcome.discriminator = generator, discriminator
        return outcome


@dataclass(frozen=True)
class RunSummary:
    best_mmd: EpochReport | None
    best_dtw: EpochReport | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_mmd": asdict(self.best_mmd) if self.best_mmd else None,
            "best_dtw": asdict(self.best_dtw) if self.best_dtw else None,
        }


def summarize_reports(reports: Sequence[EpochReport], min_mmd: float = 0.0) -> RunSummary:
    """Best-MMD and best-DTW epochs; epochs with MMD at or below ``min_mmd`` are skipped when it is set."""
    finite = [report for report in reports if report.finite]
    mmd_candidates = [report for report in finite if min_mmd <= 0 or report.mmd2 > min_mmd]
    best_mmd = min(mmd_candidates, key=lambda report: report.mmd2, default=None)
    best_dtw = min(finite, key=lambda report: report.dtw_mean, default=None)
    return RunSummary(best_mmd=best_mmd, best_dtw=best_dtw)


@dataclass(frozen=True)
class ShapeTraceRow:
    layer: str
    realized_in: str
    realized_out: str
    printed_in: str | None
    printed_out: str | None

    @property
    def typos(self) -> list[str]:
        notes = []
        if self.printed_in is not None and self.printed_in != self.realized_in:
            notes.append(f"{self.layer} input printed {self.printed_in}, realized {self.realized_in}")
        if self.printed_out is not None and self.printed_out != self.realized_out:
            notes.append(f"{self.layer} output printed {self.printed_out}, realized {self.realized_out}")
        return notes


@dataclass(frozen=True)
class ShapeTraceReport:
    length: int
    rows: tuple[ShapeTraceRow, ...]

    def typos(self) -> list[str]:
        return [note for row in self.rows for note in row.typos]

    def realized(self) -> list[tuple[str, str]]:
        return [(row.layer, row.realized_out) for row in self.rows]

    def render(self) -> str:
        lines = [f"{'layer':<6}{'in':>10}{'out':>10}{'printed in':>12}{'printed out':>13}"]
        for row in self.rows:
            lines.append(
                f"{row.layer:<6}{row.realized_in:>10}{row.realized_out:>10}"
                f"{row.printed_in or '-':>12}{row.printed_out or '-':>13}"
            )
        typos = self.typos()
        lines.append("typos: none" if not typos else "typos:")
        lines.extend(f"  - {note}" for note in typos)
        return "\n".join(lines)


def _render_shape(shape: tuple[int, ...]) -> str:
    return "*".join(str(dim) for dim in shape)


def shape_trace(discriminator: Discriminator, printed: Mapping[str, tuple[str, str]] | None = None) -> ShapeTraceReport:
    """Realized per-layer shapes of a probe forward pass next to the published ones."""
    printed = printed or {}
    trace: list = []
    with no_grad():
        discriminator.features(Tensor(np.zeros((1, discriminator.spec.series_length))), trace)
    rows = tuple(
        ShapeTraceRow(
            layer=layer,
            realized_in=_render_shape(shape_in),
            realized_out=_render_shape(shape_out),
            printed_in=printed.get(layer, (None, None))[0],
            printed_out=printed.get(layer, (None, None))[1],
        )
        for layer, shape_in, shape_out in trace
    )
    return ShapeTraceReport(length=discriminator.spec.series_length, rows=rows)


sample_noise = NoiseService.sample_noise
generate = GenerationService.generate
generate_corpus = GenerationService.generate_corpus
discriminate = GenerationService.discriminate
d_loss = LossService.d_loss
g_loss = LossService.g_loss
train = TrainingService.train
save_models = CheckpointedModelService.save
load_generator = CheckpointedModelService.load_generator
load_discriminator = CheckpointedModelService.load_discriminator
