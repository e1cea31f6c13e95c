from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal

from apps.layers.params import Activation, ConvMode

GeneratorKind = Literal["lstm", "bilstm"]
DiscriminatorKind = Literal["lstm", "cnn"]

MINIBATCH_OUTPUT_CHOICES = (0, 3, 5, 8, 10)


@dataclass(frozen=True)
class ConvStage:
    """One convolution-ReLU-pooling pair."""

    feature_maps: int
    kernel: int
    stride: int
    pool_window: int
    pool_stride: int
    padding: int = 0
    mode: ConvMode = "exact"


@dataclass(frozen=True)
class GeneratorSpec:
    kind: GeneratorKind
    series_length: int
    layers: int = 2
    hidden: int = 50
    output_activation: Activation = "none"

    def __post_init__(self):
        if self.kind not in ("lstm", "bilstm"):
            raise ValueError(f"generator kind must be lstm or bilstm, got {self.kind!r}")
        if self.series_length < 1 or self.layers < 1 or self.hidden < 1:
            raise ValueError("generator series_length, layers and hidden must be positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    kind: DiscriminatorKind
    series_length: int
    conv_stages: tuple[ConvStage, ...] = ()
    minibatch_outputs: int = 0
    minibatch_kernel_dim: int = 16
    lstm_layers: int = 2
    hidden: int = 50

    def __post_init__(self):
        if self.kind not in ("lstm", "cnn"):
            raise ValueError(f"discriminator kind must be lstm or cnn, got {self.kind!r}")
        if self.kind == "cnn" and not self.conv_stages:
            raise ValueError("a cnn discriminator needs at least one convolution stage")
        if self.minibatch_outputs < 0 or self.minibatch_kernel_dim < 1:
            raise ValueError("minibatch_outputs must be >= 0 and minibatch_kernel_dim >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    d_steps: int = 2
    seed: int = 0
    max_batches: int | None = None
    max_train_records: int | None = None
    divergence_threshold: float = 1e3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 1 <= self.d_steps <= 5:
            raise ValueError("d_steps must be between 1 and 5")
        if not all(0 <= beta < 1 for beta in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.max_batches is not None and self.max_batches < 1:
            raise ValueError("max_batches must be >= 1 when set")
        if self.max_train_records is not None and self.max_train_records < self.batch_size:
            raise ValueError("max_train_records must be at least batch_size")


@dataclass
class EpochReport:
    epoch: int
    g_loss: float
    d_loss: float
    mmd2: float
    dtw_mean: float
    checkpoint_id: str

    CSV_HEADER = ("epoch", "g_loss", "d_loss", "mmd2", "dtw_mean", "checkpoint_id")

    def to_row(self) -> list[str]:
        return [str(self.epoch), repr(self.g_loss), repr(self.d_loss), repr(self.mmd2), repr(self.dtw_mean), self.checkpoint_id]

    @property
    def finite(self) -> bool:
        return all(math.isfinite(value) for value in (self.g_loss, self.d_loss, self.mmd2, self.dtw_mean))


@dataclass
class TrainingOutcome:
    reports: list[EpochReport] = field(default_factory=list)
    failed: bool = False
    failure_reason: str = ""
    optimizer_steps: int = 0
    generator: Any = None
    discriminator: Any = None
