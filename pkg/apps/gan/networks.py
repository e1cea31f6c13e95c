"""Generator and discriminator networks.

Generators read one noise scalar per timestep: (m, T) noise becomes an
(m, T, 1) sequence. The LSTM generator applies a dense 50 -> 1 head at every
timestep; the BiLSTM generator maps the summed final state of its last
BiLSTM layer through a dense 50 -> T head.

CNN discriminators run convolution -> ReLU -> max pooling per stage, flatten,
optionally append minibatch-discrimination features and classify with a
dense sigmoid head. LSTM discriminators classify the final hidden state of
their last LSTM layer the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.autodiff import ops
from apps.autodiff.exceptions import ShapeError
from apps.autodiff.tensor import Tensor, no_grad
from apps.gan.specs import DiscriminatorSpec, GeneratorSpec
from apps.layers.exceptions import GeometryError
from apps.layers.params import Conv1dParams, DenseParams, LstmParams, MinibatchDiscriminationParams
from apps.layers.services import (
    LstmService,
    MinibatchDiscriminationService,
    bilstm_final_state,
    bilstm_sequence,
    conv1d,
    conv_output_length,
    dense,
    lstm_sequence,
    maxpool1d,
    pool_output_length,
)


def _prefixed(prefix: str, params) -> dict[str, Tensor]:
    return {f"{prefix}.{name}": tensor for name, tensor in params.named_tensors().items()}


@dataclass
class Generator:
    spec: GeneratorSpec
    lstm_layers: list[LstmParams]
    bilstm_layers: list[tuple[LstmParams, LstmParams]]
    head: DenseParams

    @classmethod
    def build(cls, spec: GeneratorSpec, rng: np.random.Generator) -> Generator:
        widths = [1] + [spec.hidden] * spec.layers
        if spec.kind == "lstm":
            layers = [LstmParams.initialize(widths[i], widths[i + 1], rng) for i in range(spec.layers)]
            head = DenseParams.initialize(spec.hidden, 1, rng, activation=spec.output_activation)
            return cls(spec, layers, [], head)
        pairs = [
            (LstmParams.initialize(widths[i], widths[i + 1], rng), LstmParams.initialize(widths[i], widths[i + 1], rng))
            for i in range(spec.layers)
        ]
        head = DenseParams.initialize(spec.hidden, spec.series_length, rng, activation=spec.output_activation)
        return cls(spec, [], pairs, head)

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for i, layer in enumerate(self.lstm_layers, start=1):
            named.update(_prefixed(f"generator.lstm{i}", layer))
        for i, (fwd, bwd) in enumerate(self.bilstm_layers, start=1):
            named.update(_prefixed(f"generator.bilstm{i}.fwd", fwd))
            named.update(_prefixed(f"generator.bilstm{i}.bwd", bwd))
        named.update(_prefixed("generator.head", self.head))
        return named

    def __call__(self, noise: Tensor) -> Tensor:
        noise = ops.as_tensor(noise)
        length = self.spec.series_length
        if noise.ndim != 2 or noise.shape[1] != length:
            raise ShapeError("generate", noise.shape, detail=f"noise must be (m, {length})")
        batch = noise.shape[0]
        hidden = ops.reshape(noise, (batch, length, 1))

        if self.spec.kind == "lstm":
            for layer in self.lstm_layers:
                hidden = lstm_sequence(layer, hidden)
            per_step = dense(self.head, ops.reshape(hidden, (batch * length, self.spec.hidden)))
            return ops.reshape(per_step, (batch, length))

        for fwd, bwd in self.bilstm_layers[:-1]:
            hidden = bilstm_sequence(fwd, bwd, hidden)
        fwd, bwd = self.bilstm_layers[-1]
        return dense(self.head, bilstm_final_state(fwd, bwd, hidden))


@dataclass
class Discriminator:
    spec: DiscriminatorSpec
    conv_layers: list[Conv1dParams]
    lstm_layers: list[LstmParams]
    minibatch: MinibatchDiscriminationParams | None
    head: DenseParams

    @staticmethod
    def stage_lengths(spec: DiscriminatorSpec) -> list[tuple[int, int, int]]:
        """(channels, conv length, pool length) per stage from the neuron-count formulas."""
        length, lengths = spec.series_length, []
        for stage in spec.conv_stages:
            conv_len = conv_output_length(length, stage.kernel, stage.stride, stage.padding, stage.mode)
            length = pool_output_length(conv_len, stage.pool_window, stage.pool_stride)
            lengths.append((stage.feature_maps, conv_len, length))
        return lengths

    @classmethod
    def build(cls, spec: DiscriminatorSpec, rng: np.random.Generator) -> Discriminator:
        conv_layers, lstm_layers = [], []
        if spec.kind == "cnn":
            channels = 1
            for stage in spec.conv_stages:
                conv_layers.append(
                    Conv1dParams.initialize(
                        channels,
                        stage.feature_maps,
                        stage.kernel,
                        rng,
                        stride=stage.stride,
                        padding=stage.padding,
                        mode=stage.mode,
                    )
                )
                channels = stage.feature_maps
            maps, _, length = cls.stage_lengths(spec)[-1]
            features = maps * length
        else:
            widths = [1] + [spec.hidden] * spec.lstm_layers
            lstm_layers = [LstmParams.initialize(widths[i], widths[i + 1], rng) for i in range(spec.lstm_layers)]
            features = spec.hidden

        minibatch = None
        head_inputs = features
        if spec.minibatch_outputs:
            minibatch = MinibatchDiscriminationParams.initialize(
                features, spec.minibatch_outputs, spec.minibatch_kernel_dim, rng
            )
            head_inputs += spec.minibatch_outputs
        head = DenseParams.initialize(head_inputs, 1, rng, activation="sigmoid")
        discriminator = cls(spec, conv_layers, lstm_layers, minibatch, head)
        discriminator.verify_geometry()
        return discriminator

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv_layers, start=1):
            named.update(_prefixed(f"discriminator.conv{i}", layer))
        for i, layer in enumerate(self.lstm_layers, start=1):
            named.update(_prefixed(f"discriminator.lstm{i}", layer))
        if self.minibatch is not None:
            named.update(_prefixed("discriminator.minibatch", self.minibatch))
        named.update(_prefixed("discriminator.head", self.head))
        return named

    def features(self, series: Tensor, trace: list[tuple[str, tuple[int, ...], tuple[int, ...]]] | None = None) -> Tensor:
        """Flattened convolution or LSTM features, recording (layer, in, out) shapes into ``trace``."""
        series = ops.as_tensor(series)
        length = self.spec.series_length
        if series.ndim != 2 or series.shape[1] != length:
            raise GeometryError(f"discriminator expects series of length {length}, got shape {series.shape}")
        batch = series.shape[0]

        if self.spec.kind == "lstm":
            hidden = ops.reshape(series, (batch, length, 1))
            for layer in self.lstm_layers:
                states, _ = LstmService.unroll(layer, hidden)
                hidden = LstmService.stack(states)
            return states[-1]

        signal = ops.reshape(series, (batch, 1, length))
        for i, (stage, layer) in enumerate(zip(self.spec.conv_stages, self.conv_layers), start=1):
            convolved = ops.relu(conv1d(layer, signal))
            pooled = maxpool1d(convolved, stage.pool_window, stage.pool_stride)
            if trace is not None:
                trace.append((f"C{i}", signal.shape[1:], convolved.shape[1:]))
                trace.append((f"P{i}", convolved.shape[1:], pooled.shape[1:]))
            signal = pooled
        return ops.reshape(signal, (batch, signal.shape[1] * signal.shape[2]))

    def __call__(self, series: Tensor) -> Tensor:
        """(m, T) -> (m,) probabilities of being real."""
        features = self.features(series)
        if self.minibatch is not None:
            features = MinibatchDiscriminationService.with_features(self.minibatch, features)
        probabilities = dense(self.head, features)
        return ops.reshape(probabilities, (probabilities.shape[0],))

    def verify_geometry(self) -> None:
        """Probe forward pass: realized lengths must equal the formula lengths."""
        if self.spec.kind != "cnn":
            return
        trace: list = []
        with no_grad():
            self.features(Tensor(np.zeros((1, self.spec.series_length))), trace)
        realized = [(trace[2 * i][2], trace[2 * i + 1][2]) for i in range(len(self.conv_layers))]
        expected = [((maps, conv_len), (maps, pool_len)) for maps, conv_len, pool_len in self.stage_lengths(self.spec)]
        if realized != expected:
            raise GeometryError(f"realized stage shapes {realized} differ from formula shapes {expected}")
