"""Network layers built from autodiff primitives.

Every layer takes a leading batch axis: LSTM inputs are (m, T, input),
convolution and pooling inputs (m, channels, W), dense and minibatch
discrimination inputs (m, features). Convolution is cross-correlation (no
kernel flip) with zero padding of P samples on both borders.
"""

from __future__ import annotations

import numpy as np

from apps.autodiff import ops
from apps.autodiff.exceptions import ShapeError
from apps.autodiff.tensor import Tensor
from apps.layers.exceptions import GeometryError
from apps.layers.params import Conv1dParams, DenseParams, LstmParams, MinibatchDiscriminationParams

ACTIVATIONS = {
    "none": lambda x: x,
    "sigmoid": ops.sigmoid,
    "relu": ops.relu,
    "tanh": ops.tanh,
}


def conv_output_length(width: int, kernel: int, stride: int, padding: int, mode: str = "exact") -> int:
    """W_out = (W - K + 2P) / S + 1, refusing remainders unless ``mode="floor"``."""
    span = width - kernel + 2 * padding
    if span < 0:
        raise GeometryError(f"conv1d: kernel does not fit (W={width}, K={kernel}, S={stride}, P={padding})")
    if mode == "exact" and span % stride:
        raise GeometryError(
            f"conv1d: W - K + 2P = {span} is not divisible by S (W={width}, K={kernel}, S={stride}, P={padding})"
        )
    return span // stride + 1


def pool_output_length(length: int, window: int, stride: int) -> int:
    if window < 1 or stride < 1:
        raise GeometryError(f"maxpool1d: window {window} and stride {stride} must be positive")
    if window > length:
        raise GeometryError(f"maxpool1d: window a={window} larger than signal n={length}")
    return (length - window) // stride + 1


class LstmService:
    """LSTM cells with the four gates fused into one projection."""

    @staticmethod
    def fused(p: LstmParams) -> tuple[Tensor, Tensor, Tensor]:
        # Gate order along the fused axis: f, i, o, c.
        wx = ops.concat([ops.transpose(getattr(p, f"w_{gate}")) for gate in "fioc"], axis=1)
        uh = ops.concat([ops.transpose(getattr(p, f"u_{gate}")) for gate in "fioc"], axis=1)
        bias = ops.concat([getattr(p, f"b_{gate}") for gate in "fioc"], axis=0)
        return wx, uh, bias

    @staticmethod
    def _cell(pre_activation: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
        f = ops.sigmoid(ops.select(pre_activation, (slice(None), slice(0, hidden))))
        i = ops.sigmoid(ops.select(pre_activation, (slice(None), slice(hidden, 2 * hidden))))
        o = ops.sigmoid(ops.select(pre_activation, (slice(None), slice(2 * hidden, 3 * hidden))))
        candidate = ops.tanh(ops.select(pre_activation, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = ops.add(ops.mul(f, c_prev), ops.mul(i, candidate))
        h = ops.mul(o, ops.tanh(c))
        return h, c

    @staticmethod
    def _initial_state(state: Tensor | None, batch: int, hidden: int, name: str) -> Tensor:
        if state is None:
            return Tensor(np.zeros((batch, hidden)))
        state = ops.as_tensor(state)
        if state.shape != (batch, hidden):
            raise ShapeError("lstm", (batch, hidden), state.shape, detail=name)
        return state

    @staticmethod
    def step(p: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        """One timestep for a batch: x_t (m, input), h_prev/c_prev (m, hidden)."""
        x_t, h_prev, c_prev = ops.as_tensor(x_t), ops.as_tensor(h_prev), ops.as_tensor(c_prev)
        if x_t.ndim != 2 or x_t.shape[1] != p.input_size:
            raise ShapeError("lstm", x_t.shape, detail=f"x_t must be (m, {p.input_size})")
        batch = x_t.shape[0]
        h_prev = LstmService._initial_state(h_prev, batch, p.hidden_size, "h_prev")
        c_prev = LstmService._initial_state(c_prev, batch, p.hidden_size, "c_prev")
        wx, uh, bias = LstmService.fused(p)
        z = ops.add(ops.add(ops.matmul(x_t, wx), ops.matmul(h_prev, uh)), bias)
        return LstmService._cell(z, c_prev, p.hidden_size)

    @staticmethod
    def unroll(
        p: LstmParams, xs: Tensor, h0: Tensor | None = None, c0: Tensor | None = None
    ) -> tuple[list[Tensor], Tensor]:
        """Hidden states for t = 0..T-1 plus the last cell state."""
        xs = ops.as_tensor(xs)
        if xs.ndim != 3 or xs.shape[2] != p.input_size or xs.shape[1] < 1:
            raise ShapeError("lstm", xs.shape, detail=f"expected (m, T >= 1, {p.input_size})")
        batch, steps, width = xs.shape
        hidden = p.hidden_size
        h = LstmService._initial_state(h0, batch, hidden, "h0")
        c = LstmService._initial_state(c0, batch, hidden, "c0")
        wx, uh, bias = LstmService.fused(p)

        projected = ops.reshape(ops.matmul(ops.reshape(xs, (batch * steps, width)), wx), (batch, steps, 4 * hidden))
        projected = ops.add(projected, bias)
        states = []
        for t in range(steps):
            z = ops.add(ops.select(projected, (slice(None), t)), ops.matmul(h, uh))
            h, c = LstmService._cell(z, c, hidden)
            states.append(h)
        return states, c

    @staticmethod
    def stack(states: list[Tensor]) -> Tensor:
        batch, hidden = states[0].shape
        return ops.concat([ops.reshape(h, (batch, 1, hidden)) for h in states], axis=1)

    @staticmethod
    def sequence(p: LstmParams, xs: Tensor, h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
        """(m, T, input) -> (m, T, hidden), iterating left to right from (h0, c0)."""
        states, _ = LstmService.unroll(p, xs, h0, c0)
        return LstmService.stack(states)


class BiLstmService:
    """Forward and time-reversed LSTMs merged by summation."""

    @staticmethod
    def _check(fwd: LstmParams, bwd: LstmParams) -> None:
        if fwd.hidden_size != bwd.hidden_size or fwd.input_size != bwd.input_size:
            raise ShapeError(
                "bilstm",
                (fwd.hidden_size, fwd.input_size),
                (bwd.hidden_size, bwd.input_size),
                detail="forward and backward LSTMs must share sizes",
            )

    @staticmethod
    def _reversed(xs: Tensor) -> Tensor:
        steps = xs.shape[1]
        return ops.concat([ops.select(xs, (slice(None), slice(t, t + 1))) for t in reversed(range(steps))], axis=1)

    @staticmethod
    def _states(fwd: LstmParams, bwd: LstmParams, xs: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        BiLstmService._check(fwd, bwd)
        xs = ops.as_tensor(xs)
        if xs.ndim != 3:
            raise ShapeError("bilstm", xs.shape, detail="expected (m, T, input)")
        forward_states, _ = LstmService.unroll(fwd, xs)
        backward_states, _ = LstmService.unroll(bwd, BiLstmService._reversed(xs))
        return forward_states, backward_states

    @staticmethod
    def sequence(fwd: LstmParams, bwd: LstmParams, xs: Tensor) -> Tensor:
        forward_states, backward_states = BiLstmService._states(fwd, bwd, xs)
        merged = [ops.add(h_f, h_b) for h_f, h_b in zip(forward_states, reversed(backward_states))]
        return LstmService.stack(merged)

    @staticmethod
    def final_state(fwd: LstmParams, bwd: LstmParams, xs: Tensor) -> Tensor:
        """h_fwd after position T-1 plus h_bwd after position 0 (its last step)."""
        forward_states, backward_states = BiLstmService._states(fwd, bwd, xs)
        return ops.add(forward_states[-1], backward_states[-1])


class ConvolutionService:
    @staticmethod
    def conv1d(p: Conv1dParams, x: Tensor) -> Tensor:
        """(m, C, W) -> (m, F, W_out) as one im2col matmul."""
        x = ops.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != p.in_channels:
            raise ShapeError("conv1d", x.shape, p.filters.shape, detail="input channels must match filters")
        batch, channels, width = x.shape
        kernel = p.kernel_size
        out_width = conv_output_length(width, kernel, p.stride, p.padding, p.mode)

        windows = ops.unfold(ops.pad(x, p.padding, p.padding), kernel, p.stride)
        columns = ops.reshape(ops.transpose(windows, (0, 2, 1, 3)), (batch * out_width, channels * kernel))
        filters = ops.transpose(ops.reshape(p.filters, (p.feature_maps, channels * kernel)))
        out = ops.add(ops.matmul(columns, filters), p.bias)
        return ops.transpose(ops.reshape(out, (batch, out_width, p.feature_maps)), (0, 2, 1))


class PoolingService:
    @staticmethod
    def maxpool1d(x: Tensor, window: int, stride: int) -> Tensor:
        """(m, C, n) -> (m, C, floor((n - a) / b) + 1), each channel independently."""
        x = ops.as_tensor(x)
        pool_output_length(x.shape[-1], window, stride)
        return ops.reduce_max(ops.unfold(x, window, stride), axis=-1)


class MinibatchDiscriminationService:
    @staticmethod
    def features(p: MinibatchDiscriminationParams, features: Tensor) -> Tensor:
        """o(x_i)_b = sum_j exp(-||M_ib - M_jb||_1), self term included."""
        features = ops.as_tensor(features)
        if features.ndim != 2 or features.shape[1] != p.in_features or features.shape[0] < 1:
            raise ShapeError("minibatch_discrimination", features.shape, p.kernel.shape)
        rows = features.shape[0]
        outputs, dim = p.out_features, p.kernel_dim
        m = ops.matmul(features, ops.reshape(p.kernel, (p.in_features, outputs * dim)))

        similarities = []
        for i in range(rows):
            distance = ops.absolute(ops.sub(m, ops.select(m, i)))
            l1 = ops.reduce_sum(ops.reshape(distance, (rows, outputs, dim)), axis=2)
            closeness = ops.reduce_sum(ops.exp(ops.scale(l1, -1.0)), axis=0)
            similarities.append(ops.reshape(closeness, (1, outputs)))
        return ops.concat(similarities, axis=0)

    @staticmethod
    def with_features(p: MinibatchDiscriminationParams, features: Tensor) -> Tensor:
        """Input features followed by the B similarity outputs."""
        features = ops.as_tensor(features)
        return ops.concat([features, MinibatchDiscriminationService.features(p, features)], axis=1)


class DenseService:
    @staticmethod
    def apply(p: DenseParams, x: Tensor) -> Tensor:
        x = ops.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != p.in_features:
            raise ShapeError("dense", x.shape, p.weight.shape)
        return ACTIVATIONS[p.activation](ops.add(ops.matmul(x, ops.transpose(p.weight)), p.bias))


lstm_step = LstmService.step
lstm_sequence = LstmService.sequence
bilstm_sequence = BiLstmService.sequence
bilstm_final_state = BiLstmService.final_state
conv1d = ConvolutionService.conv1d
maxpool1d = PoolingService.maxpool1d
minibatch_discrimination = MinibatchDiscriminationService.features
dense = DenseService.apply
