"""Parameter bundles for the network layers.

Weights start i.i.d. uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] with zero
biases; the minibatch-discrimination tensor starts i.i.d. standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Literal

import numpy as np

from apps.autodiff.exceptions import ShapeError
from apps.autodiff.tensor import Tensor
from apps.layers.exceptions import GeometryError

Activation = Literal["none", "sigmoid", "relu", "tanh"]
ConvMode = Literal["exact", "floor"]


def uniform_fan_in(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ParamsMixin:
    """Name every tensor field so bundles can be optimized and checkpointed."""

    def named_tensors(self) -> dict[str, Tensor]:
        return {field.name: getattr(self, field.name) for field in fields(self) if isinstance(getattr(self, field.name), Tensor)}

    def tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())


@dataclass
class LstmParams(ParamsMixin):
    w_f: Tensor
    w_i: Tensor
    w_o: Tensor
    w_c: Tensor
    u_f: Tensor
    u_i: Tensor
    u_o: Tensor
    u_c: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor

    def __post_init__(self):
        hidden, inputs = self.w_f.shape
        for gate in "fioc":
            w, u, b = (getattr(self, f"{kind}_{gate}") for kind in "wub")
            if w.shape != (hidden, inputs):
                raise ShapeError("lstm", self.w_f.shape, w.shape, detail=f"w_{gate}")
            if u.shape != (hidden, hidden):
                raise ShapeError("lstm", (hidden, hidden), u.shape, detail=f"u_{gate}")
            if b.shape != (hidden,):
                raise ShapeError("lstm", (hidden,), b.shape, detail=f"b_{gate}")

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1]

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
        weights = {f"w_{gate}": uniform_fan_in((hidden_size, input_size), input_size, rng) for gate in "fioc"}
        recurrent = {f"u_{gate}": uniform_fan_in((hidden_size, hidden_size), hidden_size, rng) for gate in "fioc"}
        biases = {f"b_{gate}": zeros((hidden_size,)) for gate in "fioc"}
        return cls(**weights, **recurrent, **biases)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> LstmParams:
        return cls(
            **{f"w_{gate}": zeros((hidden_size, input_size)) for gate in "fioc"},
            **{f"u_{gate}": zeros((hidden_size, hidden_size)) for gate in "fioc"},
            **{f"b_{gate}": zeros((hidden_size,)) for gate in "fioc"},
        )


@dataclass
class Conv1dParams(ParamsMixin):
    """Filters are (feature maps, in channels, K); K must be odd."""

    filters: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    mode: ConvMode = "exact"

    def __post_init__(self):
        if self.filters.ndim != 3:
            raise ShapeError("conv1d", self.filters.shape, detail="filters must be (maps, channels, K)")
        maps, _, kernel = self.filters.shape
        if self.bias.shape != (maps,):
            raise ShapeError("conv1d", (maps,), self.bias.shape, detail="bias")
        if kernel % 2 == 0:
            raise GeometryError(f"conv1d: kernel size K={kernel} must be odd")
        if self.stride < 1 or self.padding < 0:
            raise GeometryError(f"conv1d: need S >= 1 and P >= 0, got S={self.stride}, P={self.padding}")
        if self.mode not in ("exact", "floor"):
            raise GeometryError(f"conv1d: unknown mode {self.mode!r}")

    @property
    def feature_maps(self) -> int:
        return self.filters.shape[0]

    @property
    def in_channels(self) -> int:
        return self.filters.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.filters.shape[2]

    @classmethod
    def initialize(
        cls,
        in_channels: int,
        feature_maps: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        stride: int = 1,
        padding: int = 0,
        mode: ConvMode = "exact",
    ) -> Conv1dParams:
        return cls(
            filters=uniform_fan_in((feature_maps, in_channels, kernel_size), in_channels * kernel_size, rng),
            bias=zeros((feature_maps,)),
            stride=stride,
            padding=padding,
            mode=mode,
        )


@dataclass
class MinibatchDiscriminationParams(ParamsMixin):
    """``kernel`` is the A x B x C tensor T."""

    kernel: Tensor

    def __post_init__(self):
        if self.kernel.ndim != 3:
            raise ShapeError("minibatch_discrimination", self.kernel.shape, detail="T must be A x B x C")

    @property
    def in_features(self) -> int:
        return self.kernel.shape[0]

    @property
    def out_features(self) -> int:
        return self.kernel.shape[1]

    @property
    def kernel_dim(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def initialize(cls, in_features: int, out_features: int, kernel_dim: int, rng: np.random.Generator):
        return cls(kernel=Tensor(rng.standard_normal((in_features, out_features, kernel_dim)), requires_grad=True))


@dataclass
class DenseParams(ParamsMixin):
    weight: Tensor
    bias: Tensor
    activation: Activation = "none"

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("dense", self.weight.shape, self.bias.shape)
        if self.activation not in ("none", "sigmoid", "relu", "tanh"):
            raise ValueError(f"dense: unknown activation {self.activation!r}")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(cls, in_features: int, out_features: int, rng: np.random.Generator, activation: Activation = "none"):
        return cls(
            weight=uniform_fan_in((out_features, in_features), in_features, rng),
            bias=zeros((out_features,)),
            activation=activation,
        )
