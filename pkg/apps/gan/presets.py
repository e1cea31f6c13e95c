"""The seven named GAN architectures and their dataset regimes.

Sine presets use the two-stage geometry on length-40 series (1CNN keeps only
the first stage). ECG presets use the four-stage geometry on length-187
series. The printed layer table for the four-stage stack has inconsistent
channel counts; the stack below follows the monotone sequence 3 -> 5 -> 8 ->
12 and the shape-trace report lists every printed value that disagrees with
the realized one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from apps.gan.specs import ConvStage, DiscriminatorSpec, GeneratorSpec, TrainConfig

SINE_STAGES = (
    ConvStage(feature_maps=10, kernel=3, stride=1, pool_window=3, pool_stride=2),
    ConvStage(feature_maps=5, kernel=3, stride=1, pool_window=3, pool_stride=2),
)

ECG_STAGES = (
    ConvStage(feature_maps=3, kernel=3, stride=1, pool_window=3, pool_stride=1),
    ConvStage(feature_maps=5, kernel=3, stride=1, pool_window=3, pool_stride=2),
    ConvStage(feature_maps=8, kernel=3, stride=2, pool_window=3, pool_stride=2, mode="floor"),
    ConvStage(feature_maps=12, kernel=5, stride=2, pool_window=5, pool_stride=2),
)

# Layer -> (printed input, printed output), as published.
SINE_PRINTED = {
    "C1": ("1*40", "10*38"),
    "P1": ("10*38", "10*18"),
    "C2": ("10*18", "5*16"),
    "P2": ("5*16", "5*7"),
}

ECG_PRINTED = {
    "C1": ("1*187", "3*185"),
    "P1": ("3*185", "3*185"),
    "C2": ("3*185", "5*181"),
    "P2": ("5*181", "5*90"),
    "C3": ("5*90", "8*44"),
    "P3": ("10*44", "8*21"),
    "C4": ("10*21", "12*8"),
    "P4": ("5*8", "12*2"),
}

SINE_ATTACK_R = (250, 500, 1000, 1500, 2000, 2500, 3000)
ECG_ATTACK_R = tuple(range(1000, 10001, 1000))
ATTACK_EPSILON_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass(frozen=True)
class Preset:
    name: str
    dataset: str
    generator_kind: str
    discriminator_kind: str
    series_length: int
    epochs: int
    batch_size: int
    mmd_fraction: float
    dtw_fraction: float
    attack_r_values: tuple[int, ...]
    conv_stages: tuple[ConvStage, ...] = ()
    printed_geometry: dict[str, tuple[str, str]] = field(default_factory=dict)
    output_activation: str = "none"
    min_mmd: float = 0.0

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            kind=self.generator_kind,
            series_length=self.series_length,
            output_activation=self.output_activation,
        )

    def discriminator_spec(self, minibatch_outputs: int = 0, minibatch_kernel_dim: int = 16) -> DiscriminatorSpec:
        return DiscriminatorSpec(
            kind=self.discriminator_kind,
            series_length=self.series_length,
            conv_stages=self.conv_stages,
            minibatch_outputs=minibatch_outputs,
            minibatch_kernel_dim=minibatch_kernel_dim,
        )

    def train_config(self, **overrides) -> TrainConfig:
        options = {"epochs": self.epochs, "batch_size": self.batch_size}
        options.update({key: value for key, value in overrides.items() if value is not None})
        return TrainConfig(**options)


def _sine(name: str, generator_kind: str, discriminator_kind: str, stages: int = 0) -> Preset:
    return Preset(
        name=name,
        dataset="sine",
        generator_kind=generator_kind,
        discriminator_kind=discriminator_kind,
        series_length=40,
        epochs=120,
        batch_size=50,
        mmd_fraction=1.0,
        dtw_fraction=0.13,
        attack_r_values=SINE_ATTACK_R,
        conv_stages=SINE_STAGES[:stages],
        printed_geometry={k: v for k, v in SINE_PRINTED.items() if int(k[1]) <= stages},
        output_activation="tanh",
    )


def _ecg(name: str, generator_kind: str) -> Preset:
    return Preset(
        name=name,
        dataset="ecg",
        generator_kind=generator_kind,
        discriminator_kind="cnn",
        series_length=187,
        epochs=60,
        batch_size=119,
        mmd_fraction=0.65,
        dtw_fraction=0.13,
        attack_r_values=ECG_ATTACK_R,
        conv_stages=ECG_STAGES,
        printed_geometry=dict(ECG_PRINTED),
        min_mmd=0.001,
    )


PRESETS: dict[str, Preset] = {
    preset.name: preset
    for preset in (
        _sine("lstm-gan", "lstm", "lstm"),
        _sine("1cnn-gan", "lstm", "cnn", stages=1),
        _sine("2cnn-gan", "lstm", "cnn", stages=2),
        _sine("1cnn-bilstm-gan", "bilstm", "cnn", stages=1),
        _sine("2cnn-bilstm-gan", "bilstm", "cnn", stages=2),
        _ecg("4cnn-gan", "lstm"),
        _ecg("4cnn-bilstm-gan", "bilstm"),
    )
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown preset {name!r}; expected one of {', '.join(PRESETS)}") from None
