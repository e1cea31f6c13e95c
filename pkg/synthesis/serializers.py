# synthesis/serializers.py

"""
Validation of the JSON run configs behind each management command.

Every serializer merges a config file with command-line overrides and turns
the result into the domain config objects of the `apps` packages. Field
errors come back as ``field: constraint`` messages.
"""

import math

from rest_framework import serializers

from apps.data.services import SineCorpusConfig
from apps.gan.presets import ATTACK_EPSILON_FRACTIONS, ECG_ATTACK_R, PRESETS, SINE_ATTACK_R
from apps.gan.specs import MINIBATCH_OUTPUT_CHOICES
from apps.privacy.services import DEFAULT_MAX_PAIRS, AttackConfig

# Evaluation fractions per dataset protocol: (mmd fraction, dtw fraction).
EVAL_PROTOCOLS = {"sine": (1.0, 0.13), "ecg": (0.65, 0.13)}
ATTACK_GRIDS = {"sine": SINE_ATTACK_R, "ecg": ECG_ATTACK_R}


def format_errors(errors, prefix=""):
    """Flattens DRF's nested error dict into ``field: constraint`` lines."""
    lines = []
    for field, details in errors.items():
        name = f"{prefix}{field}" if field != "non_field_errors" else (prefix.rstrip(".") or "config")
        if isinstance(details, dict):
            lines.extend(format_errors(details, prefix=f"{name}."))
            continue
        for detail in details:
            if isinstance(detail, dict):
                lines.extend(format_errors(detail, prefix=f"{name}."))
            else:
                lines.append(f"{name}: {detail}")
    return lines


class RangeField(serializers.ListField):
    """A [low, high] pair of floats."""

    def __init__(self, **kwargs):
        super().__init__(child=serializers.FloatField(), min_length=2, max_length=2, **kwargs)


def _check_range(attrs, name):
    low, high = attrs[name]
    if low > high:
        raise serializers.ValidationError({name: f"lower bound {low} exceeds upper bound {high}"})


# ==============================================================================
# DATASET SERIALIZERS
# ==============================================================================

class SineCorpusConfigSerializer(serializers.Serializer):
    n_train = serializers.IntegerField(min_value=0, default=10000)
    n_test = serializers.IntegerField(min_value=0, default=3000)
    length = serializers.IntegerField(min_value=1, default=40)
    amplitude = RangeField(default=[0.1, 0.9])
    frequency = RangeField(default=[2.0, 6.0])
    phase = RangeField(default=[-math.pi, math.pi])
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        for name in ("amplitude", "frequency", "phase"):
            _check_range(attrs, name)
        return attrs

    def to_config(self) -> SineCorpusConfig:
        data = self.validated_data
        return SineCorpusConfig(
            n_train=data["n_train"],
            n_test=data["n_test"],
            length=data["length"],
            amplitude=tuple(data["amplitude"]),
            frequency=tuple(data["frequency"]),
            phase=tuple(data["phase"]),
            seed=data["seed"],
        )


class IngestConfigSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=["kachuee", "raw"], default="kachuee")
    train_csv = serializers.CharField(required=False)
    test_csv = serializers.CharField(required=False)
    signal = serializers.CharField(required=False)
    variant = serializers.ChoiceField(choices=["kachuee", "two-peak-raw"], default="kachuee")
    window_s = serializers.FloatField(min_value=1.0, default=10.0)
    target_hz = serializers.FloatField(min_value=1.0, default=125.0)

    def validate(self, attrs):
        if attrs["mode"] == "kachuee" and not attrs.get("train_csv"):
            raise serializers.ValidationError({"train_csv": "required when mode is kachuee"})
        if attrs["mode"] == "raw" and not attrs.get("signal"):
            raise serializers.ValidationError({"signal": "required when mode is raw"})
        return attrs


# ==============================================================================
# TRAINING SERIALIZERS
# ==============================================================================

class TrainRunConfigSerializer(serializers.Serializer):
    preset = serializers.ChoiceField(choices=list(PRESETS))
    train_csv = serializers.CharField()
    test_csv = serializers.CharField(required=False, allow_null=True, default=None)
    epochs = serializers.IntegerField(min_value=1, required=False)
    batch_size = serializers.IntegerField(min_value=2, required=False)
    learning_rate = serializers.FloatField(default=2e-4)
    betas = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=2, max_length=2, default=[0.9, 0.999])
    eps = serializers.FloatField(default=1e-8)
    d_steps = serializers.IntegerField(min_value=1, max_value=5, default=2)
    seed = serializers.IntegerField(min_value=0, default=0)
    minibatch_outputs = serializers.ChoiceField(choices=list(MINIBATCH_OUTPUT_CHOICES), default=0)
    minibatch_kernel_dim = serializers.IntegerField(min_value=1, default=16)
    max_batches = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    max_train_records = serializers.IntegerField(min_value=2, required=False, allow_null=True, default=None)
    mmd_fraction = serializers.FloatField(required=False)
    dtw_fraction = serializers.FloatField(required=False)
    eval_synth_count = serializers.IntegerField(min_value=2, required=False, allow_null=True, default=None)
    radius = serializers.IntegerField(min_value=0, default=1)

    def validate_learning_rate(self, value):
        if not value > 0:
            raise serializers.ValidationError("must be > 0")
        return value

    def validate_betas(self, value):
        if any(beta >= 1.0 for beta in value):
            raise serializers.ValidationError("each beta must be < 1")
        return value

    def validate(self, attrs):
        preset = PRESETS[attrs["preset"]]
        attrs.setdefault("epochs", preset.epochs)
        attrs.setdefault("batch_size", preset.batch_size)
        attrs.setdefault("mmd_fraction", preset.mmd_fraction)
        attrs.setdefault("dtw_fraction", preset.dtw_fraction)
        for name in ("mmd_fraction", "dtw_fraction"):
            if not 0.0 < attrs[name] <= 1.0:
                raise serializers.ValidationError({name: "must lie in (0, 1]"})
        if attrs["max_train_records"] is not None and attrs["max_train_records"] < attrs["batch_size"]:
            raise serializers.ValidationError({"max_train_records": "must be at least batch_size"})
        return attrs


# ==============================================================================
# SYNTHESIS, EVALUATION AND AUDIT SERIALIZERS
# ==============================================================================

class SynthConfigSerializer(serializers.Serializer):
    checkpoint = serializers.CharField()
    n = serializers.IntegerField(min_value=0)
    length = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    seed = serializers.IntegerField(min_value=0, default=0)


class EvalConfigSerializer(serializers.Serializer):
    real = serializers.CharField()
    synth = serializers.CharField()
    protocol = serializers.ChoiceField(choices=list(EVAL_PROTOCOLS), default="sine")
    mmd_fraction = serializers.FloatField(required=False)
    dtw_fraction = serializers.FloatField(required=False)
    radius = serializers.IntegerField(min_value=0, default=1)
    pairing = serializers.ChoiceField(choices=["independent", "aligned"], default="independent")
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        mmd_fraction, dtw_fraction = EVAL_PROTOCOLS[attrs["protocol"]]
        attrs.setdefault("mmd_fraction", mmd_fraction)
        attrs.setdefault("dtw_fraction", dtw_fraction)
        for name in ("mmd_fraction", "dtw_fraction"):
            if not 0.0 < attrs[name] <= 1.0:
                raise serializers.ValidationError({name: "must lie in (0, 1]"})
        return attrs


class AttackConfigSerializer(serializers.Serializer):
    train = serializers.CharField()
    test = serializers.CharField()
    synth = serializers.CharField()
    grid = serializers.ChoiceField(choices=list(ATTACK_GRIDS), default="sine")
    r_values = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, required=False)
    epsilon_fractions = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), min_length=1, default=list(ATTACK_EPSILON_FRACTIONS)
    )
    max_pairs = serializers.IntegerField(min_value=1, default=DEFAULT_MAX_PAIRS)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        attrs.setdefault("r_values", list(ATTACK_GRIDS[attrs["grid"]]))
        fractions = attrs["epsilon_fractions"]
        if any(not 0.0 < f < 1.0 for f in fractions):
            raise serializers.ValidationError({"epsilon_fractions": "every fraction must lie in (0, 1)"})
        if fractions != sorted(fractions):
            raise serializers.ValidationError({"epsilon_fractions": "must be sorted ascending"})
        return attrs

    def to_config(self) -> AttackConfig:
        data = self.validated_data
        return AttackConfig(
            r_values=tuple(data["r_values"]),
            epsilon_fractions=tuple(data["epsilon_fractions"]),
            seed=data["seed"],
            max_pairs=data["max_pairs"],
        )
