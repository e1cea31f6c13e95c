"""Version-tagged JSON parameter checkpoints.

Floats are written by ``json`` with ``repr``, the shortest string that parses
back to the same double, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from apps.autodiff.tensor import Tensor
from apps.layers.exceptions import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tsgan-params"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)


class CheckpointService:
    @staticmethod
    def dumps(tensors: Mapping[str, Tensor | np.ndarray], metadata: Mapping[str, Any] | None = None) -> str:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "metadata": dict(metadata or {}),
            "tensors": {},
        }
        for name, tensor in tensors.items():
            values = tensor.values if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
            payload["tensors"][name] = {"shape": list(values.shape), "values": values.reshape(-1).tolist()}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def loads(text: str) -> Checkpoint:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a parameter checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {payload.get('version')!r}; expected {CHECKPOINT_VERSION}"
            )

        tensors = {}
        for name, entry in payload.get("tensors", {}).items():
            try:
                shape = tuple(int(dim) for dim in entry["shape"])
                values = np.array(entry["values"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"tensor {name!r} is malformed") from exc
            if values.ndim != 1 or values.size != int(np.prod(shape)):
                raise CheckpointError(f"tensor {name!r}: {values.size} values do not fill shape {shape}")
            tensors[name] = values.reshape(shape)
        return Checkpoint(tensors=tensors, metadata=payload.get("metadata", {}))

    @staticmethod
    def save(path: Path | str, tensors: Mapping[str, Tensor | np.ndarray], metadata: Mapping[str, Any] | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(CheckpointService.dumps(tensors, metadata), encoding="utf-8")
        logger.debug("[checkpoint] wrote %s (%d tensors)", path, len(tensors))
        return path

    @staticmethod
    def load(path: Path | str) -> Checkpoint:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise CheckpointError(f"checkpoint not found: {path}") from exc
        return CheckpointService.loads(text)

    @staticmethod
    def restore(target: Mapping[str, Tensor], checkpoint: Checkpoint) -> None:
        """Copy checkpoint values into existing parameter tensors in place."""
        missing = sorted(set(target) - set(checkpoint.tensors))
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {', '.join(missing)}")
        for name, tensor in target.items():
            values = checkpoint.tensors[name]
            if values.shape != tensor.shape:
                raise CheckpointError(f"tensor {name!r}: checkpoint shape {values.shape} != model shape {tensor.shape}")
            tensor.values[...] = values


save_checkpoint = CheckpointService.save
load_checkpoint = CheckpointService.load
