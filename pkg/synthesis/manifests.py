"""Run manifests: one ``manifest.json`` per artifact directory."""

import hashlib
import json
import logging
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from django.conf import settings
from django.utils import timezone

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def config_hash(config: dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def describe_version() -> str:
    """``git describe``-style version of the working tree, or the configured fallback."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=settings.BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return settings.TSGAN_VERSION
    return result.stdout.strip() or settings.TSGAN_VERSION


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    status: str = "ok"
    started_at: str = field(default_factory=lambda: timezone.now().isoformat())
    finished_at: str | None = None
    version: str = field(default_factory=describe_version)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def add_output(self, name: str, path: Path, root: Path) -> None:
        self.outputs[name] = str(Path(path).relative_to(root))

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "config_hash": self.config_hash}

    def write(self, out_dir: Path) -> Path:
        self.finished_at = timezone.now().isoformat()
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        logger.info("[manifest] %s wrote %d outputs to %s", self.command, len(self.outputs), out_dir)
        return path
