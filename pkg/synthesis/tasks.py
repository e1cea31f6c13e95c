# synthesis/tasks.py

import logging
from pathlib import Path

from celery import shared_task

from apps.gan.specs import MINIBATCH_OUTPUT_CHOICES

from .services import TrainingJobService

logger = logging.getLogger(__name__)


@shared_task(name="synthesis.tasks.train_sweep_member")
def train_sweep_member(options: dict, out_dir: str) -> dict:
    """
    One member of a minibatch-discrimination sweep. Runs in its own worker
    and returns a JSON-safe summary of the run.
    """
    result = TrainingJobService.run(options, Path(out_dir))
    logger.info("[sweep] B=%d finished in %s", options["minibatch_outputs"], out_dir)
    return {
        "minibatch_outputs": options["minibatch_outputs"],
        "out_dir": out_dir,
        "failed": result.outcome.failed,
        "failure_reason": result.outcome.failure_reason,
        "epochs_completed": len(result.outcome.reports),
        **result.summary.to_dict(),
    }


def dispatch_sweep(options: dict, out_dir: Path, choices=MINIBATCH_OUTPUT_CHOICES) -> list[dict]:
    """Fans out one task per minibatch output count and waits for all of them."""
    pending = [
        train_sweep_member.delay({**options, "minibatch_outputs": b}, str(Path(out_dir) / f"minibatch-{b}"))
        for b in choices
    ]
    return [task.get() for task in pending]
