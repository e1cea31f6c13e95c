from django.core.management.base import CommandError

from apps.gan.presets import PRESETS
from synthesis.management.base import EXIT_DIVERGED, TsganCommand
from synthesis.serializers import TrainRunConfigSerializer
from synthesis.services import TrainingJobService
from synthesis.tasks import dispatch_sweep


class Command(TsganCommand):
    help = "Trains one preset GAN, or a minibatch-discrimination sweep of it."
    command_name = "train"
    serializer_class = TrainRunConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--preset", choices=list(PRESETS))
        parser.add_argument("--train-csv", dest="train_csv")
        parser.add_argument("--test-csv", dest="test_csv")
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--batches", type=int, dest="max_batches", help="stop each epoch after this many batches")
        parser.add_argument("--minibatch-outputs", type=int, dest="minibatch_outputs")
        parser.add_argument("--sweep", action="store_true", help="train once per minibatch output count")
        parser.add_argument("--shape-trace", action="store_true", dest="shape_trace", help="print layer shapes and exit")

    def overrides(self, options):
        names = ("preset", "train_csv", "test_csv", "epochs", "max_batches", "minibatch_outputs")
        return {name: options.get(name) for name in names}

    def load_config(self, options):
        config = super().load_config(options)
        # The trace needs only the architecture.
        if options.get("shape_trace"):
            config.setdefault("train_csv", "-")
        return config

    def run(self, serializer, out_dir, options):
        data = dict(serializer.validated_data)
        if options.get("shape_trace"):
            report = TrainingJobService.shape_trace(data)
            if report is None:
                self.stdout.write(self.style.WARNING(f"{data['preset']} has no convolution stages"))
            else:
                self.stdout.write(report.render())
            return

        if options.get("sweep"):
            self.stdout.write(self.style.WARNING(f"Dispatching minibatch sweep for {data['preset']}..."))
            members = dispatch_sweep(data, out_dir)
            for member in members:
                style = self.style.ERROR if member["failed"] else self.style.SUCCESS
                self.stdout.write(style(f"B={member['minibatch_outputs']}: {member['epochs_completed']} epochs in {member['out_dir']}"))
            if any(member["failed"] for member in members):
                raise CommandError("at least one sweep member diverged", returncode=EXIT_DIVERGED)
            return

        result = TrainingJobService.run(data, out_dir)
        if result.outcome.failed:
            raise CommandError(f"training diverged: {result.outcome.failure_reason}", returncode=EXIT_DIVERGED)
        best = result.summary.best_mmd
        tail = f", best MMD² {best.mmd2:.6g} at epoch {best.epoch}" if best is not None else ""
        self.stdout.write(self.style.SUCCESS(f"Trained {data['preset']} for {len(result.outcome.reports)} epochs{tail}"))
