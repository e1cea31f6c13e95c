from synthesis.management.base import TsganCommand
from synthesis.serializers import AttackConfigSerializer
from synthesis.services import AttackJobService


class Command(TsganCommand):
    help = "Runs the presence-disclosure audit over an r x epsilon grid."
    command_name = "attack"
    serializer_class = AttackConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--train")
        parser.add_argument("--test")
        parser.add_argument("--synth")
        parser.add_argument("--grid", choices=["sine", "ecg"])
        parser.add_argument("--r", type=int, nargs="+", dest="r_values")
        parser.add_argument("--max-pairs", type=int, dest="max_pairs")

    def overrides(self, options):
        return {name: options.get(name) for name in ("train", "test", "synth", "grid", "r_values", "max_pairs")}

    def run(self, serializer, out_dir, options):
        report = AttackJobService.attack(dict(serializer.validated_data), serializer.to_config(), out_dir)
        self.stdout.write(self.style.SUCCESS(f"Mean distance baseline {report.mean_distance:.6g}"))
        for r in sorted({cell.r for cell in report.cells}):
            widest = [cell for cell in report.cells if cell.r == r][-1]
            self.stdout.write(f"  r={r}: recall {widest.recall:.3f} at epsilon fraction {widest.eps_fraction}")
