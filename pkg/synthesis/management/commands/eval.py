import math

from synthesis.management.base import TsganCommand
from synthesis.serializers import EvalConfigSerializer
from synthesis.services import EvaluationJobService


class Command(TsganCommand):
    help = "Scores a synthetic corpus against a real one with MMD² and mean FastDTW."
    command_name = "eval"
    serializer_class = EvalConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--real")
        parser.add_argument("--synth")
        parser.add_argument("--protocol", choices=["sine", "ecg"])
        parser.add_argument("--mmd-fraction", type=float, dest="mmd_fraction")
        parser.add_argument("--dtw-fraction", type=float, dest="dtw_fraction")
        parser.add_argument("--radius", type=int)
        parser.add_argument("--pairing", choices=["independent", "aligned"])

    def overrides(self, options):
        names = ("real", "synth", "protocol", "mmd_fraction", "dtw_fraction", "radius", "pairing")
        return {name: options.get(name) for name in names}

    def run(self, serializer, out_dir, options):
        record = EvaluationJobService.evaluate(dict(serializer.validated_data), out_dir)
        style = self.style.SUCCESS if math.isfinite(record.mmd2) else self.style.WARNING
        self.stdout.write(style(f"MMD² {record.mmd2:.6g}  DTW mean {record.dtw_mean:.6g}  ({record.dtw_pairs} pairs)"))
