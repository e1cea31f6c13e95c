from synthesis.management.base import TsganCommand
from synthesis.serializers import SynthConfigSerializer
from synthesis.services import SynthesisJobService


class Command(TsganCommand):
    help = "Samples n series from a generator checkpoint into a corpus CSV."
    command_name = "synth"
    serializer_class = SynthConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint")
        parser.add_argument("--n", type=int)
        parser.add_argument("--length", type=int)

    def overrides(self, options):
        return {name: options.get(name) for name in ("checkpoint", "n", "length")}

    def run(self, serializer, out_dir, options):
        data = dict(serializer.validated_data)
        SynthesisJobService.synthesize(data, out_dir)
        self.stdout.write(self.style.SUCCESS(f"Wrote {data['n']} synthetic series to {out_dir / 'synth.csv'}"))
