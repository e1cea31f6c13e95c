from synthesis.management.base import TsganCommand
from synthesis.serializers import IngestConfigSerializer
from synthesis.services import CorpusJobService


class Command(TsganCommand):
    help = "Converts Kachuee ECG CSVs to two-peak corpora, or a raw signal to beat corpora."
    command_name = "ingest"
    serializer_class = IngestConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--mode", choices=["kachuee", "raw"])
        parser.add_argument("--train-csv", dest="train_csv")
        parser.add_argument("--test-csv", dest="test_csv")
        parser.add_argument("--signal", help="single-column sample file with a <stem>.json sidecar")
        parser.add_argument("--variant", choices=["kachuee", "two-peak-raw"])

    def overrides(self, options):
        return {name: options.get(name) for name in ("mode", "train_csv", "test_csv", "signal", "variant")}

    def run(self, serializer, out_dir, options):
        manifest = CorpusJobService.ingest(dict(serializer.validated_data), out_dir)
        for name, path in manifest.outputs.items():
            self.stdout.write(self.style.SUCCESS(f"{name}: {out_dir / path}"))
