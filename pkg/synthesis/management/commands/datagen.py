from synthesis.management.base import TsganCommand
from synthesis.serializers import SineCorpusConfigSerializer
from synthesis.services import CorpusJobService


class Command(TsganCommand):
    help = "Generates the seeded sine-wave train/test corpus."
    command_name = "datagen"
    serializer_class = SineCorpusConfigSerializer

    def add_command_arguments(self, parser):
        parser.add_argument("--n-train", type=int, dest="n_train")
        parser.add_argument("--n-test", type=int, dest="n_test")
        parser.add_argument("--length", type=int)

    def overrides(self, options):
        return {name: options.get(name) for name in ("n_train", "n_test", "length")}

    def run(self, serializer, out_dir, options):
        cfg = serializer.to_config()
        manifest = CorpusJobService.datagen(cfg, dict(serializer.validated_data), out_dir)
        self.stdout.write(
            self.style.SUCCESS(f"Wrote {cfg.n_train} train and {cfg.n_test} test waves to {out_dir} ({manifest.config_hash[:12]})")
        )
