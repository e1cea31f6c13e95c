"""Shared plumbing for the run commands: JSON config loading, overrides and exit codes."""

import json
import logging
import sys
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from apps.data.exceptions import MalformedRowError
from apps.layers.exceptions import CheckpointError, GeometryError
from apps.privacy.exceptions import InfeasibleSampleError

from ..serializers import format_errors

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGED = 3

# Errors caused by what the operator asked for rather than by the run itself.
USAGE_ERRORS = (FileNotFoundError, MalformedRowError, InfeasibleSampleError, GeometryError, CheckpointError)


def _usage_error(parser, message):
    if parser.called_from_command_line:
        parser.print_usage(sys.stderr)
        parser.exit(EXIT_USAGE, f"{parser.prog}: error: {message}\n")
    raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)


class TsganCommand(BaseCommand):
    """Base for every run command.

    Subclasses set ``serializer_class``, declare their own flags in
    ``add_command_arguments`` and map them onto config fields in
    ``overrides``. ``handle`` receives the validated serializer.
    """

    requires_system_checks = []
    serializer_class = None
    command_name = ""

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = lambda message: _usage_error(parser, message)
        return parser

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON run config")
        parser.add_argument("--seed", type=int, help="overrides the config's seed")
        parser.add_argument("--out", help="output directory")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def overrides(self, options):
        return {}

    def load_config(self, options):
        config = {}
        if options.get("config"):
            path = Path(options["config"])
            if not path.exists():
                raise CommandError(f"config: file not found: {path}", returncode=EXIT_USAGE)
            try:
                config = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise CommandError(f"config: not valid JSON ({exc})", returncode=EXIT_USAGE) from None
            if not isinstance(config, dict):
                raise CommandError("config: top level must be a JSON object", returncode=EXIT_USAGE)
        if options.get("seed") is not None:
            config["seed"] = options["seed"]
        config.update({key: value for key, value in self.overrides(options).items() if value is not None})
        return config

    def validate(self, config):
        serializer = self.serializer_class(data=config)
        if not serializer.is_valid():
            raise CommandError("\n".join(format_errors(serializer.errors)), returncode=EXIT_USAGE)
        return serializer

    def out_dir(self, options):
        if options.get("out"):
            return Path(options["out"])
        return Path(settings.TSGAN_ARTIFACT_ROOT) / self.command_name

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except CommandError:
            raise
        except USAGE_ERRORS as exc:
            logger.error("[%s] %s", self.command_name, exc)
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        except ValueError as exc:
            logger.error("[%s] %s", self.command_name, exc)
            raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc

    def handle(self, *args, **options):
        serializer = self.validate(self.load_config(options))
        return self.run(serializer, self.out_dir(options), options)

    def run(self, serializer, out_dir, options):
        raise NotImplementedError
