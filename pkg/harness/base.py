"""
Gemeinsame Basis der Harness-Commands

Globale Flags --config, --seed, --out; Ledger-Eintrag pro Aufruf; fachliche
Fehler werden zu CommandError mit passendem Exit-Code.
"""

import logging
import math
import sys

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from uplift_engine.exceptions import EXIT_OK, EXIT_USAGE, UpliftError

from .config import RunConfig
from .models import ExperimentRun

logger = logging.getLogger(__name__)

# Exit-Code des Interpreters bei unbehandelten Ausnahmen
UNHANDLED_EXIT_CODE = 1


def ledger_safe(value):
    """Nicht-endliche Floats als Text, damit das JSON-Feld gültiges JSON bleibt"""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: ledger_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [ledger_safe(v) for v in value]
    return value


class UpliftCommand(BaseCommand):
    command_name = None

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)

        def usage_error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(EXIT_USAGE, f"{parser.prog}: error: {message}\n")
            raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)

        parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON-Datei mit Konfigurations-Overrides')
        parser.add_argument('--seed', type=int, help='Seed für alle Zufallsquellen')
        parser.add_argument('--out', help='Ausgabeverzeichnis des Laufs')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def config_overrides(self, options) -> dict:
        """Command-spezifische Flags → Konfigurationsschlüssel"""
        return {}

    def run(self, config: RunConfig, options) -> dict:
        raise NotImplementedError

    def _open_ledger(self, config: RunConfig):
        try:
            return ExperimentRun.objects.create(
                command=self.command_name,
                variant=config.get('variant') or '',
                status='running',
                seed=config.seed,
                config=ledger_safe(config.values),
                output_dir=str(config.output_dir),
                started_at=timezone.now(),
            )
        except DatabaseError as e:
            logger.warning(f"⚠️ Run-Ledger nicht verfügbar ({e}); migrate ausgeführt?")
            return None

    def handle(self, *args, **options):
        try:
            config = RunConfig.resolve(
                self.command_name, options.get('config'),
                overrides={'seed': options.get('seed'), **self.config_overrides(options)},
                output_dir=options.get('out'))
        except UpliftError as e:
            raise CommandError(str(e), returncode=e.exit_code)

        run = self._open_ledger(config)
        self.stdout.write(self.style.SUCCESS(f"🚀 {self.command_name} (seed {config.seed}) → {config.output_dir}"))
        try:
            config.write()
            summary = self.run(config, options) or {}
        except UpliftError as e:
            logger.error(f"❌ {self.command_name} fehlgeschlagen: {e}")
            if run:
                run.mark_failed(str(e), e.exit_code)
            raise CommandError(str(e), returncode=e.exit_code)
        except Exception as e:
            logger.exception(f"💥 {self.command_name} abgebrochen: {e!r}")
            if run:
                try:
                    run.mark_failed(repr(e), getattr(e, 'returncode', UNHANDLED_EXIT_CODE))
                except DatabaseError as db_error:
                    logger.warning(f"⚠️ Run-Ledger nicht aktualisiert: {db_error}")
            raise

        exit_code = int(summary.pop('exit_code', EXIT_OK))
        if run:
            try:
                run.mark_completed(ledger_safe(summary), exit_code)
            except DatabaseError as e:
                logger.warning(f"⚠️ Run-Ledger nicht aktualisiert: {e}")
        if exit_code != EXIT_OK:
            message = summary.get('warning', f"{self.command_name} mit Exit-Code {exit_code} beendet")
            self.stdout.write(self.style.WARNING(f"⚠️ {message}"))
            raise CommandError(message, returncode=exit_code)
        self.stdout.write(self.style.SUCCESS(f"✅ {self.command_name} abgeschlossen"))
