import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from experiments.config import ConfigError, ExperimentConfig
from experiments.models import ExperimentRun, RunSummary

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
UNDEFINED_METRIC = 3


class UndefinedMetric(Exception):
    pass


class LabCommand(BaseCommand):
    """
    Shared flags, config loading, run recording and exit codes.

    Subclasses implement `execute_experiment(config)` returning an outcome
    with a `write(out, precision)` method.
    """
    command_name = None
    accepts_algo = False

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON experiment config; defaults reproduce desk-ics')
        parser.add_argument('--seed', type=int, help='base seed (unsigned 64-bit)')
        parser.add_argument('--out', help='output directory, relative to the lab output root unless absolute')
        if self.accepts_algo:
            parser.add_argument('--algo', help='algorithm name, or comma-separated names')

    def load_config(self, options):
        seed = options.get('seed')
        if seed is not None and not 0 <= seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        path = options.get('config')
        config = ExperimentConfig.load(path) if path else ExperimentConfig()
        return config.with_overrides(seed=seed, out=options.get('out'), **self.algo_override(options.get('algo')))

    def algo_override(self, value):
        return {} if value is None else {'algos': value}

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
        except ConfigError as exc:
            raise CommandError(f"config error: {exc}", returncode=CONFIG_ERROR) from exc

        out = config.output_dir()
        record = self.start_record(config, out)
        try:
            outcome = self.execute_experiment(config)
        except ConfigError as exc:
            self.finish_record(record, ExperimentRun.Status.FAILED, str(exc))
            raise CommandError(f"config error: {exc}", returncode=CONFIG_ERROR) from exc
        except ValueError as exc:
            self.finish_record(record, ExperimentRun.Status.FAILED, str(exc))
            raise CommandError(str(exc)) from exc

        try:
            outcome.write(out, settings.FEDAKD['CSV_PRECISION'])
        except OSError as exc:
            self.finish_record(record, ExperimentRun.Status.FAILED, str(exc))
            raise CommandError(f"cannot write outputs to {out}: {exc}") from exc
        self.stdout.write(self.style.SUCCESS(f"{self.command_name}: outputs written to {out}"))

        try:
            self.report(outcome, record)
        except UndefinedMetric as exc:
            self.finish_record(record, ExperimentRun.Status.UNDEFINED_METRIC, str(exc))
            raise CommandError(str(exc), returncode=UNDEFINED_METRIC) from exc
        self.finish_record(record, ExperimentRun.Status.COMPLETED)

    def execute_experiment(self, config):
        raise NotImplementedError

    def report(self, outcome, record):
        """Print a short summary; raise UndefinedMetric when only metrics were undefined"""

    # Run records are a convenience; the files in `out` are the results.

    def start_record(self, config, out):
        if not settings.FEDAKD['RECORD_RUNS']:
            return None
        try:
            return ExperimentRun.objects.create(
                command=self.command_name,
                seed=str(config.seed),
                config=config.to_dict(),
                output_dir=str(out),
            )
        except DatabaseError as exc:
            logger.warning("run not recorded: %s", exc)
            return None

    def finish_record(self, record, status, message=''):
        if record is None:
            return
        try:
            record.status = status
            record.message = message
            record.finished_at = timezone.now()
            record.save(update_fields=['status', 'message', 'finished_at'])
        except DatabaseError as exc:
            logger.warning("run %s not updated: %s", record.pk, exc)

    def record_summaries(self, record, rows):
        if record is None:
            return
        try:
            RunSummary.objects.bulk_create([
                RunSummary(run=record, algo=algo, seed=str(seed), cf=s.cf, max_acc=s.max_acc, avg_acc=s.avg_acc)
                for algo, seed, s in rows
            ])
        except DatabaseError as exc:
            logger.warning("summaries of run %s not recorded: %s", record.pk, exc)
