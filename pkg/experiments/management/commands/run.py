from experiments.management.base import LabCommand, UndefinedMetric
from experiments.runner import run_experiment


class Command(LabCommand):
    help = 'Run standalone and the requested algorithms, and summarize fairness and accuracy across runs'
    command_name = 'run'
    accepts_algo = True

    def execute_experiment(self, config):
        return run_experiment(config)

    def report(self, outcome, record):
        self.record_summaries(record, [
            (algo, seed, summary)
            for algo, rows in outcome.summaries.items() for seed, summary in rows
        ])
        for algo, stats in outcome.aggregated().items():
            cf = 'undefined' if stats['cf_mean'] is None else f"{stats['cf_mean']:.2f} ± {stats['cf_std']:.2f}"
            self.stdout.write(
                f"{algo}: CF {cf}, avg acc {stats['avg_acc_mean']:.4f} ± {stats['avg_acc_std']:.4f}, "
                f"max acc {stats['max_acc_mean']:.4f}"
            )
        undefined = outcome.undefined_runs()
        if undefined:
            raise UndefinedMetric(f"CF undefined in {undefined} run(s); see summary_runs.csv")
