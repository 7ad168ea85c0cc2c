from experiments.config import ConfigError, parse_algos
from experiments.management.base import LabCommand, UndefinedMetric
from experiments.runner import analyze


class Command(LabCommand):
    help = 'Compare right and wrong sample distributions of each client against the pool'
    command_name = 'analyze'
    accepts_algo = True

    def algo_override(self, value):
        if value is None:
            return {}
        algos = parse_algos(value)
        if len(algos) != 1:
            raise ConfigError("analyze takes a single --algo")
        return {'analyze_algo': algos[0]}

    def execute_experiment(self, config):
        return analyze(config)

    def report(self, outcome, record):
        for seed, result in outcome.divergences:
            kl_right, kl_wrong = result.mean_kl()
            self.stdout.write(f"seed {seed}: mean KL right {kl_right:.5f}, wrong {kl_wrong:.5f}")
        if outcome.failures:
            raise UndefinedMetric(
                f"right/wrong divergence undefined for seed(s) {', '.join(str(s) for s, _ in outcome.failures)}"
            )
