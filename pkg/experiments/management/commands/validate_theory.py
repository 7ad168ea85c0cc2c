from experiments.management.base import LabCommand
from experiments.runner import validate_theory


class Command(LabCommand):
    help = 'Compare exact, approximated and resampling KL divergences of perturbed Gaussians'
    command_name = 'validate_theory'

    def execute_experiment(self, config):
        return validate_theory(config)

    def report(self, outcome, record):
        for row in outcome.summary():
            self.stdout.write(
                f"C={row.C:g} A={row.A}: real {row.real_kl:.5f}, approx {row.approx_kl:.5f}, "
                f"random {row.random_kl:.5f}"
            )
