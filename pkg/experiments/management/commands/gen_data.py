from experiments.management.base import LabCommand
from experiments.runner import generate_data


class Command(LabCommand):
    help = 'Generate partitioned client datasets and a manifest of sizes and shift vectors'
    command_name = 'gen_data'

    def execute_experiment(self, config):
        return generate_data(config)

    def report(self, outcome, record):
        for fed in outcome.federations:
            sizes = [len(c.train_data) + len(c.test_data) for c in fed.clients]
            self.stdout.write(f"seed {fed.seed}: {len(sizes)} clients, sizes {sizes}")
