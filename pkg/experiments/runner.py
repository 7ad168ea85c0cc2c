"""
Experiment drivers behind the management commands.

Each driver computes everything first and returns a result whose `write`
method emits every output file at the end, from the calling thread.
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.datasets import make_spd_matrix

from analysis.divergence import (
    client_gaussian_divergence, right_wrong_divergence, write_densities, write_divergences,
    write_gaussian_divergences,
)
from classifiers.nets import Classifier
from data_gen.dataset import Dataset
from data_gen.partition import HELD_OUT_TEST_SCHEMES, build_partition, make_blobs_dataset, split_train_test
from fl_engine.config import Algo
from fl_engine.engine import ClientState, run_federation
from metrics.fairness import AccuracyProfile, aggregate_runs, summarize
from shift_theory.validation import (
    ROW_HEADER, SUMMARY_HEADER, summarize_validation, validate_approximation, write_rows,
)

from .config import DatasetSource

logger = logging.getLogger(__name__)

UNDEFINED = 'undefined'
SUMMARY_HEADER_RUN = ['algo', 'runs', 'cf_mean', 'cf_std', 'max_acc_mean', 'max_acc_std',
                      'avg_acc_mean', 'avg_acc_std', 'cf_undefined_runs']
RUNS_HEADER = ['algo', 'seed', 'cf', 'max_acc', 'avg_acc']
CLIENTS_HEADER = ['algo', 'seed', 'client', 'D_size', 'acc_standalone', 'acc_federated']
DIVERGENCE_SUMMARY_HEADER = ['seed', 'usable_clients', 'mean_kl_right', 'mean_kl_wrong']


def _fmt(value, precision):
    if value is None:
        return UNDEFINED
    if isinstance(value, (float, np.floating)):
        return format(float(value), f'.{precision}g')
    return value


def write_table(path, header, rows, precision=17):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v, precision) for v in row])


def write_json(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n')


def load_source(config, rng):
    spec = config.dataset
    if spec.source == DatasetSource.CSV:
        return Dataset.from_csv(spec.path, num_classes=spec.num_classes)
    return make_blobs_dataset(spec.classes, spec.dims, spec.separation, spec.n, rng)


@dataclass
class Federation:
    """Clients of one repetition, ready for run_federation"""
    seed: int
    partition: object
    clients: list
    pooled: Dataset
    # held out before partitioning; None when clients are evaluated on their own splits
    test_set: Dataset | None = None

    def run(self, cfg):
        return run_federation(cfg, self.clients, self.pooled, test_set=self.test_set)


def build_federation(config, seed):
    """
    Source data, partition and per-client train/test split, all drawn from one
    seed. Label-skew schemes first hold out a global test split, so no test
    row can reach a client.
    """
    rng = np.random.default_rng(seed)
    source = load_source(config, rng)
    p = config.partition
    test_set = None
    if p.scheme in HELD_OUT_TEST_SCHEMES:
        source, test_set = split_train_test(source, p.test_fraction, rng)
    partition = build_partition(
        p.scheme, source, p.K, rng, exponent=p.exponent, radius_C=p.radius_C,
        dirichlet_alpha=p.dirichlet_alpha, sample_fraction=p.sample_fraction,
    )
    placeholder = Classifier.linear(source.dim, source.num_classes)
    clients = []
    for k, data in enumerate(partition.clients):
        if len(data) < 2:
            raise ValueError(f"client {k} received {len(data)} samples; at least 2 are needed for a train/test split")
        train_data, test_data = split_train_test(data, p.test_fraction, rng)
        clients.append(ClientState(k, placeholder, train_data, test_data))
    pooled = Dataset.concat([c.train_data for c in clients])
    return Federation(seed, partition, clients, pooled, test_set)


# gen_data

@dataclass
class GeneratedData:
    federations: list
    config: object

    def manifest(self):
        p = self.config.partition
        seeds = []
        for fed in self.federations:
            shifts = fed.partition.shifts
            seeds.append({
                'seed': fed.seed,
                'sizes': [len(c.train_data) + len(c.test_data) for c in fed.clients],
                'train_sizes': [len(c.train_data) for c in fed.clients],
                'test_sizes': [len(c.test_data) for c in fed.clients],
                'shifts': None if shifts is None else shifts.tolist(),
                'global_test_size': None if fed.test_set is None else len(fed.test_set),
            })
        return {
            'scheme': p.scheme,
            'K': p.K,
            'radius_C': p.radius_C,
            'exponent': p.exponent,
            'seeds': seeds,
            'config': self.config.manifest_dict(),
        }

    def write(self, out, precision=17):
        for fed in self.federations:
            for c in fed.clients:
                stem = Path(out) / f'seed{fed.seed}' / f'client_{c.id:02d}'
                c.train_data.to_csv(f'{stem}_train.csv', precision)
                c.test_data.to_csv(f'{stem}_test.csv', precision)
            if fed.test_set is not None:
                fed.test_set.to_csv(Path(out) / f'seed{fed.seed}' / 'global_test.csv', precision)
        write_json(Path(out) / 'manifest.json', self.manifest())


def generate_data(config):
    return GeneratedData([build_federation(config, seed) for seed in config.run_seeds()], config)


# run

@dataclass
class RunOutcome:
    config: object
    summaries: dict = field(default_factory=dict)
    clients: list = field(default_factory=list)
    histories: list = field(default_factory=list)

    def aggregated(self):
        return {algo: aggregate_runs([s for _, s in rows]) for algo, rows in self.summaries.items()}

    def undefined_runs(self):
        return sum(1 for rows in self.summaries.values() for _, s in rows if not s.cf_defined)

    def write(self, out, precision=17):
        out = Path(out)
        aggregated = self.aggregated()
        write_table(out / 'summary.csv', SUMMARY_HEADER_RUN, [
            [algo, len(self.summaries[algo]), stats['cf_mean'], stats['cf_std'], stats['max_acc_mean'],
             stats['max_acc_std'], stats['avg_acc_mean'], stats['avg_acc_std'], stats['cf_undefined_runs']]
            for algo, stats in aggregated.items()
        ], precision)
        write_table(out / 'summary_runs.csv', RUNS_HEADER, [
            [algo, seed, s.cf, s.max_acc, s.avg_acc]
            for algo, rows in self.summaries.items() for seed, s in rows
        ], precision)
        write_table(out / 'clients.csv', CLIENTS_HEADER, self.clients, precision)
        for algo, seed, history in self.histories:
            history.to_csv(out / f'history_{algo}_seed{seed}.csv', precision)
        write_json(out / 'manifest.json', {'seeds': self.config.run_seeds(), 'config': self.config.manifest_dict()})


def run_experiment(config):
    """
    Per repetition: standalone first for the reference accuracies, then each
    requested algorithm on the same clients.
    """
    outcome = RunOutcome(config, {algo: [] for algo in config.algos})
    for seed in config.run_seeds():
        fed = build_federation(config, seed)
        sizes = [len(c.train_data) for c in fed.clients]
        logger.info("seed %d: %s partition, client sizes %s", seed, config.partition.scheme, sizes)

        results = {Algo.STANDALONE.value: fed.run(config.fed_config(Algo.STANDALONE, seed))}
        for algo in config.algos:
            if algo not in results:
                results[algo] = fed.run(config.fed_config(algo, seed))

        acc_standalone = results[Algo.STANDALONE.value].history.final_accuracies()
        for algo in config.algos:
            history = results[algo].history
            acc_federated = history.final_accuracies()
            summary = summarize(AccuracyProfile(acc_standalone, acc_federated), history)
            if not summary.cf_defined:
                logger.warning("seed %d %s: CF undefined (constant accuracies)", seed, algo)
            outcome.summaries[algo].append((seed, summary))
            outcome.clients.extend(
                [algo, seed, k, d, float(s), float(f)]
                for k, (d, s, f) in enumerate(zip(sizes, acc_standalone, acc_federated))
            )
        outcome.histories.extend((algo, seed, results[algo].history) for algo in results)
    return outcome


# validate_theory

def theory_base(config, rng):
    """Samples of a random positive-definite Gaussian standing in for a baseline feature cloud"""
    t = config.theory
    covariance = make_spd_matrix(t.dims, random_state=int(rng.integers(2**31 - 1)))
    mean = rng.normal(size=t.dims)
    return mean + rng.standard_normal((t.base_n, t.dims)) @ np.linalg.cholesky(covariance).T


@dataclass
class TheoryOutcome:
    config: object
    rows: list

    def summary(self):
        return summarize_validation([r for _, rows in self.rows for r in rows], self.config.theory.dims)

    def write(self, out, precision=17):
        for seed, rows in self.rows:
            write_rows(Path(out) / f'theory_seed{seed}.csv', ROW_HEADER, rows, precision)
        write_rows(Path(out) / 'theory_summary.csv', SUMMARY_HEADER, self.summary(), precision)
        write_json(Path(out) / 'manifest.json', {'seeds': self.seeds(), 'config': self.config.manifest_dict()})

    def seeds(self):
        return [seed for seed, _ in self.rows]


def validate_theory(config):
    t = config.theory
    rows = []
    for s in range(t.seeds):
        seed = config.seed + s * config.seed_stride
        rng = np.random.default_rng(seed)
        base = theory_base(config, rng)
        rows.append((seed, validate_approximation(base, t.client_Cs, t.client_As, rng, t.delta_sigma_scale)))
    return TheoryOutcome(config, rows)


# analyze

@dataclass
class AnalysisOutcome:
    config: object
    divergences: list = field(default_factory=list)
    gaussian: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def write(self, out, precision=17):
        out = Path(out)
        summary_rows = []
        for seed, result in self.divergences:
            write_divergences(out / f'divergence_seed{seed}.csv', result, precision)
            if self.config.analyze.densities:
                write_densities(out / f'densities_seed{seed}.csv', result, precision)
            kl_right, kl_wrong = result.mean_kl()
            summary_rows.append([seed, len(result.usable()), kl_right, kl_wrong])
        for seed, _ in self.failures:
            summary_rows.append([seed, 0, None, None])
        summary_rows.sort(key=lambda row: row[0])
        write_table(out / 'divergence_summary.csv', DIVERGENCE_SUMMARY_HEADER, summary_rows, precision)
        for seed, values in self.gaussian:
            write_gaussian_divergences(out / f'gaussian_kl_seed{seed}.csv', values, precision)
        write_json(out / 'manifest.json', {
            'seeds': self.config.run_seeds(),
            'failures': {str(seed): message for seed, message in self.failures},
            'config': self.config.manifest_dict(),
        })


def analyze(config):
    """Train `analyze.algo` for `analyze.rounds` rounds, then split each client's data into right and wrong"""
    a = config.analyze
    outcome = AnalysisOutcome(config)
    for seed in config.run_seeds():
        fed = build_federation(config, seed)
        outcome.gaussian.append((seed, client_gaussian_divergence([c.train_data for c in fed.clients])))
        cfg = config.fed_config(a.algo, seed).replace(T=a.rounds)
        result = fed.run(cfg)
        pairs = [(c.train_data, result.local_models[c.id]) for c in fed.clients]
        try:
            outcome.divergences.append((seed, right_wrong_divergence(pairs, grid_points=a.grid_points)))
        except ValueError as exc:
            logger.warning("seed %d: right/wrong divergence unavailable: %s", seed, exc)
            outcome.failures.append((seed, str(exc)))
    return outcome
