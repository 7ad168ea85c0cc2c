import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag

from classifiers.nets import accuracy
from data_gen.partition import powerlaw_sizes

from .config import ConfigError, ExperimentConfig, parse_algos
from .models import ExperimentRun, RunSummary
from .runner import build_federation, run_experiment, validate_theory

SMALL = {
    'dataset': {'dims': 3, 'n': 600},
    'partition': {'K': 4},
    'federation': {'T': 3},
}


def read_csv(path):
    with Path(path).open(newline='') as handle:
        return list(csv.DictReader(handle))


class ConfigTests(SimpleTestCase):
    def test_defaults_are_desk_ics(self):
        config = ExperimentConfig()
        self.assertEqual((config.dataset.classes, config.dataset.dims, config.dataset.n), (2, 10, 4000))
        self.assertEqual((config.partition.scheme, config.partition.K), ('ics', 8))
        self.assertEqual((config.partition.radius_C, config.partition.exponent), (5.0, 1.0))
        self.assertEqual(config.dataset.separation, 2.0)

    def test_round_trip(self):
        document = {
            **SMALL,
            'algos': ['fedavg', 'fedakd'],
            'runs': 3,
            'seed': 11,
            'theory': {'client_Cs': [0, 1], 'client_As': [100, 200]},
            'analyze': {'algo': 'fedakd', 'densities': False},
        }
        config = ExperimentConfig.from_dict(document)
        self.assertEqual(ExperimentConfig.from_dict(config.to_dict()), config)
        self.assertEqual(ExperimentConfig.from_dict(json.loads(config.to_json())), config)

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            path.write_text(json.dumps({'seed': 4, 'partition': {'scheme': 'bcs'}}))
            config = ExperimentConfig.load(path)
        self.assertEqual((config.seed, config.partition.scheme), (4, 'bcs'))

    def test_unknown_keys(self):
        for document in ({'sed': 1}, {'partition': {'C': 5}}, {'federation': {'gamma': 1}}):
            with self.assertRaises(ConfigError):
                ExperimentConfig.from_dict(document)

    def test_invalid_values(self):
        for document in (
            {'partition': {'scheme': 'xyz'}},
            {'runs': 0},
            {'dataset': {'source': 'csv'}},
            {'federation': {'K': 3}},
            {'federation': {'eta': -1}},
            {'theory': {'dims': 5, 'client_As': [10, 10, 10]}},
            {'partition': {'K': 'eight'}},
        ):
            with self.assertRaises(ConfigError, msg=document):
                ExperimentConfig.from_dict(document)

    def test_unreadable_file(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.load('/nonexistent/config.json')

    def test_flags_override_file_values(self):
        config = ExperimentConfig.from_dict({'seed': 3, 'out': 'a'}).with_overrides(seed=9, algos='fedavg')
        self.assertEqual((config.seed, config.out, config.algos), (9, 'a', ('fedavg',)))

    def test_parse_algos(self):
        self.assertEqual(parse_algos('fedavg, fedakd,fedavg'), ('fedavg', 'fedakd'))
        with self.assertRaises(ConfigError):
            parse_algos('fedprox')

    def test_correct_count_weighting_applies_to_its_ablation_only(self):
        config = ExperimentConfig.from_dict({
            'algos': ['fedakd', 'akd_correctagg'], 'federation': {'agg_weighting': 'correct_count'},
        })
        self.assertEqual(config.fed_config('fedakd', 0).weighting, 'dataset_size')
        self.assertEqual(config.fed_config('akd_correctagg', 0).weighting, 'correct_count')

    def test_run_seeds(self):
        config = ExperimentConfig(runs=3, seed=10, seed_stride=5)
        self.assertEqual(config.run_seeds(), [10, 15, 20])

    def test_label_skew_schemes_evaluate_on_the_pooled_test(self):
        for scheme, expected in (('cla', 'pooled'), ('dir', 'pooled'), ('ics', 'local'), ('pow', 'local')):
            config = ExperimentConfig.from_dict({'dataset': {'classes': 4}, 'partition': {'scheme': scheme, 'K': 4}})
            self.assertEqual(config.fed_config('fedakd', 0).evaluation, expected, scheme)

    def test_explicit_evaluation_wins(self):
        config = ExperimentConfig.from_dict({
            'dataset': {'classes': 4}, 'partition': {'scheme': 'cla', 'K': 4}, 'federation': {'evaluation': 'local'},
        })
        self.assertEqual(config.fed_config('fedakd', 0).evaluation, 'local')

    def test_manifest_leaves_out_the_output_location(self):
        config = ExperimentConfig.from_dict({'out': 'elsewhere', 'seed': 2})
        recorded = config.manifest_dict()
        self.assertNotIn('out', recorded)
        self.assertEqual(recorded, {k: v for k, v in config.to_dict().items() if k != 'out'})


CLA_SMALL = {'dataset': {'classes': 4, 'dims': 3, 'n': 800}, 'partition': {'scheme': 'cla', 'K': 4}}


class FederationBuildTests(SimpleTestCase):
    def test_held_out_rows_never_reach_a_client(self):
        fed = build_federation(ExperimentConfig.from_dict(CLA_SMALL), 0)
        self.assertEqual(len(fed.test_set), 160)
        held_out = {tuple(row) for row in fed.test_set.features}
        for c in fed.clients:
            for part in (c.train_data, c.test_data):
                self.assertFalse(any(tuple(row) in held_out for row in part.features), c.id)

    def test_held_out_labels_follow_the_source(self):
        fed = build_federation(ExperimentConfig.from_dict(CLA_SMALL), 0)
        self.assertEqual(set(fed.test_set.labels.tolist()), {0, 1, 2, 3})

    def test_covariate_shift_keeps_local_splits_only(self):
        self.assertIsNone(build_federation(ExperimentConfig.from_dict(SMALL), 0).test_set)

    def test_pooled_accuracy_uses_the_held_out_split(self):
        config = ExperimentConfig.from_dict({**CLA_SMALL, 'federation': {'T': 2}})
        fed = build_federation(config, 1)
        result = fed.run(config.fed_config('fedakd', 1))
        for c in result.history.rounds[-1].clients:
            self.assertEqual(c.acc_local, accuracy(result.local_models[c.client], fed.test_set))


class CommandTestCase(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def write_config(self, document, name='config.json'):
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return str(path)

    def call(self, command, document, out='out', **options):
        call_command(command, config=self.write_config(document), out=str(self.tmp / out),
                     stdout=StringIO(), **options)
        return self.tmp / out


class GenDataCommandTests(CommandTestCase):
    def test_manifest_sizes_follow_power_law(self):
        out = self.call('gen_data', {**SMALL, 'partition': {'scheme': 'ics', 'K': 4, 'exponent': 1.0}})
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['seeds'][0]['sizes'], powerlaw_sizes(300, 4, 1.0).tolist())
        self.assertEqual(len(manifest['seeds'][0]['shifts']), 4)
        self.assertTrue((out / 'seed0' / 'client_03_train.csv').exists())

    def test_balanced_sizes(self):
        out = self.call('gen_data', {**SMALL, 'partition': {'scheme': 'bcs', 'K': 4}})
        sizes = json.loads((out / 'manifest.json').read_text())['seeds'][0]['sizes']
        self.assertEqual(len(set(sizes)), 1)

    def test_label_skew_writes_the_global_test_split(self):
        out = self.call('gen_data', CLA_SMALL)
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['seeds'][0]['global_test_size'], 160)
        self.assertEqual(len((out / 'seed0' / 'global_test.csv').read_text().splitlines()), 1 + 160)
        self.assertNotIn('out', manifest['config'])

    def test_same_seed_gives_identical_files(self):
        first = self.call('gen_data', SMALL, out='a', seed=7)
        second = self.call('gen_data', SMALL, out='b', seed=7)
        names = sorted(p.relative_to(first) for p in first.rglob('*') if p.is_file())
        self.assertEqual(names, sorted(p.relative_to(second) for p in second.rglob('*') if p.is_file()))
        for name in names:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

    def test_records_the_run(self):
        self.call('gen_data', SMALL, seed=5)
        run = ExperimentRun.objects.get()
        self.assertEqual((run.command, run.seed, run.status), ('gen_data', '5', ExperimentRun.Status.COMPLETED))
        self.assertIsNotNone(run.finished_at)


class RunCommandTests(CommandTestCase):
    def test_outputs_are_byte_identical_across_reruns(self):
        document = {**SMALL, 'algos': ['fedavg', 'fedakd'], 'runs': 2}
        first = self.call('run', document, out='a', seed=3)
        second = self.call('run', document, out='b', seed=3)
        for name in ('summary.csv', 'summary_runs.csv', 'clients.csv', 'history_fedakd_seed4.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

    def test_identical_seeds_have_zero_spread(self):
        out = self.call('run', {**SMALL, 'runs': 3, 'seed_stride': 0})
        row, = read_csv(out / 'summary.csv')
        for column in ('cf_std', 'max_acc_std', 'avg_acc_std'):
            self.assertLessEqual(float(row[column]), 1e-12)
        self.assertEqual(row['runs'], '3')

    def test_standalone_accuracies_are_shared(self):
        out = self.call('run', SMALL, algo='fedavg,fedakd')
        self.assertEqual([r['algo'] for r in read_csv(out / 'summary.csv')], ['fedavg', 'fedakd'])
        clients = read_csv(out / 'clients.csv')
        by_algo = {algo: [r['acc_standalone'] for r in clients if r['algo'] == algo] for algo in ('fedavg', 'fedakd')}
        self.assertEqual(by_algo['fedavg'], by_algo['fedakd'])
        self.assertTrue((out / 'history_standalone_seed0.csv').exists())
        self.assertEqual(RunSummary.objects.count(), 2)

    def test_config_error_exit_code(self):
        with self.assertRaises(CommandError) as caught:
            self.call('run', {'partition': {'scheme': 'nope'}})
        self.assertEqual(caught.exception.returncode, 2)

    def test_unknown_algo_exit_code(self):
        with self.assertRaises(CommandError) as caught:
            self.call('run', SMALL, algo='fedprox')
        self.assertEqual(caught.exception.returncode, 2)

    def test_undefined_cf_still_writes_outputs(self):
        with self.assertRaises(CommandError) as caught:
            self.call('run', {**SMALL, 'partition': {'K': 1}})
        self.assertEqual(caught.exception.returncode, 3)
        row, = read_csv(self.tmp / 'out' / 'summary.csv')
        self.assertEqual(row['cf_mean'], 'undefined')
        self.assertEqual(row['cf_undefined_runs'], '1')
        self.assertEqual(ExperimentRun.objects.get().status, ExperimentRun.Status.UNDEFINED_METRIC)

    def test_runs_without_recording(self):
        with self.settings(FEDAKD={'OUTPUT_ROOT': self.tmp, 'CSV_PRECISION': 17, 'WORKERS': 2, 'RECORD_RUNS': False}):
            out = self.call('run', SMALL)
        self.assertTrue((out / 'summary.csv').exists())
        self.assertFalse(ExperimentRun.objects.exists())


class ValidateTheoryCommandTests(CommandTestCase):
    def test_zero_radius_matches_resampling(self):
        theory = {'dims': 2, 'base_n': 5000, 'client_Cs': [0.0], 'client_As': [1000],
                  'seeds': 200, 'delta_sigma_scale': 0.0}
        out = self.call('validate_theory', {'theory': theory})
        row, = read_csv(out / 'theory_summary.csv')
        real, random = float(row['real_kl']), float(row['random_kl'])
        self.assertAlmostEqual(real, random, delta=0.3 * random)
        header = (out / 'theory_seed0.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'client,C,A,real_kl,approx_kl,random_kl')

    def test_real_kl_increases_with_radius(self):
        theory = {'dims': 3, 'base_n': 5000, 'client_Cs': [1.0, 2.0, 4.0], 'client_As': [2000] * 3, 'seeds': 5}
        out = self.call('validate_theory', {'theory': theory})
        rows = read_csv(out / 'theory_summary.csv')
        self.assertEqual([float(r['C']) for r in rows], [1.0, 2.0, 4.0])
        real = [float(r['real_kl']) for r in rows]
        self.assertTrue(real[0] < real[1] < real[2])


class AnalyzeCommandTests(CommandTestCase):
    def test_writes_divergence_tables(self):
        try:
            out = self.call('analyze', {**SMALL, 'analyze': {'rounds': 2}})
        except CommandError as exc:
            # a seed without two usable clients is reported, not fatal
            self.assertEqual(exc.returncode, 3)
            out = self.tmp / 'out'
        self.assertTrue((out / 'gaussian_kl_seed0.csv').exists())
        summary, = read_csv(out / 'divergence_summary.csv')
        if summary['usable_clients'] != '0':
            rows = read_csv(out / 'divergence_seed0.csv')
            self.assertEqual(len(rows), 4)
            self.assertTrue((out / 'densities_seed0.csv').exists())

    def test_rejects_several_algorithms(self):
        with self.assertRaises(CommandError) as caught:
            self.call('analyze', SMALL, algo='fedavg,fedakd')
        self.assertEqual(caught.exception.returncode, 2)


@tag('benchmark')
class DeskBenchmarkTests(TestCase):
    """Seed-averaged directional checks on the default desk-ics setup"""

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = tmp.name

    def test_fedakd_is_fairer_than_fedavg(self):
        config = ExperimentConfig(algos=('fedavg', 'fedakd', 'standalone'), runs=5, out=self.out)
        stats = run_experiment(config).aggregated()
        self.assertGreater(stats['fedakd']['cf_mean'], stats['fedavg']['cf_mean'])
        self.assertGreaterEqual(stats['fedakd']['avg_acc_mean'], stats['standalone']['avg_acc_mean'])

    def test_two_way_distillation_beats_single_distillation(self):
        config = ExperimentConfig(algos=('fedakd', 'akd_singledist'), runs=5, out=self.out)
        stats = run_experiment(config).aggregated()
        self.assertGreaterEqual(stats['fedakd']['cf_mean'], stats['akd_singledist']['cf_mean'])

    def test_perturbed_gaussian_validation(self):
        config = ExperimentConfig(out=self.out)
        summary = validate_theory(config).summary()
        fitting = 5 * 8 / (4 * 10_000)
        for row in summary:
            self.assertAlmostEqual(row.random_kl, fitting, delta=0.25 * fitting)
        real = [row.real_kl for row in summary]
        self.assertTrue(all(np.diff(real) > 0))

        mean_only = ExperimentConfig.from_dict({'theory': {'delta_sigma_scale': 0.0}})
        first = validate_theory(mean_only).summary()[0]
        self.assertEqual(first.C, 0.25)
        self.assertLessEqual(abs(first.approx_kl - first.real_kl), 0.2 * first.real_kl)
