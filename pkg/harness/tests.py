import json
import tempfile
from importlib import import_module
from pathlib import Path
from unittest import mock

import numpy as np
from django.apps import apps
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag

from dataio.discretize import fit_schema
from dataio.splits import split
from dataio.synthetic import SyntheticTruth, generate_synthetic_rct
from ddm.decision import value_weights
from ddm.requests import GROUP_CARDINALITIES, simulate_requests
from ddm.store import ScoreStore, UserScores, score_users
from ddm.weights import WeightHyperparameters, WeightModel, train_weight_model
from hum.inference import infer_responses
from hum.training import train
from uplift_engine.exceptions import EXIT_DATA, EXIT_USAGE, ConfigError

from .base import UNHANDLED_EXIT_CODE
from .config import RESOLVED_CONFIG_NAME, RunConfig
from .models import ExperimentRun
from .simulation import ALL_OFF, ALL_ON, HMUM, compare_policies, decide_users, simulate_policies

TINY_RUN = {
    'n': 600, 'num_bins': 10, 'embedding_dim': 4, 'num_experts': 2, 'expert_hidden': 8,
    'expert_out': 4, 'tower_hidden': 8, 'desk_batch_size': 128, 'learning_rate': 0.01,
    'max_epochs': 2, 'early_stop_patience': 10, 'weight_experts': 2, 'weight_hidden': 8,
    'weight_embedding_dim': 4, 'candidates_per_request': 6, 'exposures_per_request': 3,
}


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()

    def write_config(self, values=None, name='run.json'):
        path = self.tmp / name
        path.write_text(json.dumps(values if values is not None else TINY_RUN), encoding='utf-8')
        return str(path)


class RunConfigTests(TempDirMixin, SimpleTestCase):
    def test_default_hyperparameters(self):
        defaults = settings.UPLIFT_DEFAULTS
        self.assertEqual(defaults['embedding_dim'], 32)
        self.assertEqual(defaults['batch_size'], 4096)
        self.assertEqual(defaults['learning_rate'], 0.001)
        self.assertEqual(defaults['lr_factor'], 0.6)
        self.assertEqual(defaults['lr_patience'], 2)
        self.assertEqual(defaults['sigma'], 0.0)
        self.assertEqual(defaults['split_ratios'], [0.8, 0.1, 0.1])
        self.assertEqual(defaults['desk_batch_size'], 1024)
        self.assertEqual(defaults['n'], 100000)

    def test_resolution_order(self):
        path = self.write_config({'seed': 5, 'lambda_kl': 0.5})
        config = RunConfig.resolve('train', path, overrides={'seed': 7, 'max_epochs': None},
                                   output_dir=self.tmp / 'out')
        self.assertEqual(config.seed, 7)
        self.assertEqual(config['lambda_kl'], 0.5)
        self.assertEqual(config['max_epochs'], settings.UPLIFT_DEFAULTS['max_epochs'])
        self.assertEqual(config.output_dir, self.tmp / 'out')

    def test_unknown_key_is_rejected(self):
        with self.assertRaises(ConfigError):
            RunConfig.resolve('train', self.write_config({'embeding_dim': 8}), output_dir=self.tmp)

    def test_invalid_values_are_rejected(self):
        with self.assertRaises(ConfigError):
            RunConfig.resolve('train', overrides={'seed': -1}, output_dir=self.tmp)
        with self.assertRaises(ConfigError):
            RunConfig.resolve('train', overrides={'split_ratios': [0.5, 0.5, 0.5]}, output_dir=self.tmp)

    def test_desk_batch_size_on_generated_data(self):
        config = RunConfig.resolve('train', output_dir=self.tmp)
        self.assertEqual(config.batch_size(synthetic=True), 1024)
        self.assertEqual(config.batch_size(synthetic=False), 4096)
        explicit = RunConfig.resolve('train', overrides={'batch_size': 256}, output_dir=self.tmp)
        self.assertEqual(explicit.batch_size(synthetic=True), 256)

    def test_resolved_config_is_written(self):
        config = RunConfig.resolve('gen-data', overrides={'n': 10}, output_dir=self.tmp / 'run')
        path = config.write()
        self.assertEqual(path.name, RESOLVED_CONFIG_NAME)
        written = json.loads(path.read_text(encoding='utf-8'))
        self.assertEqual(written['n'], 10)
        self.assertEqual(written['command'], 'gen-data')


def oracle_world(n=300, K=2, R=2, seed=0, level=5.0):
    """Gleiches μ für alle Responses: δ = τ/μ ordnet Behandlungen exakt wie der wahre Effekt"""
    rng = np.random.default_rng(seed)
    user_ids = [f"u{i:04d}" for i in range(n)]
    mu = np.full((n, R), level)
    tau = rng.normal(0.0, 1.0, size=(n, R, K))
    truth = SyntheticTruth(user_ids=user_ids, mu=mu, tau=tau)
    scores = [UserScores(u, mu[i][:, None] + tau[i], mu[i], tau[i] / mu[i][:, None])
              for i, u in enumerate(user_ids)]
    raw = rng.uniform(0.1, 1.0, size=(n, R))
    return user_ids, truth, scores, raw


class AdminSetupTests(TestCase):
    def test_admin_login_renders_with_static_files(self):
        self.assertTrue(apps.is_installed('django.contrib.staticfiles'))
        response = self.client.get('/admin/login/')
        self.assertEqual(response.status_code, 200)
        self.assertContains(response, settings.STATIC_URL + 'admin/css/')


class PolicySimulationTests(SimpleTestCase):
    def test_personalized_policy_dominates_static_policies(self):
        user_ids, truth, scores, raw = oracle_world()
        decisions = decide_users(scores, raw, sigma=0.0, top1=False)
        report = compare_policies(user_ids, raw, decisions, truth, seed=3)
        hmum = report.policies[HMUM]
        self.assertIn('all_on_t1', report.policies)
        self.assertIn(ALL_ON, report.policies)
        for name, outcome in report.policies.items():
            self.assertGreaterEqual(hmum.total, outcome.total - 1e-9, name)
            self.assertTrue(np.all(hmum.per_user >= outcome.per_user - 1e-9), name)

    def test_threshold_extremes_match_static_policies(self):
        user_ids, truth, scores, raw = oracle_world(seed=1)
        off = compare_policies(user_ids, raw, decide_users(scores, raw, float('inf'), False), truth)
        np.testing.assert_allclose(off.policies[HMUM].per_user, off.policies[ALL_OFF].per_user)
        on = compare_policies(user_ids, raw, decide_users(scores, raw, float('-inf'), False), truth)
        np.testing.assert_allclose(on.policies[HMUM].per_user, on.policies[ALL_ON].per_user)

    def test_totals_conserve_per_user_outcomes(self):
        user_ids, truth, scores, raw = oracle_world(n=50, seed=2)
        report = compare_policies(user_ids, raw, decide_users(scores, raw, 0.0, False), truth)
        weights = value_weights(raw)
        for outcome in report.policies.values():
            self.assertAlmostEqual(outcome.total, float(outcome.per_user.sum()), places=9)
        # all-off: nur das gewichtete μ
        np.testing.assert_allclose(report.policies[ALL_OFF].per_user, (truth.mu * weights).sum(axis=1))
        self.assertEqual(report.to_dict()['n_users'], 50)

    def test_missing_users_are_counted_and_skipped(self):
        user_ids, truth, scores, _ = oracle_world(n=40, seed=4)
        store = {s.user_id: s for s in scores[:30]}
        requests = simulate_requests(user_ids, 2, seed=0, candidates=6, exposures=3)
        model = WeightModel(GROUP_CARDINALITIES, 2, WeightHyperparameters(4, 2, 8), np.random.default_rng(0))
        report, decisions = simulate_policies(requests, store, model, truth, sigma=0.0)
        self.assertEqual(report.skipped_users, 10)
        self.assertEqual(report.n_users, 30)
        self.assertEqual(len(decisions), 30)
        self.assertTrue(all(np.isclose(d.weights.sum(), 1.0) for _, d in decisions))


@tag('slow')
class TrainedPolicyTests(SimpleTestCase):
    """Trainierte HUMs und Gewichtsmodell statt Oracle-Scores; mit --exclude-tag slow überspringbar"""

    HUM_CONFIG = {
        'embedding_dim': 8, 'num_experts': 2, 'expert_hidden': 16, 'expert_out': 8,
        'tower_hidden': 16, 'lambda_kl': 1.0, 'batch_size': 256, 'learning_rate': 0.01,
        'max_epochs': 8, 'early_stop_patience': 4,
    }
    WEIGHT_CONFIG = {
        'weight_embedding_dim': 4, 'weight_experts': 2, 'weight_hidden': 8, 'learning_rate': 0.01,
        'max_epochs': 5, 'early_stop_patience': 10,
    }

    def _report(self, seed):
        rct = generate_synthetic_rct(6000, K=2, R=2, seed=seed)
        train_raw, val_raw, test_raw = split(rct.table, seed=seed)
        schema = fit_schema(rct.schema, train_raw, num_bins=10)
        train_set, val_set, test_set = (part.discretize(schema) for part in (train_raw, val_raw, test_raw))
        config = dict(self.HUM_CONFIG, seed=seed)
        models = [train(train_set, val_set, config, response_index=r) for r in range(2)]
        scores, _ = score_users(infer_responses(models, test_set))
        requests = simulate_requests(test_set.user_ids, 2, seed=seed, candidates=6, exposures=3)
        weights = train_weight_model(requests, dict(self.WEIGHT_CONFIG, seed=seed),
                                     response_names=list(schema.response_names), batch_size=64)
        report, _ = simulate_policies(requests, {s.user_id: s for s in scores}, weights, rct.truth,
                                      sigma=0.0, seed=seed)
        return report

    def test_personalized_policy_beats_static_policies(self):
        for seed in (1, 2, 3):
            report = self._report(seed)
            hmum = report.policies[HMUM].total
            for name, outcome in report.policies.items():
                self.assertGreaterEqual(hmum, outcome.total, msg=f"Seed {seed}: {name}")


class CommandTests(TempDirMixin, TestCase):
    def run_command(self, name, *args, **options):
        return call_command(name, *args, config=self.write_config(), out=str(self.tmp / 'run'),
                            seed=options.pop('seed', 11), **options)

    def test_gen_data_is_deterministic(self):
        call_command('gen-data', config=self.write_config(), out=str(self.tmp / 'a'), seed=3)
        call_command('gen-data', config=self.write_config(), out=str(self.tmp / 'b'), seed=3)
        for name in ('dataset.csv', 'schema.json', 'truth.csv', 'baseline.csv'):
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes())

        lines = (self.tmp / 'a' / 'dataset.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(lines), 1 + TINY_RUN['n'])
        truth_lines = (self.tmp / 'a' / 'truth.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(truth_lines), 1 + TINY_RUN['n'] * 2 * 2)
        self.assertTrue((self.tmp / 'a' / RESOLVED_CONFIG_NAME).exists())

        run = ExperimentRun.objects.filter(command='gen-data').first()
        self.assertTrue(run.is_completed)
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(run.summary['n'], TINY_RUN['n'])

    def test_end_to_end_pipeline(self):
        run = self.tmp / 'run'
        self.run_command('gen-data')
        self.run_command('train', variant='hum')
        self.assertTrue((run / 'checkpoints' / 'hum_usage_time.json').exists())
        self.assertTrue((run / 'checkpoints' / 'hum_view_count.json').exists())

        self.run_command('evaluate', variant='hum')
        report = json.loads((run / 'evaluation_hum.json').read_text(encoding='utf-8'))
        self.assertEqual(len(report['cells']), 2 * 2)
        for cell in report['cells']:
            self.assertIn('qini', cell)
            self.assertIn('auuc', cell)
            self.assertIn('oracle_qini', cell)
        self.assertEqual(set(report['control_branch_gap']), {'usage_time', 'view_count'})
        self.assertTrue((run / 'curves' / 'hum_usage_time_t1_qini.csv').exists())

        # erneute Evaluation desselben Checkpoints
        self.run_command('evaluate', variant='hum')
        again = json.loads((run / 'evaluation_hum.json').read_text(encoding='utf-8'))
        self.assertEqual(again['cells'], report['cells'])

        self.run_command('score', variant='hum')
        stored = ScoreStore(run / 'scores.csv').read()
        self.assertEqual(len(stored), TINY_RUN['n'])
        rows = (run / 'scores.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(rows), 1 + TINY_RUN['n'] * 2 * 2)
        for entry in list(stored.values())[:20]:
            np.testing.assert_allclose(entry.delta, entry.treated / entry.control_star[:, None] - 1.0,
                                       rtol=1e-9)

        self.run_command('weights-train')
        self.assertTrue((run / 'weight_model.json').exists())

        self.run_command('simulate')
        policy = json.loads((run / 'policy_report.json').read_text(encoding='utf-8'))
        self.assertEqual(set(policy['policies']),
                         {HMUM, ALL_OFF, 'all_on_t1', 'all_on_t2', ALL_ON, 'random'})
        decisions = (run / 'decisions.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(decisions[0], 'user_id,k,phi,enabled')
        self.assertEqual(len(decisions), 1 + TINY_RUN['n'] * 2)

        self.run_command('simulate', sigma=float('inf'))
        closed = json.loads((run / 'policy_report.json').read_text(encoding='utf-8'))
        self.assertAlmostEqual(closed['policies'][HMUM]['total'], closed['policies'][ALL_OFF]['total'])
        self.run_command('simulate', sigma=float('-inf'))
        opened = json.loads((run / 'policy_report.json').read_text(encoding='utf-8'))
        self.assertAlmostEqual(opened['policies'][HMUM]['total'], opened['policies'][ALL_ON]['total'])

        self.assertEqual(ExperimentRun.objects.filter(status='completed').count(), 9)

    def test_independent_and_no_kl_variants(self):
        run = self.tmp / 'run'
        self.run_command('gen-data')
        self.run_command('train', variant='no-kl')
        resolved = json.loads((run / RESOLVED_CONFIG_NAME).read_text(encoding='utf-8'))
        self.assertEqual(resolved['lambda_kl'], 0.0)
        self.run_command('train', variant='independent')
        self.run_command('evaluate', variant='independent')
        report = json.loads((run / 'evaluation_independent.json').read_text(encoding='utf-8'))
        self.assertEqual(len(report['cells']), 4)

    def test_usage_error_exit_code(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('train', '--variant', 'bogus', out=str(self.tmp))
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

        with self.assertRaises(CommandError) as ctx:
            call_command('gen-data', config=self.write_config({'unknown_key': 1}), out=str(self.tmp))
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

    def test_missing_data_is_a_data_error(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('train', out=str(self.tmp / 'empty'), data=str(self.tmp / 'nope.csv'),
                         schema=str(self.tmp / 'nope.json'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        run = ExperimentRun.objects.get(command='train')
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, EXIT_DATA)

    def test_unexpected_error_marks_run_failed(self):
        command = import_module('harness.management.commands.gen-data').Command
        with mock.patch.object(command, 'run', side_effect=RuntimeError('kaputt')):
            with self.assertRaises(RuntimeError):
                self.run_command('gen-data')
        run = ExperimentRun.objects.get(command='gen-data')
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.exit_code, UNHANDLED_EXIT_CODE)
        self.assertIn('kaputt', run.error_message)
        self.assertIsNotNone(run.completed_at)

    def test_score_skips_invalid_users_with_data_exit_code(self):
        run = self.tmp / 'run'
        self.run_command('gen-data')
        self.run_command('train', variant='hum')
        users = run / 'users.csv'
        lines = (run / 'dataset.csv').read_text(encoding='utf-8').splitlines()
        header = lines[0].split(',')
        broken = lines[1].split(',')
        broken[header.index('cat_0')] = '99'
        users.write_text('\n'.join([lines[0], ','.join(broken)] + lines[2:6]) + '\n', encoding='utf-8')

        with self.assertRaises(CommandError) as ctx:
            self.run_command('score', variant='hum', users=str(users))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        self.assertEqual(len(ScoreStore(run / 'scores.csv').read()), 4)
