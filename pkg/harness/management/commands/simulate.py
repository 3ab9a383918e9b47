"""HMUM-Entscheidungen gegen statische Strategien auf der Ground Truth"""

import json

from ddm.requests import simulate_requests
from ddm.store import ScoreStore, write_decisions
from ddm.weights import load_weight_model
from harness.base import UpliftCommand
from harness.pipeline import load_truth, population_user_ids, store_path, weight_model_path
from harness.simulation import HMUM, simulate_policies
from uplift_engine.exceptions import EXIT_DATA, DataError


class Command(UpliftCommand):
    help = 'Spielt die simulierten Anfragen durch Gewichtsmodell und Entscheidungsregel'
    command_name = 'simulate'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Datensatz (Default: dataset.csv im Ausgabeverzeichnis)')
        parser.add_argument('--schema', help='Schema-Datei (Default: schema.json neben dem Datensatz)')
        parser.add_argument('--users', help='Feature-Datei der Nutzer (Default: Datensatz)')
        parser.add_argument('--store', help='Score-Store (.csv oder .jsonl)')
        parser.add_argument('--weights', help='Gewichtsmodell')
        parser.add_argument('--sigma', type=float, help='Entscheidungsschwelle σ')
        parser.add_argument('--top1', action='store_true', default=None,
                            help='Höchstens die beste Behandlung aktivieren')

    def config_overrides(self, options):
        return {
            'data': options.get('data'),
            'schema': options.get('schema'),
            'users': options.get('users'),
            'store': options.get('store'),
            'weights': options.get('weights'),
            'sigma': options.get('sigma'),
            'top1': options.get('top1'),
        }

    def run(self, config, options):
        truth = load_truth(config)
        if truth is None:
            raise DataError("Simulation braucht truth.csv und baseline.csv neben dem Datensatz")
        store = ScoreStore(store_path(config)).read()
        model = load_weight_model(weight_model_path(config))
        requests = simulate_requests(population_user_ids(config), model.num_responses, seed=config.seed,
                                     candidates=int(config['candidates_per_request']),
                                     exposures=int(config['exposures_per_request']))

        report, decisions = simulate_policies(requests, store, model, truth,
                                              sigma=float(config['sigma']), top1=bool(config['top1']),
                                              seed=config.seed)
        write_decisions(decisions, config.path('decisions.csv'))
        report_path = config.path('policy_report.json')
        with open(report_path, 'w', encoding='utf-8') as fh:
            json.dump(report.to_dict(), fh, indent=2)

        for name, outcome in report.policies.items():
            self.stdout.write(f"🏁 {name:<12} {outcome.total:.4f}")
        summary = {'report': str(report_path), 'hmum_total': report.policies[HMUM].total,
                   'best_static': report.best_static[0], 'skipped_users': report.skipped_users}
        if report.skipped_users:
            summary['exit_code'] = EXIT_DATA
            summary['warning'] = f"{report.skipped_users} Nutzer ohne Store- oder Truth-Eintrag"
        return summary
