"""QINI/AUUC pro (Behandlung, Response) auf dem Test-Split"""

import json

import numpy as np

from harness.base import UpliftCommand
from harness.pipeline import VARIANTS, load_test_split, load_variant_models
from hum.inference import control_branch_gap, infer_all_treatments
from metrics.export import export_curve
from metrics.uplift import auuc, evaluate_treatment, qini


class Command(UpliftCommand):
    help = 'Evaluiert die Checkpoints einer Variante und exportiert die Kurven'
    command_name = 'evaluate'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Datensatz (Default: dataset.csv im Ausgabeverzeichnis)')
        parser.add_argument('--schema', help='Schema-Datei (Default: schema.json neben dem Datensatz)')
        parser.add_argument('--test-data', help='Separate RCT-Testdatei')
        parser.add_argument('--criteo', help='CRITEO-Datei')
        parser.add_argument('--subsample', type=float, help='Stichprobenanteil für CRITEO')
        parser.add_argument('--checkpoints', help='Checkpoint-Verzeichnis')
        parser.add_argument('--variant', choices=VARIANTS, default='hum')

    def config_overrides(self, options):
        return {
            'data': options.get('data'),
            'schema': options.get('schema'),
            'test_data': options.get('test_data'),
            'criteo': options.get('criteo'),
            'subsample': options.get('subsample'),
            'checkpoints': options.get('checkpoints'),
            'variant': options.get('variant'),
        }

    def run(self, config, options):
        variant = config['variant']
        models, schema = load_variant_models(config, variant)
        test, truth = load_test_split(config, schema)
        if truth is not None:
            truth = truth.align(test.user_ids)
        curve_dir = config.path('curves')
        curve_dir.mkdir(parents=True, exist_ok=True)

        report = {'variant': variant, 'n_test': len(test), 'cells': [], 'control_branch_gap': {}}
        for r, model in enumerate(models):
            response = schema.response_names[r]
            estimates = infer_all_treatments(model, test)
            report['control_branch_gap'][response] = control_branch_gap(estimates)
            y = test.y[:, r]
            for k in range(1, schema.K + 1):
                scores = estimates.uplift(k)
                entry = evaluate_treatment(scores, test.t, y, k, response=response)
                if truth is not None:
                    entry['oracle_qini'] = evaluate_treatment(
                        truth.tau[:, r, k - 1], test.t, y, k, response=response)['qini']
                report['cells'].append(entry)

                rows = (test.t == 0) | (test.t == k)
                treated = (test.t[rows] == k).astype(int)
                for kind, metric in (('qini', qini), ('auuc', auuc)):
                    curve, _ = metric(scores[rows], treated, y[rows])
                    export_curve(curve, curve_dir / f"{variant}_{response}_t{k}_{kind}.csv")

        report['mean_qini'] = float(np.mean([c['qini'] for c in report['cells']]))
        report_path = config.path(f"evaluation_{variant}.json")
        with open(report_path, 'w', encoding='utf-8') as fh:
            json.dump(report, fh, indent=2)
        for cell in report['cells']:
            self.stdout.write(f"📈 t{cell['treatment']} {cell['response']}: "
                              f"QINI {cell['qini']:.4f}, AUUC {cell['auuc']:.4f}")
        return {'variant': variant, 'report': str(report_path), 'mean_qini': report['mean_qini'],
                'control_branch_gap': report['control_branch_gap']}
