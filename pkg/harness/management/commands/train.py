"""HUM pro Response trainieren (Varianten hum, no-kl, independent)"""

import json

from harness.base import UpliftCommand
from harness.pipeline import VARIANTS, checkpoint_dir, checkpoint_path, load_experiment
from hum.checkpoint import save_checkpoint
from hum.training import train, train_independent


class Command(UpliftCommand):
    help = 'Trainiert ein Modell pro Response und schreibt Checkpoints'
    command_name = 'train'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Datensatz (Default: dataset.csv im Ausgabeverzeichnis)')
        parser.add_argument('--schema', help='Schema-Datei (Default: schema.json neben dem Datensatz)')
        parser.add_argument('--test-data', help='Separate RCT-Testdatei; --data ist dann der Trainings-Log')
        parser.add_argument('--criteo', help='CRITEO-Datei statt eines generierten Datensatzes')
        parser.add_argument('--subsample', type=float, help='Stichprobenanteil für CRITEO')
        parser.add_argument('--variant', choices=VARIANTS, default='hum')
        parser.add_argument('--lambda-kl', type=float, help='Gewicht der KL-Regularisierung')
        parser.add_argument('--epochs', type=int, help='Maximale Epochenzahl')
        parser.add_argument('--batch-size', type=int, help='Batchgröße')

    def config_overrides(self, options):
        overrides = {
            'data': options.get('data'),
            'schema': options.get('schema'),
            'test_data': options.get('test_data'),
            'criteo': options.get('criteo'),
            'subsample': options.get('subsample'),
            'variant': options.get('variant'),
            'lambda_kl': options.get('lambda_kl'),
            'max_epochs': options.get('epochs'),
            'batch_size': options.get('batch_size'),
        }
        if options.get('variant') == 'no-kl':
            overrides['lambda_kl'] = 0.0
        return overrides

    def run(self, config, options):
        variant = config['variant']
        experiment = load_experiment(config)
        training_config = dict(config.values, batch_size=config.batch_size(experiment.synthetic))
        checkpoint_dir(config).mkdir(parents=True, exist_ok=True)

        report = {'variant': variant, 'lambda_kl': float(training_config['lambda_kl']),
                  'batch_size': training_config['batch_size'], 'responses': {}}
        for r, response in enumerate(experiment.schema.response_names):
            run_key = f"{variant}_{response}"
            self.stdout.write(f"🏋️ {variant}: Response '{response}' ({r + 1}/{experiment.schema.R})")
            if variant == 'independent':
                model = train_independent(experiment.train, experiment.validation, training_config,
                                          response_index=r, schema=experiment.schema, run_key=run_key)
                history = {f"t{k}": h.to_dict() for k, h in model.history.items()}
            else:
                model = train(experiment.train, experiment.validation, training_config,
                              response_index=r, schema=experiment.schema, run_key=run_key)
                history = model.history.to_dict()
            path = checkpoint_path(config, variant, response)
            save_checkpoint(model, experiment.schema, path, extra={'variant': variant, 'seed': config.seed})
            report['responses'][response] = {'checkpoint': str(path), 'history': history}

        report_path = config.path(f"training_{variant}.json")
        with open(report_path, 'w', encoding='utf-8') as fh:
            json.dump(report, fh, indent=2)
        return {'variant': variant, 'report': str(report_path),
                'checkpoints': [v['checkpoint'] for v in report['responses'].values()]}
