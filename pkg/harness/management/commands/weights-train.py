"""Gewichtsmodell auf simulierten Anfragen trainieren"""

from ddm.requests import simulate_requests
from ddm.weights import save_weight_model, train_weight_model
from dataio.schema import load_schema
from harness.base import UpliftCommand
from harness.pipeline import population_user_ids, schema_path, weight_model_path


class Command(UpliftCommand):
    help = 'Simuliert Anfragen der Datensatz-Nutzer und trainiert das Gewichtsmodell'
    command_name = 'weights-train'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Datensatz (Default: dataset.csv im Ausgabeverzeichnis)')
        parser.add_argument('--schema', help='Schema-Datei (Default: schema.json neben dem Datensatz)')
        parser.add_argument('--users', help='Feature-Datei der Nutzer (Default: Datensatz)')
        parser.add_argument('--weights', help='Zieldatei des Gewichtsmodells')
        parser.add_argument('--epochs', type=int, help='Maximale Epochenzahl')

    def config_overrides(self, options):
        return {
            'data': options.get('data'),
            'schema': options.get('schema'),
            'users': options.get('users'),
            'weights': options.get('weights'),
            'max_epochs': options.get('epochs'),
        }

    def run(self, config, options):
        response_names = list(load_schema(schema_path(config)).response_names)
        requests = simulate_requests(population_user_ids(config), len(response_names), seed=config.seed,
                                     candidates=int(config['candidates_per_request']),
                                     exposures=int(config['exposures_per_request']))
        model = train_weight_model(requests, config.values, response_names=response_names,
                                   batch_size=config.batch_size(synthetic=True))
        path = weight_model_path(config)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_weight_model(model, path)

        final = model.history[-1] if model.history else {}
        self.stdout.write(f"⚖️ {len(requests)} Anfragen, Val-Loss {final.get('val_loss', float('nan')):.6f}")
        return {'weights': str(path), 'requests': len(requests),
                'skipped_requests': model.skipped_requests, 'history': model.history}
