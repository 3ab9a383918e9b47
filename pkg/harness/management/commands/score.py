"""δ für alle Nutzer berechnen und den Score-Store ersetzen"""

from ddm.store import ScoreStore, score_users
from harness.base import UpliftCommand
from harness.pipeline import VARIANTS, data_path, load_variant_models, score_population, store_path
from hum.inference import infer_responses
from uplift_engine.exceptions import EXIT_DATA


class Command(UpliftCommand):
    help = 'Schreibt ŷ, ŷ^{0,*} und δ pro Nutzer, Response und Behandlung in den Score-Store'
    command_name = 'score'

    def add_command_arguments(self, parser):
        parser.add_argument('--users', help='Feature-Datei der Nutzer (Default: Datensatz)')
        parser.add_argument('--data', help='Datensatz (Default: dataset.csv im Ausgabeverzeichnis)')
        parser.add_argument('--checkpoints', help='Checkpoint-Verzeichnis')
        parser.add_argument('--variant', choices=VARIANTS, default='hum')
        parser.add_argument('--store', help='Zieldatei (.csv oder .jsonl)')

    def config_overrides(self, options):
        return {
            'users': options.get('users'),
            'data': options.get('data'),
            'checkpoints': options.get('checkpoints'),
            'variant': options.get('variant'),
            'store': options.get('store'),
        }

    def run(self, config, options):
        models, schema = load_variant_models(config, config['variant'])
        population, invalid = score_population(config.get('users') or data_path(config), schema)
        scores, skipped = score_users(infer_responses(models, population))
        skipped = invalid + skipped

        store = ScoreStore(store_path(config))
        rows = store.write(scores)
        self.stdout.write(f"💾 {len(scores)} Nutzer, {rows} Zeilen → {store.path}")
        summary = {'store': str(store.path), 'users': len(scores), 'rows': rows,
                   'skipped_users': len(skipped)}
        if skipped:
            summary['exit_code'] = EXIT_DATA
            summary['warning'] = f"{len(skipped)} Nutzer übersprungen"
        return summary
