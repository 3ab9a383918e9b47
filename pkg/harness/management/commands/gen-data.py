"""Synthetischen RCT mit Ground Truth erzeugen"""

from dataio.loaders import write_table
from dataio.schema import dump_schema
from dataio.synthetic import generate_synthetic_rct, write_truth
from harness.base import UpliftCommand
from harness.pipeline import BASELINE_NAME, DATASET_NAME, SCHEMA_NAME, TRUTH_NAME


class Command(UpliftCommand):
    help = 'Erzeugt dataset.csv, schema.json, truth.csv und baseline.csv'
    command_name = 'gen-data'

    def add_command_arguments(self, parser):
        parser.add_argument('--n', type=int, help='Anzahl Instanzen')
        parser.add_argument('--num-treatments', type=int, help='Anzahl Behandlungen K')
        parser.add_argument('--num-responses', type=int, help='Anzahl Responses R')
        parser.add_argument('--noise-sd', type=float, help='Standardabweichung des Rauschens')

    def config_overrides(self, options):
        return {
            'n': options.get('n'),
            'num_treatments': options.get('num_treatments'),
            'num_responses': options.get('num_responses'),
            'noise_sd': options.get('noise_sd'),
        }

    def run(self, config, options):
        rct = generate_synthetic_rct(int(config['n']), int(config['num_treatments']),
                                     int(config['num_responses']), seed=config.seed,
                                     noise_sd=float(config['noise_sd']))
        write_table(rct.table, rct.schema, config.path(DATASET_NAME))
        dump_schema(rct.schema, config.path(SCHEMA_NAME))
        write_truth(rct.truth, config.path(TRUTH_NAME), config.path(BASELINE_NAME))

        self.stdout.write(f"📄 {len(rct.table)} Instanzen → {config.path(DATASET_NAME)}")
        return {
            'n': len(rct.table),
            'num_treatments': rct.schema.K,
            'num_responses': rct.schema.R,
            'dataset': str(config.path(DATASET_NAME)),
        }
