"""
Gemeinsames Laden, Splitten und Diskretisieren für die Harness-Commands

Artefakte eines Laufverzeichnisses:
  dataset.csv, schema.json, truth.csv, baseline.csv   (gen-data)
  checkpoints/{variant}_{response}.json               (train)
  scores.csv, weight_model.json                        (score, weights-train)
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from dataio.discretize import fit_schema
from dataio.loaders import load_criteo, load_train_test, read_features, read_table
from dataio.schema import CATEGORICAL, Dataset, DatasetSchema, RawTable, load_schema, schema_hash
from dataio.splits import split_indices
from dataio.synthetic import SyntheticTruth, read_truth
from hum.checkpoint import load_checkpoint
from uplift_engine.exceptions import CheckpointVersionError, ConfigError, DataError

from .config import RunConfig

logger = logging.getLogger(__name__)

DATASET_NAME = 'dataset.csv'
SCHEMA_NAME = 'schema.json'
TRUTH_NAME = 'truth.csv'
BASELINE_NAME = 'baseline.csv'
CHECKPOINT_DIR = 'checkpoints'
STORE_NAME = 'scores.csv'
WEIGHT_MODEL_NAME = 'weight_model.json'
VARIANTS = ('hum', 'no-kl', 'independent')
TEST_DATA_VALIDATION_SHARE = 0.1


@dataclass
class Experiment:
    """Diskretisierte Splits plus gefittetes Schema; truth nur bei generierten Daten"""
    train: Dataset
    validation: Dataset
    test: Dataset
    schema: DatasetSchema
    truth: Optional[SyntheticTruth] = None

    @property
    def synthetic(self) -> bool:
        return self.truth is not None


def data_path(config: RunConfig) -> Path:
    return Path(config.get('data') or config.path(DATASET_NAME))


def schema_path(config: RunConfig) -> Path:
    if config.get('schema'):
        return Path(config['schema'])
    return data_path(config).with_name(SCHEMA_NAME)


def checkpoint_dir(config: RunConfig) -> Path:
    return Path(config.get('checkpoints') or config.path(CHECKPOINT_DIR))


def checkpoint_path(config: RunConfig, variant: str, response: str) -> Path:
    return checkpoint_dir(config) / f"{variant}_{response}.json"


def store_path(config: RunConfig) -> Path:
    return Path(config.get('store') or config.path(STORE_NAME))


def weight_model_path(config: RunConfig) -> Path:
    return Path(config.get('weights') or config.path(WEIGHT_MODEL_NAME))


def load_truth(config: RunConfig) -> Optional[SyntheticTruth]:
    """Ground Truth neben dem Datensatz, falls vorhanden"""
    base = data_path(config)
    truth = Path(config.get('truth') or base.with_name(TRUTH_NAME))
    baseline = Path(config.get('baseline') or base.with_name(BASELINE_NAME))
    if not (truth.exists() and baseline.exists()):
        return None
    return read_truth(truth, baseline)


def _raw_splits(config: RunConfig) -> Tuple[RawTable, RawTable, RawTable, DatasetSchema]:
    seed = config.seed
    if config.get('criteo'):
        table, schema = load_criteo(config['criteo'], float(config.get('subsample') or 1.0), seed)
        train, validation, test = (table.subset(p) for p in
                                   split_indices(len(table), config['split_ratios'], seed))
        return train, validation, test, schema

    schema = load_schema(schema_path(config))
    if config.get('test_data'):
        full_train, test = load_train_test(data_path(config), config['test_data'], schema)
        train_idx, val_idx = split_indices(
            len(full_train), (1 - TEST_DATA_VALIDATION_SHARE, TEST_DATA_VALIDATION_SHARE), seed)
        return full_train.subset(train_idx), full_train.subset(val_idx), test, schema

    table = read_table(data_path(config), schema)
    train, validation, test = (table.subset(p) for p in
                               split_indices(len(table), config['split_ratios'], seed))
    return train, validation, test, schema


def load_experiment(config: RunConfig) -> Experiment:
    train, validation, test, schema = _raw_splits(config)
    if len(train) == 0:
        raise DataError("Trainings-Split ist leer")
    fitted = fit_schema(schema, train, int(config['num_bins']))
    truth = None
    if not config.get('criteo') and not config.get('test_data'):
        truth = load_truth(config)
    logger.info(f"📦 Experiment: {len(train)}/{len(validation)}/{len(test)} "
                f"(Train/Val/Test), K={fitted.K}, R={fitted.R}")
    return Experiment(train=train.discretize(fitted), validation=validation.discretize(fitted),
                      test=test.discretize(fitted), schema=fitted, truth=truth)


def load_test_split(config: RunConfig, schema: DatasetSchema) -> Tuple[Dataset, Optional[SyntheticTruth]]:
    """Test-Split wie beim Training, diskretisiert mit dem Schema aus dem Checkpoint"""
    _, _, test, raw_schema = _raw_splits(config)
    if raw_schema.feature_names != schema.feature_names:
        raise CheckpointVersionError("Checkpoint-Features passen nicht zum Datensatz")
    truth = None
    if not config.get('criteo') and not config.get('test_data'):
        truth = load_truth(config)
    return test.discretize(schema), truth


def load_variant_models(config: RunConfig, variant: str) -> Tuple[List, DatasetSchema]:
    """Alle Checkpoints einer Variante, in Response-Reihenfolge"""
    if variant not in VARIANTS:
        raise ConfigError(f"Unbekannte Variante '{variant}'")
    found = sorted(checkpoint_dir(config).glob(f"{variant}_*.json"))
    if not found:
        raise DataError(f"Keine Checkpoints für Variante '{variant}' in {checkpoint_dir(config)}")

    loaded = [load_checkpoint(path) for path in found]
    schema = loaded[0][1]
    expected_hash = schema_hash(schema)
    by_index = {}
    for (model, model_schema), path in zip(loaded, found):
        if schema_hash(model_schema) != expected_hash:
            raise CheckpointVersionError(f"{path}: Schema weicht von den übrigen Checkpoints ab")
        by_index[model.response_index] = model
    missing = [name for r, name in enumerate(schema.response_names) if r not in by_index]
    if missing:
        raise DataError(f"Checkpoints fehlen für Responses: {', '.join(missing)}")
    return [by_index[r] for r in range(schema.R)], schema


def score_population(path, schema: DatasetSchema) -> Tuple[Dataset, List[str]]:
    """
    Feature-Datei für das Scoring diskretisieren. Zeilen mit ungültigen
    kategorialen IDs werden protokolliert und übersprungen.
    """
    user_ids, features = read_features(path, schema)
    valid = np.ones(len(user_ids), dtype=bool)
    for j, spec in enumerate(schema.features):
        if spec.kind == CATEGORICAL:
            column = features[:, j]
            bad = (column < 0) | (column >= spec.cardinality) | (column != np.floor(column))
            for i in np.flatnonzero(bad & valid):
                logger.warning(f"⚠️ Nutzer {user_ids[i]}: Feature '{spec.name}' = {column[i]:g} "
                               f"außerhalb [0, {spec.cardinality}), übersprungen")
            valid &= ~bad
    skipped = [u for u, ok in zip(user_ids, valid) if not ok]
    keep = np.flatnonzero(valid)
    n = keep.size
    table = RawTable(user_ids=[user_ids[i] for i in keep], features=features[keep],
                     treatment=np.zeros(n, dtype=np.int64), responses=np.zeros((n, schema.R)))
    return table.discretize(schema), skipped


def population_user_ids(config: RunConfig) -> List[str]:
    """Nutzer des Datensatzes in Dateireihenfolge, Grundlage der simulierten Anfragen"""
    schema = load_schema(schema_path(config))
    return read_features(config.get('users') or data_path(config), schema)[0]
