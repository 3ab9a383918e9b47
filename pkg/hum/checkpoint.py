"""
JSON-Checkpoints für HUM-Modelle

{"version", "kind", "schema", "schema_hash", "response", "hyperparameters",
 "branch_treatments", "params": {name: {"shape", "values"}}}
Die unabhängige Variante speichert eine Liste solcher Modell-Einträge.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from dataio.schema import DatasetSchema, schema_hash
from uplift_engine.exceptions import CheckpointVersionError, DataError

from .model import HumHyperparameters, HumModel
from .training import IndependentUpliftModel

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
KIND_HUM = 'hum'
KIND_INDEPENDENT = 'hum-independent'


def encode_params(state: dict) -> dict:
    return {name: {'shape': list(value.shape), 'values': value.reshape(-1).tolist()}
            for name, value in state.items()}


def decode_params(payload: dict) -> dict:
    return {name: np.asarray(entry['values'], dtype=np.float64).reshape(entry['shape'])
            for name, entry in payload.items()}


def _model_entry(model: HumModel) -> dict:
    return {
        'num_treatments': model.num_treatments,
        'hyperparameters': model.hp.to_dict(),
        'branch_treatments': list(model.branch_treatments),
        'params': encode_params(model.state_dict()),
    }


def _model_from_entry(entry: dict, schema: DatasetSchema, response_index: int) -> HumModel:
    model = HumModel(schema.cardinalities, int(entry['num_treatments']),
                     HumHyperparameters(**entry['hyperparameters']),
                     np.random.default_rng(0),
                     branch_treatments=entry['branch_treatments'],
                     feature_names=schema.feature_names,
                     response_index=response_index,
                     response_name=schema.response_names[response_index])
    model.load_state_dict(decode_params(entry['params']))
    return model


def save_checkpoint(model, schema: DatasetSchema, path: Union[str, Path], extra: Optional[dict] = None):
    """HumModel oder IndependentUpliftModel als JSON sichern"""
    payload = {
        'version': CHECKPOINT_VERSION,
        'schema': schema.to_dict(),
        'schema_hash': schema_hash(schema),
        'response': model.response_name,
        'response_index': model.response_index,
    }
    if isinstance(model, IndependentUpliftModel):
        payload['kind'] = KIND_INDEPENDENT
        payload['models'] = [_model_entry(m) for m in model.models]
    else:
        payload['kind'] = KIND_HUM
        payload.update(_model_entry(model))
    if extra:
        payload['extra'] = extra

    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(payload, fh)
    logger.info(f"💾 Checkpoint {payload['kind']} für '{model.response_name}' → {path}")


def load_checkpoint(path: Union[str, Path],
                    expected_schema: Optional[DatasetSchema] = None) -> Tuple[object, DatasetSchema]:
    """Lädt Modell plus eingebettetes Schema; prüft Version und Schema-Hash"""
    try:
        with open(path, encoding='utf-8') as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Checkpoint {path} nicht lesbar: {e}")

    version = payload.get('version')
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"Checkpoint-Version {version} nicht unterstützt (erwartet {CHECKPOINT_VERSION})")
    schema = DatasetSchema.from_dict(payload['schema'])
    if schema_hash(schema) != payload.get('schema_hash'):
        raise CheckpointVersionError(f"Checkpoint {path}: Schema-Hash stimmt nicht")
    if expected_schema is not None and schema_hash(expected_schema) != payload['schema_hash']:
        raise CheckpointVersionError(f"Checkpoint {path} passt nicht zum erwarteten Schema")

    response_index = int(payload.get('response_index', 0))
    kind = payload.get('kind')
    if kind == KIND_HUM:
        model = _model_from_entry(payload, schema, response_index)
    elif kind == KIND_INDEPENDENT:
        sub_schema = DatasetSchema(schema.features, 1, schema.response_names)
        models = [_model_from_entry(entry, sub_schema, response_index) for entry in payload['models']]
        model = IndependentUpliftModel(models, schema.response_names[response_index], response_index)
    else:
        raise CheckpointVersionError(f"Unbekannter Checkpoint-Typ '{kind}'")
    return model, schema
