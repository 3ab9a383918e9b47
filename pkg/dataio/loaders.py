"""
CSV-Ein- und Ausgabe für Uplift-Datensätze

Format: `user_id,<features...>,treatment,<responses...>` mit Kopfzeile.
Zahlen werden mit repr() geschrieben, damit Lesen und Schreiben bytestabil ist.
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from uplift_engine.exceptions import DataError

from .schema import CATEGORICAL, CONTINUOUS, Dataset, DatasetSchema, FeatureSpec, RawTable

logger = logging.getLogger(__name__)

TREATMENT_COLUMN = 'treatment'
USER_COLUMN = 'user_id'

CRITEO_FEATURES = [f'f{i}' for i in range(12)]


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        parsed = float(value)
    except (TypeError, ValueError):
        raise DataError(f"Spalte '{column}': '{value}' ist keine Zahl", row=row)
    if not np.isfinite(parsed):
        raise DataError(f"Spalte '{column}': nicht-endlicher Wert '{value}'", row=row)
    return parsed


def read_table(path: Union[str, Path], schema: DatasetSchema,
               treatment_column: str = TREATMENT_COLUMN,
               response_columns: Optional[List[str]] = None) -> RawTable:
    """Rohtabelle lesen und gegen das Schema prüfen (Zeilennummern 1-basiert inkl. Header)"""
    response_columns = response_columns or list(schema.response_names)
    feature_names = schema.feature_names
    user_ids, features, treatment, responses = [], [], [], []

    try:
        fh = open(path, newline='', encoding='utf-8')
    except OSError as e:
        raise DataError(f"Datei {path} nicht lesbar: {e}")

    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: Kopfzeile fehlt", row=1)
        required = feature_names + [treatment_column] + response_columns
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: Spalten fehlen: {', '.join(missing)}", row=1)
        has_user = USER_COLUMN in reader.fieldnames

        for row_number, row in enumerate(reader, start=2):
            user_ids.append(row[USER_COLUMN] if has_user else str(row_number - 2))
            feature_row = []
            for spec in schema.features:
                value = _parse_float(row[spec.name], spec.name, row_number)
                if spec.kind == CATEGORICAL and (value != int(value) or not 0 <= value < spec.cardinality):
                    raise DataError(
                        f"Feature '{spec.name}': ID {row[spec.name]} außerhalb [0, {spec.cardinality})",
                        row=row_number)
                feature_row.append(value)
            features.append(feature_row)

            t_value = _parse_float(row[treatment_column], treatment_column, row_number)
            if t_value != int(t_value) or not 0 <= t_value <= schema.K:
                raise DataError(
                    f"Behandlung {row[treatment_column]} außerhalb [0, {schema.K}]", row=row_number)
            treatment.append(int(t_value))
            responses.append([_parse_float(row[c], c, row_number) for c in response_columns])

    table = RawTable(
        user_ids=user_ids,
        features=np.asarray(features, dtype=np.float64).reshape(len(user_ids), len(feature_names)),
        treatment=np.asarray(treatment, dtype=np.int64),
        responses=np.asarray(responses, dtype=np.float64).reshape(len(user_ids), len(response_columns)))
    counts = np.bincount(table.treatment, minlength=schema.K + 1) if len(table) else []
    logger.info(f"📥 {path}: {len(table)} Instanzen, pro Behandlung {list(map(int, counts))}")
    return table


def read_features(path: Union[str, Path], schema: DatasetSchema) -> Tuple[List[str], np.ndarray]:
    """Nur `user_id` und Feature-Spalten, z.B. für das Scoring ohne Labels"""
    feature_names = schema.feature_names
    user_ids, features = [], []
    try:
        fh = open(path, newline='', encoding='utf-8')
    except OSError as e:
        raise DataError(f"Datei {path} nicht lesbar: {e}")
    with fh:
        reader = csv.DictReader(fh)
        fieldnames = reader.fieldnames or []
        missing = [c for c in [USER_COLUMN] + feature_names if c not in fieldnames]
        if missing:
            raise DataError(f"{path}: Spalten fehlen: {', '.join(missing)}", row=1)
        for row_number, row in enumerate(reader, start=2):
            user_ids.append(row[USER_COLUMN])
            features.append([_parse_float(row[name], name, row_number) for name in feature_names])
    return user_ids, np.asarray(features, dtype=np.float64).reshape(len(user_ids), len(feature_names))


def load_csv(path: Union[str, Path], schema: DatasetSchema) -> Dataset:
    """CSV lesen und mit dem gefitteten Schema diskretisieren"""
    if not schema.is_fitted:
        raise DataError("load_csv braucht ein gefittetes Schema (Bin-Grenzen fehlen)")
    return read_table(path, schema).discretize(schema)


def _format(value: float, kind: str) -> str:
    return str(int(value)) if kind == CATEGORICAL else repr(float(value))


def write_table(table: RawTable, schema: DatasetSchema, path: Union[str, Path]):
    header = [USER_COLUMN] + schema.feature_names + [TREATMENT_COLUMN] + list(schema.response_names)
    kinds = [f.kind for f in schema.features]
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for i, user_id in enumerate(table.user_ids):
            writer.writerow(
                [user_id]
                + [_format(v, k) for v, k in zip(table.features[i], kinds)]
                + [str(int(table.treatment[i]))]
                + [repr(float(v)) for v in table.responses[i]])


def write_csv(instances, path: Union[str, Path], schema: DatasetSchema):
    """Diskretisierte Instanzen schreiben (Feature-IDs als Ganzzahlen)"""
    dataset = Dataset.from_instances(instances)
    header = [USER_COLUMN] + schema.feature_names + [TREATMENT_COLUMN] + list(schema.response_names)
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for i, user_id in enumerate(dataset.user_ids):
            writer.writerow([user_id] + [str(int(v)) for v in dataset.x[i]]
                            + [str(int(dataset.t[i]))] + [repr(float(v)) for v in dataset.y[i]])


def load_train_test(train_path, test_path, schema: DatasetSchema) -> Tuple[RawTable, RawTable]:
    """
    Getrennte Dateien: verzerrter Trainings-Log plus RCT-Testmenge.
    Es findet kein Debiasing statt.
    """
    train = read_table(train_path, schema)
    test = read_table(test_path, schema)
    logger.info(f"📚 Train/Test getrennt geladen: {len(train)} / {len(test)}")
    return train, test


def criteo_schema(response: str = 'visit') -> DatasetSchema:
    return DatasetSchema(
        features=tuple(FeatureSpec(name=f, kind=CONTINUOUS) for f in CRITEO_FEATURES),
        num_treatments=1,
        response_names=(response,))


def load_criteo(path: Union[str, Path], subsample: float = 1.0, seed: int = 0,
                response: str = 'visit') -> Tuple[RawTable, DatasetSchema]:
    """CRITEO-Layout: f0..f11, treatment, conversion, visit, exposure"""
    schema = criteo_schema(response)
    table = read_table(path, schema)
    if subsample < 1.0:
        keep = np.flatnonzero(np.random.default_rng(seed).random(len(table)) < subsample)
        table = table.subset(keep)
        logger.info(f"🎲 CRITEO-Stichprobe {subsample:.1%}: {len(table)} Zeilen")
    return table, schema
