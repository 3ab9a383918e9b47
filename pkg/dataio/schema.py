"""
Datensatz-Schema, Instanzen und spaltenweise Datensätze

Ein RawTable hält Rohwerte (stetige Features unverändert), ein Dataset
die diskretisierten Feature-IDs, die direkt in die Embeddings gehen.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from uplift_engine.exceptions import DataError, FeatureIndexError

logger = logging.getLogger(__name__)

CATEGORICAL = 'categorical'
CONTINUOUS = 'continuous'


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    cardinality: Optional[int] = None
    boundaries: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise DataError(f"Feature '{self.name}': unbekannte Art '{self.kind}'")
        if self.kind == CATEGORICAL and (self.cardinality is None or self.cardinality < 1):
            raise DataError(f"Feature '{self.name}': kategorial ohne gültige Kardinalität")
        if self.boundaries is not None:
            b = np.asarray(self.boundaries, dtype=float)
            if np.any(np.diff(b) <= 0):
                raise DataError(f"Feature '{self.name}': Bin-Grenzen nicht streng steigend")

    @property
    def is_fitted(self) -> bool:
        return self.kind == CATEGORICAL or self.boundaries is not None

    @property
    def num_ids(self) -> int:
        """Anzahl Embedding-Zeilen für dieses Feature"""
        if self.kind == CATEGORICAL:
            return self.cardinality
        if self.boundaries is None:
            raise DataError(f"Feature '{self.name}': Diskretisierung nicht gefittet")
        return len(self.boundaries) + 1

    def to_dict(self) -> dict:
        data = {'name': self.name, 'kind': self.kind}
        if self.cardinality is not None:
            data['cardinality'] = self.cardinality
        if self.boundaries is not None:
            data['boundaries'] = list(self.boundaries)
        return data


@dataclass(frozen=True)
class DatasetSchema:
    features: Tuple[FeatureSpec, ...]
    num_treatments: int
    response_names: Tuple[str, ...]

    def __post_init__(self):
        if self.num_treatments < 1:
            raise DataError(f"K muss >= 1 sein, ist {self.num_treatments}")
        if len(self.response_names) < 1:
            raise DataError("Mindestens eine Response erforderlich")
        if not self.features:
            raise DataError("Schema ohne Features")

    @property
    def K(self) -> int:
        return self.num_treatments

    @property
    def R(self) -> int:
        return len(self.response_names)

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def is_fitted(self) -> bool:
        return all(f.is_fitted for f in self.features)

    @property
    def cardinalities(self) -> List[int]:
        return [f.num_ids for f in self.features]

    def with_boundaries(self, boundaries: Dict[str, Sequence[float]]) -> 'DatasetSchema':
        features = tuple(
            replace(f, boundaries=tuple(float(b) for b in boundaries[f.name]))
            if f.name in boundaries else f
            for f in self.features)
        return replace(self, features=features)

    def to_dict(self) -> dict:
        return {
            'features': [f.to_dict() for f in self.features],
            'num_treatments': self.num_treatments,
            'responses': list(self.response_names),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'DatasetSchema':
        try:
            features = tuple(
                FeatureSpec(
                    name=f['name'], kind=f['kind'],
                    cardinality=f.get('cardinality'),
                    boundaries=tuple(f['boundaries']) if f.get('boundaries') is not None else None)
                for f in data['features'])
            return cls(features=features, num_treatments=int(data['num_treatments']),
                       response_names=tuple(data['responses']))
        except KeyError as e:
            raise DataError(f"Schema-Datei unvollständig: Schlüssel {e} fehlt")


def schema_hash(schema: DatasetSchema) -> str:
    payload = json.dumps(schema.to_dict(), sort_keys=True)
    return hashlib.md5(payload.encode()).hexdigest()


def load_schema(path: Union[str, Path]) -> DatasetSchema:
    try:
        with open(path, encoding='utf-8') as fh:
            return DatasetSchema.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Schema {path} nicht lesbar: {e}")


def dump_schema(schema: DatasetSchema, path: Union[str, Path]):
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class Instance:
    """Ein RCT-Datensatz: Feature-IDs, genau eine Behandlung, R Responses"""
    user_id: str
    x: Tuple[int, ...]
    t: int
    y: Tuple[float, ...]


@dataclass
class RawTable:
    """Rohdaten spaltenweise; stetige Features noch nicht diskretisiert"""
    user_ids: List[str]
    features: np.ndarray
    treatment: np.ndarray
    responses: np.ndarray

    def __len__(self):
        return len(self.user_ids)

    def subset(self, indices) -> 'RawTable':
        indices = np.asarray(indices, dtype=np.int64)
        return RawTable(
            user_ids=[self.user_ids[i] for i in indices],
            features=self.features[indices],
            treatment=self.treatment[indices],
            responses=self.responses[indices])

    def discretize(self, schema: DatasetSchema) -> 'Dataset':
        from .discretize import discretize_apply

        columns = []
        for j, spec in enumerate(schema.features):
            column = self.features[:, j]
            if spec.kind == CONTINUOUS:
                if spec.boundaries is None:
                    raise DataError(f"Feature '{spec.name}': Schema ist nicht gefittet")
                columns.append(discretize_apply(column, spec.boundaries))
            else:
                columns.append(column.astype(np.int64))
        x = np.stack(columns, axis=1) if columns else np.zeros((len(self), 0), dtype=np.int64)
        return Dataset(self.user_ids, x, self.treatment, self.responses, schema=schema)


class Dataset(Sequence):
    """Spaltenweiser Container, der sich wie eine Liste von Instance verhält"""

    def __init__(self, user_ids, x, t, y, schema: Optional[DatasetSchema] = None):
        self.user_ids = list(user_ids)
        self.x = np.asarray(x, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.float64)
        self.schema = schema
        if schema is not None:
            validate_ids(self.x, schema)

    def __len__(self):
        return len(self.user_ids)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return self.subset(np.arange(len(self))[index])
        return Instance(
            user_id=self.user_ids[index],
            x=tuple(int(v) for v in self.x[index]),
            t=int(self.t[index]),
            y=tuple(float(v) for v in self.y[index]))

    def subset(self, indices) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset([self.user_ids[i] for i in indices], self.x[indices],
                       self.t[indices], self.y[indices], schema=self.schema)

    def treatment_counts(self, K: int) -> Dict[int, int]:
        counts = np.bincount(self.t, minlength=K + 1)
        return {k: int(c) for k, c in enumerate(counts)}

    @classmethod
    def from_instances(cls, instances: Sequence[Instance],
                       schema: Optional[DatasetSchema] = None) -> 'Dataset':
        if isinstance(instances, Dataset):
            return instances
        return cls([i.user_id for i in instances], [i.x for i in instances],
                   [i.t for i in instances], [i.y for i in instances], schema=schema)


def validate_ids(x: np.ndarray, schema: DatasetSchema):
    for j, spec in enumerate(schema.features):
        column = x[:, j]
        limit = spec.num_ids
        bad = (column < 0) | (column >= limit)
        if np.any(bad):
            raise FeatureIndexError(spec.name, int(column[bad][0]), limit)
