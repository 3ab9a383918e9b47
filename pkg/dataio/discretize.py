"""
Equal-Frequency-Diskretisierung stetiger Features

Grenzen liegen mittig zwischen benachbarten Ordnungsstatistiken,
Werte außerhalb landen im ersten bzw. letzten Bin.
"""

import logging
from typing import Dict, List, Sequence

import numpy as np

from uplift_engine.exceptions import ContractError, DataError

from .schema import CONTINUOUS, DatasetSchema, RawTable

logger = logging.getLogger(__name__)


def discretize_fit(column: Sequence[float], num_bins: int) -> List[float]:
    values = np.sort(np.asarray(column, dtype=np.float64))
    if num_bins < 2:
        raise ContractError(f"num_bins muss >= 2 sein, ist {num_bins}")
    if values.size == 0:
        raise DataError("Diskretisierung auf leerer Spalte")
    if values[0] == values[-1]:
        logger.warning(f"⚠️ Konstante Spalte ({values[0]}): nur ein Bin")
        return []

    n = values.size
    boundaries = []
    for i in range(1, num_bins):
        position = int(round(i * n / num_bins))
        position = min(max(position, 1), n - 1)
        boundary = 0.5 * (values[position - 1] + values[position])
        if boundary > values[0] and (not boundaries or boundary > boundaries[-1]):
            boundaries.append(float(boundary))
    return boundaries


def discretize_apply(column: Sequence[float], boundaries: Sequence[float]) -> np.ndarray:
    """Bin-ID = Anzahl Grenzen <= Wert; monoton im Wert"""
    return np.searchsorted(np.asarray(boundaries, dtype=np.float64),
                           np.asarray(column, dtype=np.float64), side='right').astype(np.int64)


def fit_schema(schema: DatasetSchema, train: RawTable, num_bins: int) -> DatasetSchema:
    """Grenzen aller stetigen Features auf dem Trainings-Split fitten"""
    boundaries: Dict[str, List[float]] = {}
    for j, spec in enumerate(schema.features):
        if spec.kind == CONTINUOUS:
            boundaries[spec.name] = discretize_fit(train.features[:, j], num_bins)
    fitted = schema.with_boundaries(boundaries)
    logger.info(f"📏 {len(boundaries)} stetige Features diskretisiert "
                f"(max. {num_bins} Bins, {len(train)} Trainingszeilen)")
    return fitted
