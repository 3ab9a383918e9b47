"""CSV-Export von Uplift-Kurven für Plots"""

import csv
import logging
from pathlib import Path
from typing import Union

import numpy as np

from uplift_engine.exceptions import DataError

from .uplift import UpliftCurve

logger = logging.getLogger(__name__)

AREA_KEYS = ('model_area', 'random_area', 'perfect_area')
HEADER_ROWS = len(AREA_KEYS) + 1


def export_curve(curve: UpliftCurve, path: Union[str, Path]):
    """Kopf: drei Flächen-Zeilen (`# name,wert`) plus Spaltenzeile, dann die Punkte"""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        for key in AREA_KEYS:
            writer.writerow([f"# {key}", repr(float(getattr(curve, key)))])
        writer.writerow(['population_fraction', 'cumulative_uplift'])
        for fraction, value in zip(curve.fractions, curve.values):
            writer.writerow([repr(float(fraction)), repr(float(value))])
    logger.debug(f"📝 {curve.kind}-Kurve ({len(curve)} Punkte) → {path}")


def read_curve(path: Union[str, Path], kind: str = 'qini') -> UpliftCurve:
    areas = {}
    fractions, values = [], []
    try:
        with open(path, newline='', encoding='utf-8') as fh:
            rows = list(csv.reader(fh))
        for row in rows[:len(AREA_KEYS)]:
            areas[row[0].lstrip('# ').strip()] = float(row[1])
        for row in rows[HEADER_ROWS:]:
            fractions.append(float(row[0]))
            values.append(float(row[1]))
        area_values = {key: areas[key] for key in AREA_KEYS}
    except (OSError, IndexError, KeyError, ValueError) as e:
        raise DataError(f"Kurvendatei {path} nicht lesbar: {e}")
    return UpliftCurve(kind=kind, fractions=np.asarray(fractions), values=np.asarray(values),
                       **area_values)
