"""Proportions-Labels aus dem Exposure-Log einer Anfrage"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from uplift_engine.exceptions import DimensionError

logger = logging.getLogger(__name__)


def exposure_types(percentiles) -> np.ndarray:
    """Typ pro Video: höchstes Ranking-Perzentil, bei Gleichstand der kleinste Index"""
    return np.argmax(np.asarray(percentiles, dtype=np.float64), axis=1)


def proportion_label(percentiles, num_responses: Optional[int] = None) -> Optional[np.ndarray]:
    """o_r = V_r / V; None bei V = 0"""
    percentiles = np.asarray(percentiles, dtype=np.float64)
    if percentiles.ndim != 2:
        if percentiles.size == 0:
            return None
        raise DimensionError(f"Perzentile brauchen Shape (V, R), erhalten {percentiles.shape}")
    R = num_responses or percentiles.shape[1]
    if percentiles.shape[0] == 0:
        return None
    counts = np.bincount(exposure_types(percentiles), minlength=R).astype(np.float64)
    return counts / percentiles.shape[0]


def build_labels(requests: Sequence, num_responses: int) -> Tuple[np.ndarray, List[int], int]:
    """Labels aller Anfragen; Anfragen ohne Exposures werden gezählt und übersprungen"""
    labels, kept, skipped = [], [], 0
    for i, request in enumerate(requests):
        label = proportion_label(request.exposures, num_responses)
        if label is None:
            skipped += 1
            continue
        labels.append(label)
        kept.append(i)
    if skipped:
        logger.warning(f"⚠️ {skipped} Anfragen ohne Exposures übersprungen")
    return np.asarray(labels).reshape(len(kept), num_responses), kept, skipped
