"""Zufälliger, seed-deterministischer Train/Validation/Test-Split"""

import logging
from typing import Sequence, Tuple

import numpy as np

from uplift_engine.exceptions import ContractError, DataError

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


def split_indices(n: int, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0):
    if n == 0:
        raise DataError("Split eines leeren Datensatzes")
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ContractError(f"Split-Verhältnisse müssen positiv sein und 1 ergeben: {ratios}")

    permutation = np.random.default_rng(seed).permutation(n)
    cuts = np.round(np.cumsum(ratios)[:-1] * n).astype(int)
    return tuple(np.sort(part) for part in np.split(permutation, cuts))


def split(dataset, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Tuple:
    """Disjunkt und erschöpfend; `dataset` braucht len() und subset()"""
    parts = split_indices(len(dataset), ratios, seed)
    logger.info(f"✂️ Split {len(dataset)} → {'/'.join(str(len(p)) for p in parts)} (seed {seed})")
    return tuple(dataset.subset(p) for p in parts)
