"""
Entscheidungsregel der Online-Stufe

Kontrollschätzung = Mittel über die Branches, relativer Uplift
δ = ŷ^k / ŷ^{0,*} − 1, Gewichte w = ô / Σ ô und Score φ^k = Σ_r w_r·δ_r^k.
Behandlung k wird aktiviert, wenn φ^k > σ.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from uplift_engine.exceptions import DenominatorError, DimensionError, NumericalError

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-6
WEIGHT_SUM_FLOOR = 1e-12


@dataclass
class Decision:
    """Ergebnis für einen Nutzer: Rohwerte, normierte Gewichte, Scores, aktivierte Behandlungen"""
    raw: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    enabled: Tuple[int, ...]


def aggregate_control(estimates) -> np.ndarray:
    """Arithmetisches Mittel entlang der letzten Achse (Branch-Kontrollschätzungen)"""
    values = np.asarray(estimates, dtype=np.float64)
    if values.ndim == 0 or values.shape[-1] == 0:
        raise DimensionError("Keine Kontrollschätzungen zum Aggregieren")
    mean = values.mean(axis=-1)
    tol = 1e-12 * np.maximum(1.0, np.abs(mean))
    if not np.all((values.min(axis=-1) - tol <= mean) & (mean <= values.max(axis=-1) + tol)):
        raise NumericalError("Kontrollmittel außerhalb [min, max]")
    return mean if values.ndim > 1 else float(mean)


def relative_uplift(treated, control_star, user_id: Optional[str] = None):
    """δ = ŷ^k / ŷ^{0,*} − 1; Nenner unter der Schwelle ist ein Fehler"""
    treated = np.asarray(treated, dtype=np.float64)
    control_star = np.asarray(control_star, dtype=np.float64)
    too_small = np.abs(control_star) < DENOMINATOR_FLOOR
    if np.any(too_small):
        value = float(control_star[too_small].reshape(-1)[0]) if control_star.ndim else float(control_star)
        raise DenominatorError(user_id, value)
    delta = treated / control_star - 1.0
    return float(delta) if delta.ndim == 0 else delta


def value_weights(raw) -> np.ndarray:
    """Proportionale Normierung; bei Σ ô < 1e-12 gleichverteilt"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] == 0:
        raise DimensionError("Leerer Gewichtsvektor")
    total = raw.sum(axis=-1, keepdims=True)
    uniform = np.full_like(raw, 1.0 / raw.shape[-1])
    safe = np.where(total < WEIGHT_SUM_FLOOR, 1.0, total)
    return np.where(total < WEIGHT_SUM_FLOOR, uniform, raw / safe)


def comprehensive_score(weights, delta) -> np.ndarray:
    """φ^k = Σ_r w_r·δ_r^k; weights (R,), delta (R, K)"""
    weights = np.asarray(weights, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[0] != weights.shape[-1]:
        raise DimensionError(f"δ-Matrix {delta.shape} passt nicht zu {weights.shape[-1]} Gewichten")
    return weights @ delta


def decide(weights, delta, sigma: float = 0.0, top1: bool = False,
           raw: Optional[Sequence[float]] = None) -> Decision:
    """Aktiviert jede Behandlung mit φ^k > σ; im Top-1-Modus nur die beste davon"""
    phi = comprehensive_score(weights, delta)
    passing = [k + 1 for k in range(len(phi)) if phi[k] > sigma]
    if top1 and passing:
        passing = [max(passing, key=lambda k: (phi[k - 1], -k))]
    return Decision(raw=np.asarray(raw if raw is not None else weights, dtype=np.float64),
                    weights=np.asarray(weights, dtype=np.float64), phi=phi, enabled=tuple(passing))
