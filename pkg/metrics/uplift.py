"""
QINI- und AUUC-Kurven mit normierten Koeffizienten

Koeffizient = (Fläche Modell − Fläche Zufall) / (Fläche perfekt − Fläche Zufall).
Jede Instanz ist ein Kurvenpunkt; Gleichstände im Score behalten die
Eingabereihenfolge (stabile absteigende Sortierung).
Stetige Labels werden per Min-Max normiert und bekommen eine eigene
perfekte Ordnung (behandelte absteigend, Kontrolle aufsteigend).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from uplift_engine.exceptions import DimensionError, MetricError

logger = logging.getLogger(__name__)

QINI = 'qini'
AUUC = 'auuc'
# Nenner unterhalb dieser Schwelle: perfekte Kurve nicht von Zufall unterscheidbar
MIN_AREA_GAP = 1e-12


@dataclass
class UpliftCurve:
    kind: str
    fractions: np.ndarray
    values: np.ndarray
    model_area: float
    random_area: float
    perfect_area: float

    @property
    def coefficient(self) -> float:
        return (self.model_area - self.random_area) / (self.perfect_area - self.random_area)

    def __len__(self):
        return len(self.fractions)


@dataclass
class AdaptedLabels:
    """Normierte Labels plus passende perfekte Ordnung"""
    values: np.ndarray
    minimum: float
    maximum: float
    is_binary: bool

    def perfect_order(self, treated: np.ndarray) -> np.ndarray:
        return perfect_order(treated, self.values, binary=self.is_binary)


def _validate(scores, treated, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    treated = np.asarray(treated).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not (len(scores) == len(treated) == len(y)):
        raise DimensionError(f"Längen passen nicht: scores {len(scores)}, t {len(treated)}, y {len(y)}")
    if not np.all(np.isin(treated, (0, 1))):
        raise MetricError("Behandlungsflag muss 0 oder 1 sein")
    treated = treated.astype(bool)
    if treated.all() or not treated.any():
        raise MetricError("Mindestens eine behandelte und eine Kontrollinstanz erforderlich")
    if not np.all(np.isfinite(scores)) or not np.all(np.isfinite(y)):
        raise MetricError("Scores und Labels müssen endlich sein")
    return scores, treated, y


def _is_binary(y: np.ndarray) -> bool:
    return bool(np.all((y == 0.0) | (y == 1.0)))


def continuous_adapt(y) -> AdaptedLabels:
    """Min-Max-Normierung auf [0, 1]; auf {0,1} ist sie die Identität"""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise MetricError("Keine Labels")
    low, high = float(y.min()), float(y.max())
    if high - low <= 0:
        raise MetricError(f"Konstante Labels ({low}): Min-Max-Normierung nicht möglich")
    values = (y - low) / (high - low)
    return AdaptedLabels(values=values, minimum=low, maximum=high, is_binary=_is_binary(values))


def perfect_order(treated: np.ndarray, y: np.ndarray, binary: bool) -> np.ndarray:
    """
    binär: behandelte Responder, Kontroll-Nichtresponder, behandelte
    Nichtresponder, Kontroll-Responder. stetig: behandelte nach y absteigend,
    danach Kontrolle nach y aufsteigend.
    """
    index = np.arange(len(y))
    if binary:
        responder = y == 1.0
        groups = [treated & responder, ~treated & ~responder, treated & ~responder, ~treated & responder]
        return np.concatenate([index[g] for g in groups])
    t_idx = index[treated]
    c_idx = index[~treated]
    t_sorted = t_idx[np.argsort(-y[t_idx], kind='stable')]
    c_sorted = c_idx[np.argsort(y[c_idx], kind='stable')]
    return np.concatenate([t_sorted, c_sorted])


def _cumulative_values(kind: str, treated: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kurvenwert nach jedem Präfix der gegebenen Reihenfolge"""
    n_t = np.cumsum(treated).astype(np.float64)
    n_c = np.cumsum(~treated).astype(np.float64)
    y_t = np.cumsum(np.where(treated, y, 0.0))
    y_c = np.cumsum(np.where(treated, 0.0, y))

    with np.errstate(divide='ignore', invalid='ignore'):
        if kind == QINI:
            # Ohne Kontrollinstanzen zählt nur die behandelte Summe
            return np.where(n_c > 0, y_t - y_c * n_t / np.where(n_c > 0, n_c, 1.0), y_t)
        mean_t = np.where(n_t > 0, y_t / np.where(n_t > 0, n_t, 1.0), 0.0)
        mean_c = np.where(n_c > 0, y_c / np.where(n_c > 0, n_c, 1.0), 0.0)
        return (mean_t - mean_c) * np.arange(1, len(y) + 1)


def _curve_points(kind: str, order: np.ndarray, treated: np.ndarray, y: np.ndarray):
    """Ein Punkt je Präfix der Reihenfolge, beginnend bei (0, 0)"""
    values = _cumulative_values(kind, treated[order], y[order])
    n = len(order)
    fractions = np.arange(n + 1, dtype=np.float64) / n
    points = np.concatenate([[0.0], values])
    return fractions, points


def uplift_curve(kind: str, scores, treated, y, continuous: Optional[bool] = None) -> UpliftCurve:
    if kind not in (QINI, AUUC):
        raise MetricError(f"Unbekannte Kurve '{kind}'")
    scores, treated, y = _validate(scores, treated, y)

    binary = _is_binary(y)
    if continuous is None:
        continuous = not binary
    if continuous:
        adapted = continuous_adapt(y)
        y, binary = adapted.values, adapted.is_binary
    elif not binary:
        raise MetricError("Binärer Pfad verlangt Labels in {0, 1}")

    order = np.argsort(-scores, kind='stable')
    fractions, values = _curve_points(kind, order, treated, y)
    perfect_fractions, perfect_values = _curve_points(kind, perfect_order(treated, y, binary), treated, y)

    model_area = float(trapezoid(values, fractions))
    perfect_area = float(trapezoid(perfect_values, perfect_fractions))
    random_area = float(values[-1]) / 2.0
    if abs(perfect_area - random_area) < MIN_AREA_GAP:
        raise MetricError(f"{kind.upper()}: perfekte Kurve fällt mit der Zufallsgeraden zusammen")

    return UpliftCurve(kind=kind, fractions=fractions, values=values, model_area=model_area,
                       random_area=random_area, perfect_area=perfect_area)


def qini(scores, treated, y, continuous: Optional[bool] = None) -> Tuple[UpliftCurve, float]:
    curve = uplift_curve(QINI, scores, treated, y, continuous)
    return curve, curve.coefficient


def auuc(scores, treated, y, continuous: Optional[bool] = None) -> Tuple[UpliftCurve, float]:
    curve = uplift_curve(AUUC, scores, treated, y, continuous)
    return curve, curve.coefficient


def evaluate_treatment(scores, t, y, k: int, response: Optional[str] = None) -> dict:
    """Behandlung k gegen die gemeinsame Kontrollgruppe (t ∈ {0, k})"""
    scores = np.asarray(scores, dtype=np.float64)
    t = np.asarray(t)
    y = np.asarray(y, dtype=np.float64)
    rows = (t == 0) | (t == k)
    treated = (t[rows] == k).astype(int)
    _, qini_value = qini(scores[rows], treated, y[rows])
    _, auuc_value = auuc(scores[rows], treated, y[rows])
    report = {
        'treatment': int(k),
        'response': response,
        'qini': float(qini_value),
        'auuc': float(auuc_value),
        'n_treated': int(treated.sum()),
        'n_control': int((treated == 0).sum()),
    }
    logger.info(f"📈 Behandlung {k}, {response}: QINI {qini_value:.4f}, AUUC {auuc_value:.4f} "
                f"({report['n_treated']} behandelt / {report['n_control']} Kontrolle)")
    return report
