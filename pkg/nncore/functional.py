"""
Funktionale Bausteine: Dense, Softmax, KL, MSE, Embedding-Lookup

Alle Funktionen akzeptieren Tensor oder array-artige Eingaben und liefern
Tensoren, die in den Autodiff-Graph eingehängt sind.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from uplift_engine.exceptions import ContractError, DimensionError, FeatureIndexError

from .autograd import (Tensor, as_tensor, clamp_min, log, relu, sigmoid,
                       softmax as _softmax, take_rows)

logger = logging.getLogger(__name__)

# Untergrenze für q-Einträge in der KL-Divergenz (danach renormalisiert)
KL_FLOOR = 1e-8
# Damit 0 * ln 0 = 0 ohne NaN bleibt
_LOG_TINY = 1e-300

ACTIVATIONS = {
    'linear': lambda x: x,
    'relu': relu,
    'sigmoid': sigmoid,
}


def dense_forward(inputs, weights, bias, activation: str = 'linear') -> Tensor:
    """
    activation(W·x + b) für einen Vektor oder einen Batch (Zeilen = Samples).
    W hat Shape (out, in), die Spaltenzahl muss zur Eingabelänge passen.
    """
    x = as_tensor(inputs)
    W = as_tensor(weights)
    b = as_tensor(bias)
    if activation not in ACTIVATIONS:
        raise ContractError(f"Unbekannte Aktivierung '{activation}'")
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"Dense: Eingabe {x.shape} passt nicht zu Gewichten {W.shape}")

    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    out = ACTIVATIONS[activation](x @ W.T + b)
    return out.reshape(-1) if single else out


def softmax(logits, axis: int = -1) -> Tensor:
    x = as_tensor(logits)
    if x.value.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax auf leerer Eingabe")
    return _softmax(x, axis=axis)


def _check_distribution(values: np.ndarray, label: str):
    sums = values.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError(f"{label} ist keine Wahrscheinlichkeitsverteilung (Summe {sums})")


def kl_divergence(p, q, floor: float = KL_FLOOR) -> Tensor:
    """
    D_KL(p‖q) entlang der letzten Achse. q wird auf `floor` angehoben;
    nur angehobene Zeilen werden renormalisiert, sonst gilt KL(p, p) = 0 exakt.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"KL: Shape-Konflikt {p.shape} vs {q.shape}")
    if p.value.size == 0:
        raise DimensionError("KL auf leerer Eingabe")
    _check_distribution(p.value, 'p')
    _check_distribution(q.value, 'q')

    clipped = (q.value < floor).any(axis=-1, keepdims=True).astype(np.float64)
    q_floor = clamp_min(q, floor)
    norm = q_floor.sum(axis=-1, keepdims=True) * clipped + (1.0 - clipped)
    q_norm = q_floor / norm

    return (p * (log(clamp_min(p, _LOG_TINY)) - log(q_norm))).sum(axis=-1)


def mse(pred, label) -> Tensor:
    pred, label = as_tensor(pred), as_tensor(label)
    if pred.shape != label.shape:
        raise DimensionError(f"MSE: Längen-Konflikt {pred.shape} vs {label.shape}")
    if pred.value.size == 0:
        raise DimensionError("MSE auf leerer Eingabe")
    return ((pred - label) ** 2).mean()


def embed_lookup(table, ids, feature_names: Optional[Sequence[str]] = None) -> Tensor:
    """
    Zeile j der Ausgabe = Tabellenzeile ids[j]. `ids` darf Batch-Dimensionen
    haben; bei Bereichsfehlern wird das betroffene Feature benannt.
    """
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    bad = (ids < 0) | (ids >= rows)
    if np.any(bad):
        position = np.argwhere(bad)[0]
        column = int(position[-1]) if ids.ndim else 0
        feature = feature_names[column] if feature_names is not None else f"#{column}"
        raise FeatureIndexError(feature, int(ids[tuple(position)]), rows)
    return take_rows(table, ids)
