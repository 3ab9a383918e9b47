"""
Maskierter HUM-Loss

Behandelte Instanz (t = k): quadratischer Fehler nur über die Treated-Tower
der Branches von k. Kontrollinstanz: quadratischer Fehler über die
Control-Tower aller Branches plus lambda·KL(Gate ‖ Mittel der Gates).
Gesamt ist der Mittelwert über den Batch.
"""

import logging
from typing import Optional

import numpy as np

from dataio.schema import Dataset
from nncore.autograd import Tensor, stack
from nncore.functional import kl_divergence
from uplift_engine.exceptions import DimensionError

from .model import CONTROL, TREATED, HumModel

logger = logging.getLogger(__name__)


def masked_loss(model: HumModel, x: np.ndarray, t: np.ndarray, y: np.ndarray,
                lambda_kl: Optional[float] = None,
                stop_gradient: Optional[bool] = None) -> Tensor:
    """Loss auf Array-Ebene; y ist die Response dieses Modells (Länge B)"""
    x = np.asarray(x, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    batch = len(t)
    if batch == 0:
        raise DimensionError("HUM-Loss auf leerem Batch")
    if x.shape[0] != batch or y.shape[0] != batch:
        raise DimensionError(f"Batch-Längen passen nicht: x {x.shape}, t {t.shape}, y {y.shape}")
    lambda_kl = model.hp.lambda_kl if lambda_kl is None else lambda_kl
    stop_gradient = model.hp.kl_stop_gradient if stop_gradient is None else stop_gradient

    terms = []

    # Behandelte Zeilen: nur die Branches ihrer Behandlung
    for k in range(1, model.num_treatments + 1):
        rows = np.flatnonzero(t == k)
        if rows.size == 0:
            continue
        e_x = model.embed_features(x[rows])
        e_t = model.embed_treatment(t[rows])
        for branch in model.branches_for(k):
            _, selected = model.feature_select(e_x, e_t, branch)
            _, pred = model.branch_forward(model.fuse(selected, e_t), branch, TREATED)
            terms.append(((pred - y[rows]) ** 2).sum())

    # Kontrollzeilen: alle Branches, Gates für den KL-Term
    rows = np.flatnonzero(t == 0)
    if rows.size:
        e_x = model.embed_features(x[rows])
        e_t = model.embed_treatment(np.zeros(rows.size, dtype=np.int64))
        gates = []
        for branch in range(1, model.num_branches + 1):
            _, selected = model.feature_select(e_x, e_t, branch)
            gate, pred = model.branch_forward(model.fuse(selected, e_t), branch, CONTROL)
            gates.append(gate)
            terms.append(((pred - y[rows]) ** 2).sum())

        # Bei einem Branch ist KL(z ‖ z) = 0
        if model.num_branches > 1 and lambda_kl != 0:
            target = stack(gates, axis=0).mean(axis=0)
            if stop_gradient:
                target = target.detach()
            for gate in gates:
                terms.append(kl_divergence(gate, target).sum() * lambda_kl)

    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / batch)


def hum_loss(batch, model: HumModel, **kwargs) -> Tensor:
    """Loss eines Dataset-Batches (x, t, y mit allen Responses)"""
    if not isinstance(batch, Dataset):
        batch = Dataset.from_instances(list(batch))
    if len(batch) == 0:
        raise DimensionError("HUM-Loss auf leerem Batch")
    y = np.asarray(batch.y, dtype=np.float64)
    return masked_loss(model, batch.x, batch.t, y[:, model.response_index], **kwargs)
