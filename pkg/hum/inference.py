"""
Kontrafaktische Inferenz: für jede Behandlung k wird das Behandlungs-Embedding
durch k (treated) bzw. 0 (control) ersetzt, unabhängig von der beobachteten
Behandlung des Nutzers.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import List, Sequence

import numpy as np

from uplift_engine.exceptions import NumericalError

from .model import CONTROL, TREATED, HumModel

logger = logging.getLogger(__name__)

INFERENCE_CHUNK = 4096


@dataclass
class UpliftEstimates:
    """
    Schätzungen einer Response für n Nutzer.
    treated[:, k-1] = ŷ^k, control[:, k-1] = ŷ^{0,k};
    branch_control und gates sind pro Branch (n×B bzw. n×B×M).
    """
    response: str
    user_ids: List[str]
    treated: np.ndarray
    control: np.ndarray
    branch_control: np.ndarray
    gates: np.ndarray

    @property
    def K(self) -> int:
        return self.treated.shape[1]

    @property
    def control_star(self) -> np.ndarray:
        """ŷ^{0,*}: arithmetisches Mittel der Kontrollschätzungen"""
        return self.control.mean(axis=1)

    def uplift(self, k: int) -> np.ndarray:
        return self.treated[:, k - 1] - self.control[:, k - 1]

    def __len__(self):
        return self.treated.shape[0]


def _check_sandwich(estimates: UpliftEstimates):
    star = estimates.control_star
    low = estimates.control.min(axis=1)
    high = estimates.control.max(axis=1)
    tol = 1e-12 * np.maximum(1.0, np.abs(star))
    if not np.all((low - tol <= star) & (star <= high + tol)):
        raise NumericalError("Kontrollmittel liegt außerhalb [min, max] der Branch-Schätzungen",
                             diagnostics={'response': estimates.response})


def _features_and_ids(x):
    if hasattr(x, 'x'):
        return np.asarray(x.x, dtype=np.int64), list(x.user_ids)
    x = np.asarray(x, dtype=np.int64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return x, [str(i) for i in range(x.shape[0])]


def _hum_infer(model: HumModel, x: np.ndarray):
    n, K, B = x.shape[0], model.num_treatments, model.num_branches
    branch_treated = np.zeros((n, B))
    branch_control = np.zeros((n, B))
    gates = np.zeros((n, B, model.hp.num_experts))

    for start in range(0, n, INFERENCE_CHUNK):
        rows = slice(start, min(start + INFERENCE_CHUNK, n))
        chunk = x[rows]
        e_x = model.embed_features(chunk)
        size = chunk.shape[0]
        for branch in range(1, B + 1):
            k = model.branch_treatments[branch - 1]
            e_t = model.embed_treatment(np.full(size, k))
            _, selected = model.feature_select(e_x, e_t, branch)
            _, pred = model.branch_forward(model.fuse(selected, e_t), branch, TREATED)
            branch_treated[rows, branch - 1] = pred.value

            e_t0 = model.embed_treatment(np.zeros(size, dtype=np.int64))
            _, selected = model.feature_select(e_x, e_t0, branch)
            gate, pred = model.branch_forward(model.fuse(selected, e_t0), branch, CONTROL)
            branch_control[rows, branch - 1] = pred.value
            gates[rows, branch - 1] = gate.value

    treated = np.zeros((n, K))
    control = np.zeros((n, K))
    for k in range(1, K + 1):
        columns = [b - 1 for b in model.branches_for(k)]
        treated[:, k - 1] = branch_treated[:, columns].mean(axis=1)
        control[:, k - 1] = branch_control[:, columns].mean(axis=1)
    return treated, control, branch_control, gates


def infer_all_treatments(model, x) -> UpliftEstimates:
    """x: Dataset oder (n, F) Feature-IDs; Modell: HumModel oder IndependentUpliftModel"""
    features, user_ids = _features_and_ids(x)
    if isinstance(model, HumModel):
        treated, control, branch_control, gates = _hum_infer(model, features)
        response = model.response_name
    else:
        parts = [_hum_infer(sub, features) for sub in model.models]
        treated = np.hstack([p[0] for p in parts])
        control = np.hstack([p[1] for p in parts])
        branch_control = np.hstack([p[2] for p in parts])
        gates = np.concatenate([p[3] for p in parts], axis=1)
        response = model.response_name

    estimates = UpliftEstimates(response=response, user_ids=user_ids, treated=treated,
                                control=control, branch_control=branch_control, gates=gates)
    _check_sandwich(estimates)
    return estimates


def infer_responses(models: Sequence, x) -> List[UpliftEstimates]:
    """Ein Modell pro Response r, in Response-Reihenfolge"""
    return [infer_all_treatments(model, x) for model in models]


def control_branch_gap(estimates: UpliftEstimates) -> float:
    """Mittleres |ŷ^{0,b} − ŷ^{0,b'}| über Nutzer und Branch-Paare"""
    columns = estimates.branch_control.shape[1]
    pairs = list(combinations(range(columns), 2))
    if not pairs:
        return 0.0
    gaps = [np.abs(estimates.branch_control[:, a] - estimates.branch_control[:, b]).mean()
            for a, b in pairs]
    return float(np.mean(gaps))
