"""
Synthetischer RCT-Generator mit bekannten individuellen Behandlungseffekten

Features: 5 kategoriale (Kardinalität 20) + 5 stetige (uniform [0,1]).
Basis:  mu_r(x) = c_r + a_r·stetig + Σ_j b_r[j, cat_j] + g_r·num_0·num_1
Effekt: tau_r^k(x) = s(x)·(-1)^(r+k)·m_rk(x), s(x) = +1 für cat_0 < 10 sonst -1,
        m_rk(x) = scale_rk·logistic(slope_rk·(num_{k mod 5} - 0.5))
Behandlung 1 hebt Response 1 und senkt Response 2 für die eine Nutzerhälfte,
Behandlung 2 spiegelt das.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import expit

from uplift_engine.exceptions import ContractError, DataError

from .schema import CATEGORICAL, CONTINUOUS, DatasetSchema, FeatureSpec, RawTable

logger = logging.getLogger(__name__)

NUM_CATEGORICAL = 5
NUM_CONTINUOUS = 5
CATEGORICAL_CARDINALITY = 20
DEFAULT_RESPONSES = ('usage_time', 'view_count')
BASELINE_LEVEL = 6.0


@dataclass
class SyntheticTruth:
    """Ground Truth pro Instanz: mu (n×R) und tau (n×R×K, Spalte k-1 = Behandlung k)"""
    user_ids: list
    mu: np.ndarray
    tau: np.ndarray

    @property
    def K(self) -> int:
        return self.tau.shape[2]

    @property
    def R(self) -> int:
        return self.mu.shape[1]

    def subset(self, indices) -> 'SyntheticTruth':
        indices = np.asarray(indices, dtype=np.int64)
        return SyntheticTruth([self.user_ids[i] for i in indices],
                              self.mu[indices], self.tau[indices])

    def align(self, user_ids) -> 'SyntheticTruth':
        """Truth in der Reihenfolge der übergebenen Nutzer"""
        position = {u: i for i, u in enumerate(self.user_ids)}
        try:
            return self.subset([position[u] for u in user_ids])
        except KeyError as e:
            raise DataError(f"Nutzer {e} fehlt in der Ground Truth")


@dataclass
class SyntheticRCT:
    table: RawTable
    truth: SyntheticTruth
    schema: DatasetSchema


def synthetic_schema(K: int, R: int) -> DatasetSchema:
    features = [FeatureSpec(name=f'cat_{j}', kind=CATEGORICAL, cardinality=CATEGORICAL_CARDINALITY)
                for j in range(NUM_CATEGORICAL)]
    features += [FeatureSpec(name=f'num_{j}', kind=CONTINUOUS) for j in range(NUM_CONTINUOUS)]
    names = tuple(DEFAULT_RESPONSES[r] if r < len(DEFAULT_RESPONSES) else f'response_{r}'
                  for r in range(R))
    return DatasetSchema(features=tuple(features), num_treatments=K, response_names=names)


def generate_synthetic_rct(n: int, K: int = 2, R: int = 2, seed: int = 0,
                           noise_sd: float = 0.1) -> SyntheticRCT:
    if n < 1 or K < 1 or R < 1:
        raise ContractError(f"Generator braucht n, K, R >= 1 (n={n}, K={K}, R={R})")
    rng = np.random.default_rng(seed)

    # Koeffizienten einmal pro Seed
    a = rng.uniform(-0.5, 0.5, size=(R, NUM_CONTINUOUS))
    b = rng.normal(0.0, 0.2, size=(R, NUM_CATEGORICAL, CATEGORICAL_CARDINALITY))
    g = rng.uniform(-0.5, 0.5, size=R)
    scale = rng.uniform(0.5, 1.5, size=(R, K))
    slope = rng.uniform(4.0, 8.0, size=(R, K))

    cats = rng.integers(0, CATEGORICAL_CARDINALITY, size=(n, NUM_CATEGORICAL))
    nums = rng.uniform(0.0, 1.0, size=(n, NUM_CONTINUOUS))
    t = rng.integers(0, K + 1, size=n)

    mu = np.empty((n, R))
    for r in range(R):
        mu[:, r] = (BASELINE_LEVEL + nums @ a[r]
                    + b[r, np.arange(NUM_CATEGORICAL), cats].sum(axis=1)
                    + g[r] * nums[:, 0] * nums[:, 1])

    side = np.where(cats[:, 0] < CATEGORICAL_CARDINALITY // 2, 1.0, -1.0)
    tau = np.empty((n, R, K))
    for r in range(R):
        for k in range(K):
            magnitude = scale[r, k] * expit(slope[r, k] * (nums[:, k % NUM_CONTINUOUS] - 0.5))
            tau[:, r, k] = side * (-1.0) ** (r + k) * magnitude

    effect = np.zeros((n, R))
    treated = t >= 1
    effect[treated] = tau[treated, :, t[treated] - 1]
    y = mu + effect + (rng.normal(0.0, noise_sd, size=(n, R)) if noise_sd > 0 else 0.0)

    user_ids = [f"u{i:07d}" for i in range(n)]
    table = RawTable(user_ids=user_ids,
                     features=np.hstack([cats.astype(np.float64), nums]),
                     treatment=t.astype(np.int64), responses=y)
    truth = SyntheticTruth(user_ids=user_ids, mu=mu, tau=tau)

    counts = np.bincount(t, minlength=K + 1)
    logger.info(f"🧪 Synthetischer RCT: n={n}, K={K}, R={R}, seed={seed}, "
                f"pro Behandlung {counts.tolist()}")
    return SyntheticRCT(table=table, truth=truth, schema=synthetic_schema(K, R))


def write_truth(truth: SyntheticTruth, path: Union[str, Path],
                baseline_path: Union[str, Path, None] = None):
    """Sidecar `user_id,r,k,tau` (r, k 1-basiert), optional `user_id,r,mu`"""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['user_id', 'r', 'k', 'tau'])
        for i, user_id in enumerate(truth.user_ids):
            for r in range(truth.R):
                for k in range(truth.K):
                    writer.writerow([user_id, r + 1, k + 1, repr(float(truth.tau[i, r, k]))])
    if baseline_path is not None:
        with open(baseline_path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(['user_id', 'r', 'mu'])
            for i, user_id in enumerate(truth.user_ids):
                for r in range(truth.R):
                    writer.writerow([user_id, r + 1, repr(float(truth.mu[i, r]))])


def read_truth(path: Union[str, Path], baseline_path: Union[str, Path]) -> SyntheticTruth:
    tau_rows, mu_rows = {}, {}
    try:
        with open(path, newline='', encoding='utf-8') as fh:
            for row in csv.DictReader(fh):
                tau_rows[(row['user_id'], int(row['r']), int(row['k']))] = float(row['tau'])
        with open(baseline_path, newline='', encoding='utf-8') as fh:
            for row in csv.DictReader(fh):
                mu_rows[(row['user_id'], int(row['r']))] = float(row['mu'])
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"Ground Truth nicht lesbar: {e}")

    user_ids = list(dict.fromkeys(key[0] for key in mu_rows))
    R = max(key[1] for key in mu_rows)
    K = max(key[2] for key in tau_rows)
    position = {u: i for i, u in enumerate(user_ids)}
    mu = np.zeros((len(user_ids), R))
    tau = np.zeros((len(user_ids), R, K))
    for (u, r), value in mu_rows.items():
        mu[position[u], r - 1] = value
    for (u, r, k), value in tau_rows.items():
        tau[position[u], r - 1, k - 1] = value
    return SyntheticTruth(user_ids=user_ids, mu=mu, tau=tau)
