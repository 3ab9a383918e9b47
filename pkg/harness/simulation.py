"""
Policy-Simulation auf synthetischer Ground Truth

Ergebnis pro Nutzer: Σ_r w_r·(μ_r + Σ_{k aktiviert} τ_r^k). Mehrere aktivierte
Behandlungen addieren ihre wahren Effekte. Modellschätzungen fließen nur in die
Entscheidung ein, nie in das Ergebnis.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from dataio.synthetic import SyntheticTruth
from ddm.decision import Decision, decide, value_weights
from ddm.requests import RequestContext
from ddm.store import UserScores
from ddm.weights import WeightModel, predict_weights
from uplift_engine.exceptions import DimensionError

logger = logging.getLogger(__name__)

HMUM = 'hmum'
ALL_OFF = 'all_off'
ALL_ON = 'all_on'
RANDOM = 'random'
RANDOM_ENABLE_PROBABILITY = 0.5


@dataclass
class PolicyOutcome:
    name: str
    per_user: np.ndarray
    response_gain: np.ndarray
    enabled_counts: List[int]

    @property
    def total(self) -> float:
        return float(self.per_user.sum())

    @property
    def mean(self) -> float:
        return float(self.per_user.mean()) if self.per_user.size else 0.0

    def to_dict(self) -> dict:
        return {
            'total': self.total,
            'mean': self.mean,
            'response_gain': [float(v) for v in self.response_gain],
            'enabled_counts': self.enabled_counts,
        }


@dataclass
class PolicyReport:
    sigma: float
    top1: bool
    n_users: int
    skipped_users: int
    policies: Dict[str, PolicyOutcome] = field(default_factory=dict)

    @property
    def best_static(self) -> Tuple[str, float]:
        static = {name: p.total for name, p in self.policies.items() if name != HMUM}
        name = max(static, key=static.get)
        return name, static[name]

    def to_dict(self) -> dict:
        return {
            'sigma': self.sigma,
            'top1': self.top1,
            'n_users': self.n_users,
            'skipped_users': self.skipped_users,
            'policies': {name: p.to_dict() for name, p in self.policies.items()},
        }


def static_policies(K: int, n: int, seed: int) -> Dict[str, List[Tuple[int, ...]]]:
    """Populationsweite Vergleichsstrategien als aktivierte Mengen pro Nutzer"""
    policies = {ALL_OFF: [()] * n}
    for k in range(1, K + 1):
        policies[f"all_on_t{k}"] = [(k,)] * n
    if K > 1:
        policies[ALL_ON] = [tuple(range(1, K + 1))] * n
    draws = np.random.default_rng(seed).random((n, K)) < RANDOM_ENABLE_PROBABILITY
    policies[RANDOM] = [tuple(int(k) + 1 for k in np.flatnonzero(row)) for row in draws]
    return policies


def realized_outcome(weights: np.ndarray, truth: SyntheticTruth,
                     enabled: Sequence[Tuple[int, ...]]) -> Tuple[np.ndarray, np.ndarray]:
    """Gewichtetes wahres Ergebnis pro Nutzer und ungewichteter Zuwachs pro Response"""
    n, R = truth.mu.shape
    if weights.shape != (n, R):
        raise DimensionError(f"Gewichte {weights.shape} passen nicht zur Truth ({n}, {R})")
    mask = np.zeros((n, truth.K))
    for i, chosen in enumerate(enabled):
        for k in chosen:
            mask[i, k - 1] = 1.0
    gain = np.einsum('irk,ik->ir', truth.tau, mask)
    per_user = ((truth.mu + gain) * weights).sum(axis=1)
    return per_user, gain.sum(axis=0)


def _evaluate(name: str, weights, truth, enabled) -> PolicyOutcome:
    per_user, gain = realized_outcome(weights, truth, enabled)
    counts = [sum(1 for chosen in enabled if k in chosen) for k in range(1, truth.K + 1)]
    return PolicyOutcome(name=name, per_user=per_user, response_gain=gain, enabled_counts=counts)


def decide_users(scores: Sequence[UserScores], raw_weights: np.ndarray,
                 sigma: float, top1: bool) -> List[Decision]:
    weights = value_weights(raw_weights)
    return [decide(weights[i], s.delta, sigma=sigma, top1=top1, raw=raw_weights[i])
            for i, s in enumerate(scores)]


def compare_policies(user_ids: Sequence[str], raw_weights: np.ndarray, decisions: Sequence[Decision],
                     truth: SyntheticTruth, sigma: float = 0.0, top1: bool = False,
                     seed: int = 0, skipped: int = 0) -> PolicyReport:
    """HMUM-Entscheidungen gegen die statischen Strategien, alle mit denselben Gewichten"""
    truth = truth.align(user_ids)
    weights = value_weights(raw_weights)
    report = PolicyReport(sigma=sigma, top1=top1, n_users=len(user_ids), skipped_users=skipped)
    report.policies[HMUM] = _evaluate(HMUM, weights, truth, [d.enabled for d in decisions])
    for name, enabled in static_policies(truth.K, len(user_ids), seed).items():
        report.policies[name] = _evaluate(name, weights, truth, enabled)

    best_name, best_total = report.best_static
    logger.info(f"🏁 HMUM {report.policies[HMUM].total:.4f} vs. beste statische Strategie "
                f"{best_name} {best_total:.4f} ({len(user_ids)} Nutzer, σ={sigma})")
    return report


def simulate_policies(requests: Sequence[RequestContext], store: Dict[str, UserScores],
                      model: WeightModel, truth: SyntheticTruth, sigma: float = 0.0,
                      top1: bool = False, seed: int = 0) -> Tuple[PolicyReport, List[Tuple[str, Decision]]]:
    """
    Spielt jede Anfrage ab: Pooling, Gewichtsmodell, Normierung, Entscheidung.
    Nutzer ohne Store- oder Truth-Eintrag werden gezählt und übersprungen.
    """
    known = set(truth.user_ids)
    replay = [r for r in requests if r.user_id in store and r.user_id in known]
    skipped = len(requests) - len(replay)
    if skipped:
        logger.warning(f"⚠️ {skipped} Anfragen ohne Store- oder Truth-Eintrag übersprungen")
    if not replay:
        raise DimensionError("Keine abspielbare Anfrage für die Simulation")

    scores = [store[r.user_id] for r in replay]
    if scores[0].R != model.num_responses:
        raise DimensionError(f"Store hat {scores[0].R} Responses, Gewichtsmodell {model.num_responses}")
    raw = predict_weights(replay, model)
    decisions = decide_users(scores, raw, sigma, top1)
    user_ids = [r.user_id for r in replay]
    report = compare_policies(user_ids, raw, decisions, truth, sigma=sigma, top1=top1,
                              seed=seed, skipped=skipped)
    return report, list(zip(user_ids, decisions))
