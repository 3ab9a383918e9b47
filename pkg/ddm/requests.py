"""
Synthetische Anfrage-Kontexte für das Gewichtsmodell

Drei Feature-Gruppen pro Anfrage, als Platzhalter für echte Online-Features:
  profile   - Geschlecht, Altersklasse, Wertklasse (3 Tokens)
  candidate - Videotyp jedes Kandidaten
  duration  - Dauer-Bucket jedes Kandidaten
Jeder Nutzer hat eine latente Präferenz über die Responses. Ranking-Perzentile
werden innerhalb des Kandidatenpools einer Anfrage berechnet; exponiert werden
die Kandidaten mit dem höchsten präferenzgewichteten Perzentil.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from uplift_engine.exceptions import ContractError, DataError

logger = logging.getLogger(__name__)

GROUP_NAMES = ('profile', 'candidate', 'duration')
NUM_GENDERS = 2
NUM_AGE_BUCKETS = 6
NUM_VALUE_CLASSES = 5
NUM_VIDEO_TYPES = 10
NUM_DURATION_BUCKETS = 8
PROFILE_CARDINALITY = NUM_GENDERS + NUM_AGE_BUCKETS + NUM_VALUE_CLASSES
GROUP_CARDINALITIES = (PROFILE_CARDINALITY, NUM_VIDEO_TYPES, NUM_DURATION_BUCKETS)
SCORE_NOISE = 0.5


@dataclass
class RequestContext:
    """
    groups[j]: Item-IDs der Gruppe j (Länge L^j >= 1);
    exposures: (V, R) Ranking-Perzentile der exponierten Videos in [0, 1]
    """
    user_id: str
    groups: List[np.ndarray]
    exposures: np.ndarray

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=np.int64).reshape(-1) for g in self.groups]
        self.exposures = np.asarray(self.exposures, dtype=np.float64)
        if any(g.size == 0 for g in self.groups):
            raise DataError(f"Anfrage von {self.user_id}: leere Feature-Gruppe")
        if self.exposures.size and (self.exposures.min() < 0 or self.exposures.max() > 1):
            raise DataError(f"Anfrage von {self.user_id}: Perzentile außerhalb [0, 1]")

    @property
    def num_exposures(self) -> int:
        return int(self.exposures.shape[0]) if self.exposures.ndim == 2 else 0


def ranking_percentiles(scores: np.ndarray) -> np.ndarray:
    """Perzentil pro Kandidat und Response innerhalb des Pools (0 = schlechtester)"""
    n = scores.shape[0]
    if n == 1:
        return np.ones_like(scores)
    ranks = rankdata(scores, method='average', axis=0)
    return (ranks - 1.0) / (n - 1.0)


def _video_type_response(video_types: np.ndarray, R: int) -> np.ndarray:
    return video_types % R


def simulate_requests(user_ids: Sequence[str], num_responses: int, seed: int = 0,
                      candidates: int = 20, exposures: int = 10,
                      preferences: Optional[np.ndarray] = None) -> List[RequestContext]:
    """Eine Anfrage pro Nutzer; Präferenzen werden bei Bedarf aus dem Seed gezogen"""
    if num_responses < 1:
        raise ContractError("Mindestens eine Response erforderlich")
    if candidates < 1 or not 0 <= exposures <= candidates:
        raise ContractError(f"Ungültige Kandidaten/Exposures: {candidates}/{exposures}")
    if num_responses > NUM_VIDEO_TYPES or NUM_DURATION_BUCKETS < num_responses:
        raise ContractError(f"Simulator unterstützt höchstens {NUM_VIDEO_TYPES} Responses")

    rng = np.random.default_rng(seed)
    n, R = len(user_ids), num_responses
    if preferences is None:
        preferences = rng.dirichlet(np.ones(R), size=n)
    preferences = np.asarray(preferences, dtype=np.float64)
    if preferences.shape != (n, R):
        raise ContractError(f"Präferenzen brauchen Shape {(n, R)}, erhalten {preferences.shape}")

    bucket_width = NUM_DURATION_BUCKETS // R
    requests = []
    for i, user_id in enumerate(user_ids):
        pref = preferences[i]
        gender = rng.integers(0, NUM_GENDERS)
        age = rng.integers(0, NUM_AGE_BUCKETS)
        value_class = min(int(pref[0] * NUM_VALUE_CLASSES), NUM_VALUE_CLASSES - 1)
        profile = [gender, NUM_GENDERS + age, NUM_GENDERS + NUM_AGE_BUCKETS + value_class]

        # Kandidatenpool folgt grob der Präferenz
        type_weights = pref[_video_type_response(np.arange(NUM_VIDEO_TYPES), R)]
        types = rng.choice(NUM_VIDEO_TYPES, size=candidates, p=type_weights / type_weights.sum())
        favored = _video_type_response(types, R)
        durations = favored * bucket_width + rng.integers(0, bucket_width, size=candidates)

        scores = (favored[:, None] == np.arange(R)[None, :]).astype(np.float64)
        scores += rng.normal(0.0, SCORE_NOISE, size=(candidates, R))
        percentiles = ranking_percentiles(scores)

        blended = percentiles @ pref
        exposed = np.argsort(-blended, kind='stable')[:exposures]
        requests.append(RequestContext(user_id=str(user_id),
                                       groups=[profile, types, durations],
                                       exposures=percentiles[exposed]))

    logger.info(f"🎬 {len(requests)} synthetische Anfragen ({candidates} Kandidaten, "
                f"{exposures} Exposures, R={R})")
    return requests
