"""
Score-Store: tägliche Batch-Ablage von ŷ und δ pro Nutzer

Eine Zeile pro (Nutzer, Response r, Behandlung k):
`user_id, r, k, y_hat_treated, y_hat_control_star, delta` (r, k 1-basiert),
als CSV oder JSON-Lines je nach Dateiendung. Ein Refresh schreibt in eine
temporäre Datei und ersetzt die alte per os.replace.
"""

import csv
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from uplift_engine.exceptions import DataError, DenominatorError, DimensionError

from .decision import Decision, aggregate_control, relative_uplift

logger = logging.getLogger(__name__)

FIELDS = ('user_id', 'r', 'k', 'y_hat_treated', 'y_hat_control_star', 'delta')
DECISION_FIELDS = ('user_id', 'k', 'phi', 'enabled')
JSONL_SUFFIXES = ('.jsonl', '.ndjson')


@dataclass
class UserScores:
    user_id: str
    treated: np.ndarray
    control_star: np.ndarray
    delta: np.ndarray

    @property
    def R(self) -> int:
        return self.treated.shape[0]

    @property
    def K(self) -> int:
        return self.treated.shape[1]


def score_users(estimates: Sequence) -> Tuple[List[UserScores], List[str]]:
    """
    Aus einer UpliftEstimates-Liste (eine pro Response) die Store-Einträge bauen.
    Nutzer mit zu kleinem Kontrollnenner werden protokolliert und übersprungen.
    """
    if not estimates:
        raise DimensionError("Keine Schätzungen zum Scoren")
    user_ids = estimates[0].user_ids
    for e in estimates[1:]:
        if e.user_ids != user_ids:
            raise DimensionError("Response-Schätzungen beziehen sich auf verschiedene Nutzer")

    scores, skipped = [], []
    for i, user_id in enumerate(user_ids):
        try:
            treated = np.stack([e.treated[i] for e in estimates])
            control_star = np.array([aggregate_control(e.control[i]) for e in estimates])
            delta = np.stack([relative_uplift(treated[r], control_star[r], user_id=user_id)
                              for r in range(len(estimates))])
        except DenominatorError as e:
            logger.warning(f"⚠️ {e}, Nutzer übersprungen")
            skipped.append(user_id)
            continue
        scores.append(UserScores(user_id, treated, control_star, delta))
    logger.info(f"🧮 {len(scores)} Nutzer gescored, {len(skipped)} übersprungen")
    return scores, skipped


def _rows(scores: Iterable[UserScores]):
    for s in scores:
        for r in range(s.R):
            for k in range(s.K):
                yield {
                    'user_id': s.user_id, 'r': r + 1, 'k': k + 1,
                    'y_hat_treated': float(s.treated[r, k]),
                    'y_hat_control_star': float(s.control_star[r]),
                    'delta': float(s.delta[r, k]),
                }


def _atomic_write(path: Path, write_fn):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', newline='', encoding='utf-8') as fh:
            write_fn(fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class ScoreStore:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    @property
    def is_jsonl(self) -> bool:
        return self.path.suffix in JSONL_SUFFIXES

    def write(self, scores: Iterable[UserScores]) -> int:
        """Ersetzt den Store vollständig; gibt die Zeilenzahl zurück"""
        rows = list(_rows(scores))

        def write_fn(fh):
            if self.is_jsonl:
                for row in rows:
                    fh.write(json.dumps(row) + '\n')
            else:
                writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator='\n')
                writer.writeheader()
                for row in rows:
                    writer.writerow({**row, **{f: repr(row[f]) for f in FIELDS[3:]}})

        _atomic_write(self.path, write_fn)
        logger.info(f"💾 Score-Store {self.path}: {len(rows)} Zeilen")
        return len(rows)

    def _read_rows(self):
        with open(self.path, newline='', encoding='utf-8') as fh:
            if self.is_jsonl:
                return [json.loads(line) for line in fh if line.strip()]
            return list(csv.DictReader(fh))

    def read(self) -> Dict[str, UserScores]:
        try:
            rows = self._read_rows()
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"Score-Store {self.path} nicht lesbar: {e}")

        collected: Dict[str, dict] = {}
        try:
            for row in rows:
                entry = collected.setdefault(str(row['user_id']), {})
                r, k = int(row['r']), int(row['k'])
                entry[(r, k)] = (float(row['y_hat_treated']), float(row['y_hat_control_star']),
                                 float(row['delta']))
        except (KeyError, ValueError) as e:
            raise DataError(f"Score-Store {self.path}: fehlerhafte Zeile ({e})")

        result = {}
        for user_id, entry in collected.items():
            R = max(r for r, _ in entry)
            K = max(k for _, k in entry)
            if len(entry) != R * K:
                raise DataError(f"Score-Store {self.path}: Nutzer {user_id} unvollständig")
            treated, control_star, delta = np.zeros((R, K)), np.zeros(R), np.zeros((R, K))
            for (r, k), (y_t, y_c, d) in entry.items():
                treated[r - 1, k - 1] = y_t
                control_star[r - 1] = y_c
                delta[r - 1, k - 1] = d
            result[user_id] = UserScores(user_id, treated, control_star, delta)
        return result


def write_decisions(decisions: Sequence[Tuple[str, Decision]], path: Union[str, Path]):
    """`user_id,k,phi,enabled` pro Nutzer und Behandlung"""
    def write_fn(fh):
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(DECISION_FIELDS)
        for user_id, decision in decisions:
            for k, phi in enumerate(decision.phi, start=1):
                writer.writerow([user_id, k, repr(float(phi)), int(k in decision.enabled)])

    _atomic_write(Path(path), write_fn)
