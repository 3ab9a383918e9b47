"""
Auflösung der Laufkonfiguration

Reihenfolge: UPLIFT_DEFAULTS aus den Settings ← `--config <json>` ← CLI-Flags.
Jeder Lauf schreibt die aufgelöste Konfiguration als resolved_config.json.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from django.conf import settings

from uplift_engine.exceptions import ConfigError

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = 'resolved_config.json'
# Schlüssel, die nicht in UPLIFT_DEFAULTS stehen, aber erlaubt sind
EXTRA_KEYS = {'data', 'schema', 'test_data', 'truth', 'baseline', 'criteo', 'subsample',
              'variant', 'checkpoints', 'store', 'weights', 'users'}


class RunConfig:
    def __init__(self, command: str, values: Dict[str, Any], output_dir: Path,
                 explicit: Optional[set] = None):
        self.command = command
        self.values = values
        self.output_dir = Path(output_dir)
        self.explicit = explicit or set()

    @classmethod
    def resolve(cls, command: str, config_path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None,
                output_dir: Optional[Union[str, Path]] = None) -> 'RunConfig':
        values = copy.deepcopy(settings.UPLIFT_DEFAULTS)
        explicit = set()

        if config_path:
            try:
                with open(config_path, encoding='utf-8') as fh:
                    from_file = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Konfigurationsdatei {config_path} nicht lesbar: {e}")
            if not isinstance(from_file, dict):
                raise ConfigError(f"Konfigurationsdatei {config_path} muss ein JSON-Objekt sein")
            unknown = set(from_file) - set(values) - EXTRA_KEYS
            if unknown:
                raise ConfigError(f"Unbekannte Konfigurationsschlüssel: {', '.join(sorted(unknown))}")
            values.update(from_file)
            explicit.update(from_file)

        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
                explicit.add(key)

        out = Path(output_dir or values.get('output_dir') or settings.UPLIFT_OUTPUT_DIR)
        values['output_dir'] = str(out)
        config = cls(command, values, out, explicit)
        config.validate()
        return config

    def validate(self):
        v = self.values
        if int(v['seed']) < 0:
            raise ConfigError(f"seed muss >= 0 sein, ist {v['seed']}")
        for key in ('batch_size', 'desk_batch_size', 'embedding_dim', 'num_experts', 'num_bins',
                    'num_treatments', 'num_responses', 'n'):
            if int(v[key]) < 1:
                raise ConfigError(f"{key} muss >= 1 sein, ist {v[key]}")
        if float(v['learning_rate']) <= 0:
            raise ConfigError("learning_rate muss > 0 sein")
        if float(v['lambda_kl']) < 0:
            raise ConfigError("lambda_kl muss >= 0 sein")
        ratios = v['split_ratios']
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
            raise ConfigError(f"split_ratios muss drei positive Anteile mit Summe 1 haben: {ratios}")

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.values['seed'])

    def batch_size(self, synthetic: bool) -> int:
        """Auf generierten Daten gilt die Desk-Batchgröße, außer batch_size wurde gesetzt"""
        if synthetic and 'batch_size' not in self.explicit:
            return int(self.values['desk_batch_size'])
        return int(self.values['batch_size'])

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        target = self.path(RESOLVED_CONFIG_NAME)
        with open(target, 'w', encoding='utf-8') as fh:
            json.dump({'command': self.command, **self.values}, fh, indent=2, sort_keys=True)
        logger.debug(f"📝 Konfiguration → {target}")
        return target
