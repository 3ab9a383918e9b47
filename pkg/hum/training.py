"""
Training des HUM: Minibatch-Adam auf dem maskierten Loss, Plateau-Plan auf
dem Validierungs-Loss, Early Stop und Rückkehr zu den besten Parametern.

Fortschritt wird zusätzlich im Django-Cache unter einem Run-Key abgelegt.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from django.core.cache import cache
from django.utils import timezone

from dataio.schema import Dataset, DatasetSchema
from nncore.autograd import backward
from nncore.optim import Adam, PlateauSchedule
from uplift_engine.exceptions import DataError, NumericalError

from .losses import masked_loss
from .model import HumModel

logger = logging.getLogger(__name__)

PROGRESS_TIMEOUT = 3600


class TrainingProgress:
    """Progress- und Log-Einträge eines Trainingslaufs im Cache"""

    def __init__(self, run_key: str, total_epochs: int):
        self.progress_key = f"training_progress_{run_key}"
        self.log_key = f"training_log_{run_key}"
        self.total_epochs = total_epochs
        cache.set(self.progress_key, {
            'epoch': 0,
            'total_epochs': total_epochs,
            'current_task': 'Starte Training...',
            'percentage': 0,
            'status': 'running',
        }, timeout=PROGRESS_TIMEOUT)
        cache.set(self.log_key, [], timeout=PROGRESS_TIMEOUT)

    def update(self, epoch: int, task: str, details: Optional[str] = None, status: str = 'running'):
        cache.set(self.progress_key, {
            'epoch': epoch,
            'total_epochs': self.total_epochs,
            'current_task': task,
            'percentage': int(100 * epoch / max(self.total_epochs, 1)),
            'status': status,
        }, timeout=PROGRESS_TIMEOUT)

        logs = cache.get(self.log_key, [])
        message = f"Epoche {epoch}/{self.total_epochs}: {task}"
        if details:
            message += f" - {details}"
        logs.append({'timestamp': timezone.now().strftime('%H:%M:%S'), 'message': message})
        cache.set(self.log_key, logs[-50:], timeout=PROGRESS_TIMEOUT)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float('inf')
    stopped_early: bool = False

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            'epochs': [vars(e) for e in self.epochs],
            'best_epoch': self.best_epoch,
            'best_val_loss': self.best_val_loss,
            'stopped_early': self.stopped_early,
        }


class IndependentUpliftModel:
    """Ein Ein-Branch-HUM pro Behandlung k, trainiert auf t ∈ {0, k}"""

    def __init__(self, models: List[HumModel], response_name: str, response_index: int = 0):
        self.models = models
        self.response_name = response_name
        self.response_index = response_index
        self.history: Dict[int, TrainingHistory] = {}

    @property
    def num_treatments(self) -> int:
        return len(self.models)


def dataset_loss(model: HumModel, dataset: Dataset, batch_size: int) -> float:
    """Mittlerer Loss über einen Datensatz, gewichtet nach Batchgröße"""
    n = len(dataset)
    if n == 0:
        raise DataError("Loss auf leerem Datensatz")
    y = dataset.y[:, model.response_index]
    total = 0.0
    for start in range(0, n, batch_size):
        rows = slice(start, start + batch_size)
        loss = masked_loss(model, dataset.x[rows], dataset.t[rows], y[rows])
        total += loss.item() * len(dataset.t[rows])
    return total / n


def _training_config(config: dict):
    return {
        'batch_size': int(config.get('batch_size', 4096)),
        'learning_rate': float(config.get('learning_rate', 0.001)),
        'lr_factor': float(config.get('lr_factor', 0.6)),
        'lr_patience': int(config.get('lr_patience', 2)),
        'max_epochs': int(config.get('max_epochs', 20)),
        'early_stop_patience': int(config.get('early_stop_patience', 4)),
        'seed': int(config.get('seed', 0)),
    }


def fit_model(model: HumModel, train: Dataset, validation: Optional[Dataset], config: dict,
              rng: np.random.Generator, run_key: Optional[str] = None) -> HumModel:
    """Trainiert ein bereits initialisiertes Modell in-place"""
    settings = _training_config(config)
    if len(train) == 0:
        raise DataError("Leerer Trainingsdatensatz")
    use_validation = validation is not None and len(validation) > 0
    if not use_validation:
        logger.warning("⚠️ Keine Validierungsdaten: Plateau-Plan nutzt den Trainings-Loss")

    params = model.parameters()
    optimizer = Adam(params, lr=settings['learning_rate'])
    schedule = PlateauSchedule(lr=settings['learning_rate'], patience=settings['lr_patience'],
                               factor=settings['lr_factor'])
    history = TrainingHistory()
    best_state = model.state_dict()
    progress = TrainingProgress(run_key, settings['max_epochs']) if run_key else None

    n = len(train)
    y = train.y[:, model.response_index]
    batch_size = settings['batch_size']
    logger.info(f"🚀 Training '{model.response_name}': {n} Instanzen, {model.num_branches} Branches, "
                f"batch {batch_size}, lr {settings['learning_rate']}, lambda_KL {model.hp.lambda_kl}")

    for epoch in range(1, settings['max_epochs'] + 1):
        order = rng.permutation(n)
        epoch_total = 0.0
        for number, start in enumerate(range(0, n, batch_size)):
            rows = order[start:start + batch_size]
            optimizer.zero_grad()
            loss = masked_loss(model, train.x[rows], train.t[rows], y[rows])
            value = loss.item()
            if not np.isfinite(value):
                diagnostics = {'epoch': epoch, 'batch': number, 'lr': optimizer.lr,
                               'loss': value, 'response': model.response_name}
                if progress:
                    progress.update(epoch, 'Abbruch', f"Loss {value}", status='failed')
                raise NumericalError(f"Nicht-endlicher Loss in Epoche {epoch}, Batch {number}",
                                     diagnostics=diagnostics)
            backward(loss)
            optimizer.step()
            epoch_total += value * rows.size

        train_loss = epoch_total / n
        val_loss = (dataset_loss(model, validation, batch_size) if use_validation
                    else dataset_loss(model, train, batch_size))
        lr_used = optimizer.lr
        optimizer.lr = schedule.update(val_loss)
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr_used))

        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.state_dict()

        logger.info(f"📊 Epoche {epoch}: train {train_loss:.6f}, val {val_loss:.6f}, lr {lr_used:.6g}")
        if progress:
            progress.update(epoch, 'Epoche abgeschlossen',
                            f"train {train_loss:.4f}, val {val_loss:.4f}")

        if epoch - history.best_epoch >= settings['early_stop_patience']:
            history.stopped_early = True
            logger.info(f"⏹️ Early Stop nach Epoche {epoch} (beste Epoche {history.best_epoch})")
            break

    model.load_state_dict(best_state)
    model.history = history
    if progress:
        progress.update(len(history.epochs), 'Training abgeschlossen',
                        f"beste Epoche {history.best_epoch}", status='completed')
    return model


def train(train: Dataset, validation: Optional[Dataset], config: dict,
          response_index: int = 0, schema: Optional[DatasetSchema] = None,
          run_key: Optional[str] = None) -> HumModel:
    """Ein HUM für Response `response_index`; deterministisch pro Seed"""
    schema = schema or train.schema
    if schema is None:
        raise DataError("Training braucht ein gefittetes Schema")
    rng = np.random.default_rng(int(config.get('seed', 0)))
    model = HumModel.from_schema(schema, config, rng, response_index=response_index)
    return fit_model(model, train, validation, config, rng, run_key=run_key)


def _restrict(dataset: Optional[Dataset], k: int) -> Optional[Dataset]:
    if dataset is None:
        return None
    rows = np.flatnonzero((dataset.t == 0) | (dataset.t == k))
    part = dataset.subset(rows)
    part.t = np.where(part.t == k, 1, 0)
    return part


def train_independent(train: Dataset, validation: Optional[Dataset], config: dict,
                      response_index: int = 0, schema: Optional[DatasetSchema] = None,
                      run_key: Optional[str] = None) -> IndependentUpliftModel:
    """Pro Behandlung ein Ein-Branch-Modell auf {t=0} ∪ {t=k}, ohne KL-Kopplung"""
    schema = schema or train.schema
    if schema is None:
        raise DataError("Training braucht ein gefittetes Schema")
    single_config = dict(config, branches_per_treatment=1)
    models = []
    result = IndependentUpliftModel(models, schema.response_names[response_index], response_index)
    for k in range(1, schema.K + 1):
        rng = np.random.default_rng(int(config.get('seed', 0)) + k)
        sub_train = _restrict(train, k)
        sub_schema = DatasetSchema(schema.features, 1, schema.response_names)
        model = HumModel.from_schema(sub_schema, single_config, rng, response_index=response_index)
        logger.info(f"🔀 Unabhängiges Modell für Behandlung {k}: {len(sub_train)} Instanzen")
        fit_model(model, sub_train, _restrict(validation, k), single_config, rng,
                  run_key=f"{run_key}_t{k}" if run_key else None)
        result.history[k] = model.history
        models.append(model)
    return result
