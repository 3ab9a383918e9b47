"""
Gewichtsmodell der Online-Stufe

Average-Pooling der Item-Embeddings pro Feature-Gruppe, Konkatenation,
danach MMOE: geteilte Experten, ein Softmax-Gate und ein Sigmoid-Tower pro
Response. Trainiert mit MSE gegen Proportions-Labels.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from dataio.splits import split_indices
from hum.checkpoint import decode_params, encode_params
from nncore.autograd import Tensor, backward, concat, segment_mean, softmax, stack
from nncore.functional import mse
from nncore.layers import MLP, Dense, Embedding, Module
from nncore.optim import Adam, PlateauSchedule
from uplift_engine.exceptions import (CheckpointVersionError, ConfigError, ContractError, DataError,
                                      DimensionError, FeatureIndexError, NumericalError)

from .labels import build_labels
from .requests import GROUP_CARDINALITIES, GROUP_NAMES, RequestContext

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
KIND_WEIGHT_MODEL = 'weight-model'
VALIDATION_SHARE = 0.1


@dataclass(frozen=True)
class WeightHyperparameters:
    weight_embedding_dim: int = 16
    weight_experts: int = 3
    weight_hidden: int = 32

    @classmethod
    def from_config(cls, config: dict) -> 'WeightHyperparameters':
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in config.items() if k in names})


class WeightModel(Module):
    def __init__(self, group_cardinalities: Sequence[int], num_responses: int,
                 hyperparameters: WeightHyperparameters, rng: np.random.Generator,
                 group_names: Optional[Sequence[str]] = None, response_names: Optional[Sequence[str]] = None):
        if num_responses < 1 or not group_cardinalities:
            raise ContractError("Gewichtsmodell braucht Gruppen und mindestens eine Response")
        self.group_cardinalities = [int(c) for c in group_cardinalities]
        self.group_names = list(group_names or [f"group{j}" for j in range(len(group_cardinalities))])
        self.response_names = list(response_names or [f"r{r}" for r in range(num_responses)])
        self.num_responses = num_responses
        self.hp = hyperparameters

        d_s, hidden = hyperparameters.weight_embedding_dim, hyperparameters.weight_hidden
        width = len(group_cardinalities) * d_s
        self.embeddings = [Embedding(c, d_s, rng, name=f"emb_{name}")
                           for c, name in zip(self.group_cardinalities, self.group_names)]
        self.experts = [MLP([width, hidden, hidden], rng, output_activation='relu', name=f"expert{m}")
                        for m in range(hyperparameters.weight_experts)]
        self.gates = [Dense(width, hyperparameters.weight_experts, rng, name=f"gate{r}")
                      for r in range(num_responses)]
        self.towers = [MLP([hidden, hidden, 1], rng, output_activation='sigmoid', name=f"tower{r}")
                       for r in range(num_responses)]

    @property
    def pooled_width(self) -> int:
        return len(self.group_cardinalities) * self.hp.weight_embedding_dim


def _check_ids(ids: np.ndarray, cardinality: int, name: str):
    bad = (ids < 0) | (ids >= cardinality)
    if np.any(bad):
        raise FeatureIndexError(name, int(ids[bad][0]), cardinality)


def pool_batch(requests: Sequence[RequestContext], model: WeightModel) -> Tensor:
    """(B, G·d_s): pro Gruppe Mittel der Item-Embeddings, Gruppen konkateniert"""
    if not requests:
        raise DimensionError("Keine Anfragen zum Poolen")
    pooled = []
    for j, embedding in enumerate(model.embeddings):
        items = []
        for request in requests:
            if len(request.groups) != len(model.embeddings):
                raise DimensionError(f"Anfrage von {request.user_id}: {len(request.groups)} Gruppen "
                                     f"statt {len(model.embeddings)}")
            if request.groups[j].size == 0:
                raise DataError(f"Anfrage von {request.user_id}: Gruppe {model.group_names[j]} leer")
            items.append(request.groups[j])
        ids = np.concatenate(items)
        _check_ids(ids, model.group_cardinalities[j], model.group_names[j])
        segments = np.repeat(np.arange(len(requests)), [len(g) for g in items])
        pooled.append(segment_mean(embedding(ids), segments, len(requests)))
    return concat(pooled, axis=-1)


def pool_request(context: RequestContext, model: WeightModel) -> Tensor:
    """e* einer einzelnen Anfrage, Länge (f_s+1)·d_s"""
    return pool_batch([context], model).reshape(-1)


def weight_forward(pooled, model: WeightModel) -> Tensor:
    """ô ∈ (0,1)^R pro Zeile; akzeptiert einen Vektor oder einen Batch"""
    pooled = pooled if isinstance(pooled, Tensor) else Tensor(pooled)
    single = pooled.ndim == 1
    if single:
        pooled = pooled.reshape(1, -1)
    if pooled.shape[1] != model.pooled_width:
        raise DimensionError(f"Gepoolter Vektor hat Länge {pooled.shape[1]} statt {model.pooled_width}")

    batch, M = pooled.shape[0], model.hp.weight_experts
    outputs = stack([expert(pooled) for expert in model.experts], axis=1)
    heads = []
    for gate, tower in zip(model.gates, model.towers):
        weights = softmax(gate(pooled), axis=-1)
        mixture = (weights.reshape(batch, M, 1) * outputs).sum(axis=1)
        heads.append(tower(mixture))
    result = concat(heads, axis=-1)
    return result.reshape(-1) if single else result


def predict_weights(requests: Sequence[RequestContext], model: WeightModel,
                    chunk: int = 1024) -> np.ndarray:
    """Rohausgaben ô für viele Anfragen, (n, R)"""
    parts = [weight_forward(pool_batch(requests[s:s + chunk], model), model).value
             for s in range(0, len(requests), chunk)]
    return np.vstack(parts) if parts else np.zeros((0, model.num_responses))


def _loss(model: WeightModel, requests, labels) -> Tensor:
    return mse(weight_forward(pool_batch(requests, model), model), labels)


def _dataset_loss(model, requests, labels, batch_size) -> float:
    total = 0.0
    for s in range(0, len(requests), batch_size):
        part = requests[s:s + batch_size]
        total += _loss(model, part, labels[s:s + batch_size]).item() * len(part)
    return total / len(requests)


def train_weight_model(requests: Sequence[RequestContext], config: dict,
                       response_names: Optional[Sequence[str]] = None,
                       batch_size: Optional[int] = None) -> WeightModel:
    """
    MSE gegen Proportions-Labels; Adam + Plateau-Plan, Early Stop auf Validierung.
    Ein explizites batch_size geht vor, sonst desk_batch_size bzw. batch_size aus der Konfiguration.
    """
    R = len(response_names) if response_names else int(config.get('num_responses', 2))
    labels, kept, skipped = build_labels(requests, R)
    if not kept:
        raise DataError("Keine Anfrage mit Exposures für das Gewichtsmodell")
    requests = [requests[i] for i in kept]

    seed = int(config.get('seed', 0))
    rng = np.random.default_rng(seed)
    if len(requests) >= 10:
        train_idx, val_idx = split_indices(len(requests), (1 - VALIDATION_SHARE, VALIDATION_SHARE), seed)
    else:
        train_idx, val_idx = np.arange(len(requests)), np.arange(len(requests))
    train_requests = [requests[i] for i in train_idx]
    val_requests = [requests[i] for i in val_idx]
    train_labels, val_labels = labels[train_idx], labels[val_idx]

    model = WeightModel(config.get('group_cardinalities', GROUP_CARDINALITIES), R,
                        WeightHyperparameters.from_config(config), rng,
                        group_names=config.get('group_names', GROUP_NAMES),
                        response_names=response_names)
    model.skipped_requests = skipped

    lr = float(config.get('learning_rate', 0.001))
    optimizer = Adam(model.parameters(), lr=lr)
    schedule = PlateauSchedule(lr=lr, patience=int(config.get('lr_patience', 2)),
                               factor=float(config.get('lr_factor', 0.6)))
    if batch_size is None:
        batch_size = config.get('desk_batch_size', config.get('batch_size', 1024))
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ConfigError(f"batch_size muss positiv sein, nicht {batch_size}")
    max_epochs = int(config.get('max_epochs', 20))
    patience = int(config.get('early_stop_patience', 4))

    best_state, best_loss, best_epoch = model.state_dict(), float('inf'), 0
    model.history = []
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(train_requests))
        total = 0.0
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            optimizer.zero_grad()
            loss = _loss(model, [train_requests[i] for i in rows], train_labels[rows])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"Nicht-endlicher Loss im Gewichtsmodell (Epoche {epoch})",
                                     diagnostics={'epoch': epoch, 'lr': optimizer.lr, 'loss': value})
            backward(loss)
            optimizer.step()
            total += value * rows.size

        train_loss = total / len(order)
        val_loss = _dataset_loss(model, val_requests, val_labels, batch_size)
        model.history.append({'epoch': epoch, 'train_loss': train_loss, 'val_loss': val_loss,
                              'lr': optimizer.lr})
        optimizer.lr = schedule.update(val_loss)
        logger.info(f"⚖️ Gewichtsmodell Epoche {epoch}: train {train_loss:.6f}, val {val_loss:.6f}")

        if val_loss < best_loss:
            best_state, best_loss, best_epoch = model.state_dict(), val_loss, epoch
        elif epoch - best_epoch >= patience:
            logger.info(f"⏹️ Early Stop nach Epoche {epoch}")
            break

    model.load_state_dict(best_state)
    return model


def save_weight_model(model: WeightModel, path: Union[str, Path]):
    payload = {
        'version': CHECKPOINT_VERSION,
        'kind': KIND_WEIGHT_MODEL,
        'group_cardinalities': model.group_cardinalities,
        'group_names': model.group_names,
        'response_names': model.response_names,
        'hyperparameters': asdict(model.hp),
        'params': encode_params(model.state_dict()),
    }
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(payload, fh)
    logger.info(f"💾 Gewichtsmodell → {path}")


def load_weight_model(path: Union[str, Path]) -> WeightModel:
    try:
        with open(path, encoding='utf-8') as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Gewichtsmodell {path} nicht lesbar: {e}")
    if payload.get('version') != CHECKPOINT_VERSION or payload.get('kind') != KIND_WEIGHT_MODEL:
        raise CheckpointVersionError(
            f"{path}: Version {payload.get('version')} / Typ {payload.get('kind')} nicht unterstützt")
    model = WeightModel(payload['group_cardinalities'], len(payload['response_names']),
                        WeightHyperparameters(**payload['hyperparameters']), np.random.default_rng(0),
                        group_names=payload['group_names'], response_names=payload['response_names'])
    model.load_state_dict(decode_params(payload['params']))
    return model
