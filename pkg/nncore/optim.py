"""
Adam-Optimizer und Plateau-Lernratenplan

Adam mit beta1=0.9, beta2=0.999, eps=1e-8. Der Plan multipliziert die
Lernrate mit dem Faktor, sobald `patience` Epochen ohne Verbesserung erreicht sind.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from uplift_engine.exceptions import ContractError, DimensionError, NumericalError

from .autograd import Parameter

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    lr: float
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Dict[str, Parameter], grads: Optional[Dict[str, np.ndarray]],
              state: AdamState) -> AdamState:
    """
    Ein Adam-Schritt in-place auf `params`. Ohne `grads` werden die in den
    Parametern akkumulierten Gradienten verwendet.
    """
    if state.lr <= 0:
        raise ContractError(f"Lernrate muss > 0 sein, ist {state.lr}")
    grads = grads if grads is not None else {name: p.grad for name, p in params.items()}

    # Erst alles prüfen, dann aktualisieren: kein halber Schritt bei NaN
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f"Gradient {name}: Shape {grad.shape} statt {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Nicht-endlicher Gradient in Parameter '{name}'",
                                 parameter=name)

    state.step += 1
    bias1 = 1.0 - ADAM_BETA1 ** state.step
    bias2 = 1.0 - ADAM_BETA2 ** state.step

    for name, param in params.items():
        grad = grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.value)
            v = np.zeros_like(param.value)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v

        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        param.value = param.value - update

    return state


class Adam:
    """Bequemer Wrapper: hält Parameter und AdamState zusammen"""

    def __init__(self, params: Dict[str, Parameter], lr: float = 0.001):
        self.params = params
        self.state = AdamState(lr=lr)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        self.state.lr = value

    def zero_grad(self):
        for param in self.params.values():
            param.zero_grad()

    def step(self):
        adam_step(self.params, None, self.state)


@dataclass
class PlateauSchedule:
    lr: float
    patience: int = 2
    factor: float = 0.6
    best_loss: float = float('inf')
    bad_epochs: int = 0
    reductions: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError(f"patience muss >= 1 sein, ist {self.patience}")
        if not 0.0 < self.factor < 1.0:
            raise ContractError(f"Reduktionsfaktor muss in (0,1) liegen, ist {self.factor}")

    def update(self, val_loss: float) -> float:
        return plateau_update(self, val_loss)


def plateau_update(schedule: PlateauSchedule, val_loss: float) -> float:
    """Zähler-Automat: Verbesserung setzt zurück, bei `patience` wird reduziert"""
    if val_loss < schedule.best_loss:
        schedule.best_loss = val_loss
        schedule.bad_epochs = 0
        return schedule.lr

    schedule.bad_epochs += 1
    if schedule.bad_epochs >= schedule.patience:
        old_lr = schedule.lr
        schedule.lr = old_lr * schedule.factor
        schedule.bad_epochs = 0
        schedule.reductions += 1
        logger.info(f"📉 Lernrate reduziert: {old_lr:.6g} → {schedule.lr:.6g}")
    return schedule.lr
