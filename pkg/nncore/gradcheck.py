"""
Finite-Differenzen-Prüfung der analytischen Gradienten

Zentrale Differenzen mit Schritt 1e-4; Fehler pro Parametergruppe als
relative Norm ||analytisch - numerisch|| / (||analytisch|| + ||numerisch||).
"""

import logging
from typing import Callable, Dict, Optional

import numpy as np

from .autograd import Parameter, Tensor, backward

logger = logging.getLogger(__name__)

FD_STEP = 1e-4


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Dict[str, Parameter]):
    for param in params.values():
        param.zero_grad()
    backward(loss_fn())
    return {name: param.grad.copy() for name, param in params.items()}


def numerical_gradients(loss_fn: Callable[[], Tensor], params: Dict[str, Parameter],
                        step: float = FD_STEP, max_entries: Optional[int] = None,
                        rng: Optional[np.random.Generator] = None):
    """
    Zentrale Differenzen. Mit `max_entries` wird pro Gruppe nur eine
    Stichprobe von Einträgen geprüft; die übrigen Einträge bleiben NaN.
    """
    rng = rng or np.random.default_rng(0)
    result = {}
    for name, param in params.items():
        size = param.value.size
        indices = np.arange(size)
        if max_entries is not None and size > max_entries:
            indices = np.sort(rng.choice(size, size=max_entries, replace=False))
        grad = np.full(size, np.nan)
        for i in indices:
            original = param.value.flat[i]
            param.value.flat[i] = original + step
            plus = loss_fn().item()
            param.value.flat[i] = original - step
            minus = loss_fn().item()
            param.value.flat[i] = original
            grad[i] = (plus - minus) / (2.0 * step)
        result[name] = grad.reshape(param.shape)
    return result


def relative_errors(analytic: Dict[str, np.ndarray], numeric: Dict[str, np.ndarray]):
    errors = {}
    for name, num in numeric.items():
        checked = ~np.isnan(num)
        a = analytic[name][checked]
        n = num[checked]
        denom = np.linalg.norm(a) + np.linalg.norm(n)
        errors[name] = 0.0 if denom < 1e-12 else float(np.linalg.norm(a - n) / denom)
    return errors


def check_gradients(loss_fn: Callable[[], Tensor], params: Dict[str, Parameter],
                    step: float = FD_STEP, max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Relativer Fehler pro Parametergruppe"""
    analytic = analytic_gradients(loss_fn, params)
    numeric = numerical_gradients(loss_fn, params, step=step,
                                  max_entries=max_entries, rng=rng)
    errors = relative_errors(analytic, numeric)
    worst = max(errors, key=errors.get) if errors else None
    if worst is not None:
        logger.debug(f"🔍 Gradient-Check: max. Fehler {errors[worst]:.2e} in {worst}")
    return errors
