"""
Minimaler Reverse-Mode-Autodiff auf numpy-Arrays

Jede Operation zeichnet ihre Eltern und eine Gradientenfunktion auf.
backward() läuft den Graph in topologischer Reihenfolge rückwärts und
akkumuliert Gradienten in den Parametern. Alles in float64.
"""

import numpy as np
from scipy.special import expit, softmax as _softmax

from uplift_engine.exceptions import DimensionError, GraphStateError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Summiere Broadcast-Achsen weg, bis grad wieder `shape` hat"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Wert plus optionaler Graph-Knoten"""

    def __init__(self, value, requires_grad=False, name=None, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._grad_fn = grad_fn
        self._released = False

    # --- Eigenschaften ---

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return self._grad_fn is None

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() nur für Skalare, Shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> 'Tensor':
        """Gleicher Wert, ohne Graph (Stop-Gradient)"""
        return Tensor(self.value)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # --- Graph-Aufbau ---

    @staticmethod
    def _make(value, parents, grad_fn):
        needs_grad = any(p.requires_grad for p in parents)
        if not needs_grad:
            return Tensor(value)
        return Tensor(value, requires_grad=True, parents=parents, grad_fn=grad_fn)

    # --- Arithmetik ---

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.value + other.value, (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor._make(
            a * b, (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor._make(
            a / b, (self, other),
            lambda g: (_unbroadcast(g / b, a.shape),
                       _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self.value
        return Tensor._make(
            a ** exponent, (self,),
            lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(
                f"matmul erwartet mindestens 2D-Operanden, erhalten {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul Shape-Konflikt: {a.shape} @ {b.shape}")

        def grad_fn(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, other), grad_fn)

    @property
    def T(self):
        return Tensor._make(self.value.T, (self,), lambda g: (g.T,))

    # --- Reduktionen & Shapes ---

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.value.sum(axis=axis, keepdims=keepdims), (self,), grad_fn)

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        original = self.shape
        return Tensor._make(self.value.reshape(*shape), (self,),
                            lambda g: (g.reshape(original),))


class Parameter(Tensor):
    """Trainierbarer Tensor (ParamTensor) mit akkumuliertem Gradienten"""

    def __init__(self, value, name=None):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter(name={self.name}, shape={self.shape})"


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# --- Elementare Funktionen mit Gradienten ---

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return Tensor._make(x.value * mask, (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.value)
    return Tensor._make(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    s = _softmax(x.value, axis=axis)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), grad_fn)


def log(x) -> Tensor:
    x = as_tensor(x)
    a = x.value
    return Tensor._make(np.log(a), (x,), lambda g: (g / a,))


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor) elementweise; unterhalb der Schwelle kein Gradient"""
    x = as_tensor(x)
    mask = x.value >= floor
    return Tensor._make(np.maximum(x.value, floor), (x,), lambda g: (g * mask,))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.value for t in tensors], axis=axis),
                        tuple(tensors), grad_fn)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(np.stack([t.value for t in tensors], axis=axis),
                        tuple(tensors), grad_fn)


def take_rows(x, index) -> Tensor:
    """Zeilen-Gather x[index]; index darf beliebige Shape haben (Embedding-Lookup)"""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._make(x.value[index], (x,), grad_fn)


def segment_mean(x, segments, num_segments: int) -> Tensor:
    """Mittelwert der Zeilen von x pro Segment-ID (Average-Pooling variabler Länge)"""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != x.shape[0]:
        raise DimensionError(f"segment_mean: {segments.shape[0]} Segment-IDs für {x.shape[0]} Zeilen")
    counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise DimensionError("segment_mean: leeres Segment")
    totals = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(totals, segments, x.value)
    scale = (1.0 / counts).reshape((-1,) + (1,) * (x.ndim - 1))

    def grad_fn(g):
        return ((g * scale)[segments],)

    return Tensor._make(totals * scale, (x,), grad_fn)


# --- Rückwärtsdurchlauf ---

def _topological_order(root: Tensor):
    order, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Reverse-Mode-Gradienten für alle erreichbaren Parameter.
    Der Graph wird danach freigegeben; ein zweiter Aufruf ist ein Zustandsfehler.
    """
    if loss.value.size != 1:
        raise DimensionError(f"backward erwartet einen Skalar, erhalten Shape {loss.shape}")
    if loss._released:
        raise GraphStateError("Graph bereits freigegeben: backward ohne neuen Forward-Pass")
    if not loss.requires_grad:
        # Konstanter Loss: alle Gradienten bleiben 0
        return
    if loss.is_leaf:
        raise GraphStateError("backward auf Blatt-Tensor ohne aufgezeichnete Berechnung")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if isinstance(node, Parameter):
                node.grad = node.grad + g
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._grad_fn = None
            node._released = True
