"""
Layer-Bausteine mit benannten Parametern

Initialisierung: Dense uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
Embeddings normal(0, 0.01), immer über einen übergebenen Generator.
"""

from typing import Dict, Iterator, List, Tuple

import numpy as np

from uplift_engine.exceptions import CheckpointVersionError

from .autograd import Parameter, Tensor
from .functional import dense_forward, embed_lookup

EMBEDDING_INIT_STD = 0.01


class Module:
    """Container mit hierarchisch benannten Parametern"""

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for param in self.parameters().values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.value.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise CheckpointVersionError(f"Parameter fehlen im Checkpoint: {sorted(missing)[:5]}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise CheckpointVersionError(
                    f"Parameter {name}: Shape {value.shape} statt {param.shape}")
            param.value = value.copy()
            param.zero_grad()


class Dense(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 activation: str = 'linear', name: str = 'dense'):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                                name=f"{name}.weight")
        self.bias = Parameter(rng.uniform(-bound, bound, size=fan_out), name=f"{name}.bias")
        self.activation = activation

    def __call__(self, x) -> Tensor:
        return dense_forward(x, self.weight, self.bias, self.activation)


class MLP(Module):
    """Folge von Dense-Layern; ReLU zwischen den Layern, letzte Aktivierung frei"""

    def __init__(self, sizes: List[int], rng: np.random.Generator,
                 output_activation: str = 'linear', name: str = 'mlp'):
        self.layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(Dense(
                fan_in, fan_out, rng,
                activation=output_activation if last else 'relu',
                name=f"{name}.{i}"))

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Embedding(Module):
    def __init__(self, rows: int, dim: int, rng: np.random.Generator, name: str = 'embedding'):
        self.table = Parameter(rng.normal(0.0, EMBEDDING_INIT_STD, size=(rows, dim)),
                               name=f"{name}.table")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, ids, feature_names=None) -> Tensor:
        return embed_lookup(self.table, ids, feature_names)
