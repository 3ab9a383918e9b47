"""
Hybrid Uplift Model (HUM)

Pro Branch k: Target-Attention über die Feature-Embeddings mit dem
Behandlungs-Embedding als Query, Konkatenation mit dem Behandlungs-Embedding,
M Experten mit Softmax-Gate und zwei Towern (behandelt / Kontrolle).
Der Kontrollpfad eines Branches nutzt dessen Attention- und Gate-Parameter
mit dem Embedding von t=0.

Alle Forward-Funktionen arbeiten auf Batches (erste Achse = Nutzer);
Einzelvektoren werden intern um eine Batch-Achse erweitert.
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from nncore.autograd import Tensor, as_tensor, concat, stack
from nncore.functional import dense_forward, softmax
from nncore.layers import MLP, Dense, Embedding, Module
from uplift_engine.exceptions import ContractError, DimensionError, FeatureIndexError

logger = logging.getLogger(__name__)

TREATED = 'treated'
CONTROL = 'control'


@dataclass(frozen=True)
class HumHyperparameters:
    embedding_dim: int = 32
    num_experts: int = 4
    expert_hidden: int = 64
    expert_out: int = 32
    tower_hidden: int = 64
    lambda_kl: float = 1.0
    kl_stop_gradient: bool = False
    binary_response: bool = False

    @classmethod
    def from_config(cls, config: dict) -> 'HumHyperparameters':
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in config.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


class Branch(Module):
    """Parameter eines Branches: W^k/b^k, W_g^k/b_g^k, Experten, zwei Tower"""

    def __init__(self, num_features: int, hp: HumHyperparameters,
                 rng: np.random.Generator, name: str):
        d, M = hp.embedding_dim, hp.num_experts
        output = 'sigmoid' if hp.binary_response else 'linear'
        self.attention = Dense(d, num_features, rng, name=f"{name}.attention")
        self.gate = Dense(2 * d, M, rng, name=f"{name}.gate")
        self.experts = [MLP([2 * d, hp.expert_hidden, hp.expert_out], rng,
                            output_activation='relu', name=f"{name}.expert{m}")
                        for m in range(M)]
        self.treated_tower = MLP([hp.expert_out, hp.tower_hidden, 1], rng,
                                 output_activation=output, name=f"{name}.treated")
        self.control_tower = MLP([hp.expert_out, hp.tower_hidden, 1], rng,
                                 output_activation=output, name=f"{name}.control")


class HumModel(Module):
    """
    Ein Modell pro Response. `branch_treatments[b]` ist die Behandlung
    (1..K), die Branch b+1 modelliert; Standard ist die Identität.
    """

    def __init__(self, cardinalities: Sequence[int], num_treatments: int,
                 hyperparameters: HumHyperparameters, rng: np.random.Generator,
                 branch_treatments: Optional[Sequence[int]] = None,
                 feature_names: Optional[Sequence[str]] = None,
                 response_index: int = 0, response_name: str = 'response'):
        if num_treatments < 1:
            raise ContractError(f"HUM braucht K >= 1, erhalten {num_treatments}")
        if not cardinalities:
            raise ContractError("HUM braucht mindestens ein Feature")
        branch_treatments = list(branch_treatments or range(1, num_treatments + 1))
        if any(not 1 <= k <= num_treatments for k in branch_treatments):
            raise ContractError(f"Branch-Zuordnung außerhalb [1, {num_treatments}]: "
                                f"{branch_treatments}")
        if set(branch_treatments) != set(range(1, num_treatments + 1)):
            raise ContractError("Jede Behandlung braucht mindestens einen Branch")

        self.cardinalities = [int(c) for c in cardinalities]
        self.offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)
        self.feature_names = list(feature_names or [f"#{j}" for j in range(len(cardinalities))])
        self.num_treatments = num_treatments
        self.branch_treatments = branch_treatments
        self.hp = hyperparameters
        self.response_index = response_index
        self.response_name = response_name

        d = hyperparameters.embedding_dim
        self.feature_embedding = Embedding(int(sum(self.cardinalities)), d, rng, name='E_x')
        self.treatment_embedding = Embedding(num_treatments + 1, d, rng, name='E_t')
        self.branches = [Branch(len(self.cardinalities), hyperparameters, rng, name=f"branch{b + 1}")
                         for b in range(len(branch_treatments))]

    @classmethod
    def from_schema(cls, schema, config: dict, rng: np.random.Generator,
                    response_index: int = 0) -> 'HumModel':
        per_treatment = int(config.get('branches_per_treatment', 1))
        if per_treatment < 1:
            raise ContractError(f"branches_per_treatment muss >= 1 sein, ist {per_treatment}")
        branch_treatments = [k for k in range(1, schema.K + 1) for _ in range(per_treatment)]
        return cls(schema.cardinalities, schema.K, HumHyperparameters.from_config(config), rng,
                   branch_treatments=branch_treatments, feature_names=schema.feature_names,
                   response_index=response_index,
                   response_name=schema.response_names[response_index])

    @property
    def num_branches(self) -> int:
        return len(self.branches)

    @property
    def num_features(self) -> int:
        return len(self.cardinalities)

    def branches_for(self, k: int) -> List[int]:
        """1-basierte Branch-Indizes, die Behandlung k modellieren"""
        return [b + 1 for b, kb in enumerate(self.branch_treatments) if kb == k]

    def _branch(self, branch: int) -> Branch:
        if not 1 <= branch <= self.num_branches:
            raise ContractError(
                f"Branch {branch} außerhalb [1, {self.num_branches}]; "
                f"t=0 hat keinen eigenen Branch")
        return self.branches[branch - 1]

    # --- Embeddings ---

    def embed_features(self, x) -> Tensor:
        """(B, F) Feature-IDs → (B, F, d)"""
        x = np.asarray(x, dtype=np.int64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.num_features:
            raise DimensionError(f"{x.shape[1]} Features statt {self.num_features}")
        for j, cardinality in enumerate(self.cardinalities):
            bad = (x[:, j] < 0) | (x[:, j] >= cardinality)
            if np.any(bad):
                raise FeatureIndexError(self.feature_names[j], int(x[bad, j][0]), cardinality)
        return self.feature_embedding(x + self.offsets)

    def embed_treatment(self, t) -> Tensor:
        t = np.asarray(t, dtype=np.int64)
        if np.any((t < 0) | (t > self.num_treatments)):
            raise ContractError(f"Behandlung außerhalb [0, {self.num_treatments}]")
        return self.treatment_embedding(t)

    # --- Forward-Bausteine ---

    def feature_select(self, e_x, e_t, branch: int) -> Tuple[Tensor, Tensor]:
        """Attention-Gewichte über die Features und das gewichtete Feature-Embedding"""
        params = self._branch(branch).attention
        e_x, e_t = as_tensor(e_x), as_tensor(e_t)
        single = e_x.ndim == 2
        if single:
            e_x = e_x.reshape(1, *e_x.shape)
            e_t = e_t.reshape(1, -1)
        if e_x.shape[1] != params.weight.shape[0] or e_t.shape[-1] != e_x.shape[-1]:
            raise DimensionError(f"feature_select: e_x {e_x.shape} passt nicht zu e_t {e_t.shape}")

        batch, num_features = e_x.shape[0], e_x.shape[1]
        attention = softmax(dense_forward(e_t, params.weight, params.bias), axis=-1)
        selected = (attention.reshape(batch, num_features, 1) * e_x).sum(axis=1)
        if single:
            return attention.reshape(-1), selected.reshape(-1)
        return attention, selected

    @staticmethod
    def fuse(e_xk, e_t) -> Tensor:
        e_xk, e_t = as_tensor(e_xk), as_tensor(e_t)
        if e_xk.shape != e_t.shape:
            raise DimensionError(f"fuse: Längen-Konflikt {e_xk.shape} vs {e_t.shape}")
        return concat([e_xk, e_t], axis=-1)

    def branch_forward(self, f, branch: int, path: str) -> Tuple[Tensor, Tensor]:
        """Gate-Verteilung und Vorhersage eines Pfads (treated/control)"""
        if path not in (TREATED, CONTROL):
            raise ContractError(f"Unbekannter Pfad '{path}'")
        params = self._branch(branch)
        f = as_tensor(f)
        single = f.ndim == 1
        if single:
            f = f.reshape(1, -1)

        batch = f.shape[0]
        gate = softmax(params.gate(f), axis=-1)
        outputs = stack([expert(f) for expert in params.experts], axis=1)
        mixture = (gate.reshape(batch, self.hp.num_experts, 1) * outputs).sum(axis=1)
        tower = params.treated_tower if path == TREATED else params.control_tower
        prediction = tower(mixture).reshape(-1)
        if single:
            return gate.reshape(-1), prediction.reshape(())
        return gate, prediction

    def path_forward(self, x, t, branch: int, path: str) -> Tuple[Tensor, Tensor]:
        """Kompletter Pfad: Embeddings → Selektion → Fusion → Experten → Tower"""
        e_x = self.embed_features(x)
        e_t = self.embed_treatment(t)
        _, selected = self.feature_select(e_x, e_t, branch)
        return self.branch_forward(self.fuse(selected, e_t), branch, path)
