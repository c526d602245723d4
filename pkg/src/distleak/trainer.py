"""Training configurations shared by target models and shadow models.

A :class:`TrainerConfig` fixes everything about how a model is produced from a
distribution index: architecture, initialisation, optimiser settings, the
objective (ERM or IRM) and which feature columns the model sees. Each model
is driven by one :class:`SeededRng` from which its data, initial weights and
shuffling streams are derived.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import parallel
from .errors import InvalidParameterError
from .nets import IrmSpec, TrainOptions, random_init, train_models
from .numerics import Dataset, stable_hash

# Models per work unit. Fixed so that results do not depend on the pool size.
CHUNK = 64


@dataclass(frozen=True)
class TrainerConfig:
    layer_dims: tuple = (4, 16, 1)
    activation: str = "relu"
    init_variance: float = 0.25
    learning_rate: float = 0.01
    max_epochs: int = 50
    batch_size: int = 64
    target_train_mse: float | None = None
    method: str = "erm"
    penalty_weight: float = 100.0
    warmup_epochs: int = 50
    warmup_penalty: float = 1.0
    input_columns: tuple | None = None

    def __post_init__(self):
        if self.method not in ("erm", "irm"):
            raise InvalidParameterError(f"unknown training method {self.method!r}")
        if self.input_columns is not None and len(self.input_columns) != self.layer_dims[0]:
            raise InvalidParameterError(
                f"{len(self.input_columns)} input columns for input width {self.layer_dims[0]}")
        self.options()

    def options(self) -> TrainOptions:
        return TrainOptions(self.learning_rate, self.max_epochs, self.batch_size, self.target_train_mse)

    def fingerprint(self) -> str:
        return format(stable_hash(repr(sorted(asdict(self).items()))), "016x")

    def project(self, features: np.ndarray) -> np.ndarray:
        if self.input_columns is None:
            return features
        return features[..., list(self.input_columns)]

    def penalty_schedule(self):
        if self.method != "irm":
            return None
        return _Schedule(self.warmup_epochs, self.warmup_penalty, self.penalty_weight)

    def train_many(self, family, rs, rngs):
        """Train one model per ``(r, rng)`` pair. Returns ``(models, histories)``."""
        rs, rngs = list(rs), list(rngs)
        if len(rs) != len(rngs):
            raise InvalidParameterError("one random stream per model is required")
        tasks = [(self, family, rs[i:i + CHUNK], rngs[i:i + CHUNK]) for i in range(0, len(rs), CHUNK)]
        models, histories = [], []
        for m, h in parallel.map_tasks(_train_chunk, tasks):
            models += m
            histories += h
        return models, histories


@dataclass(frozen=True)
class _Schedule:
    warmup_epochs: int
    warmup_penalty: float
    penalty_weight: float

    def __call__(self, epoch):
        return self.warmup_penalty if epoch < self.warmup_epochs else self.penalty_weight


def model_environments(trainer: TrainerConfig, family, r, rng):
    """Training environments as seen by the model (projected columns).

    ERM pools all environments into one dataset; IRM keeps them apart.
    """
    envs = family.sample_environments(r, rng.spawn("data"))
    envs = [Dataset(trainer.project(e.features), e.labels) for e in envs]
    if trainer.method == "erm" and len(envs) > 1:
        envs = [Dataset.concat(envs)]
    return envs


def _train_chunk(trainer: TrainerConfig, family, rs, rngs):
    env_lists, inits, shuffles = [], [], []
    for r, rng in zip(rs, rngs):
        env_lists.append(model_environments(trainer, family, r, rng))
        inits.append(random_init(trainer.layer_dims, trainer.init_variance, rng.spawn("init"),
                                 trainer.activation))
        shuffles.append(rng.spawn("shuffle"))
    if trainer.method == "irm":
        # validates the IRM problem shape; the engine consumes the same pieces
        for m, envs in zip(inits, env_lists):
            IrmSpec(m, envs, trainer.penalty_weight, trainer.warmup_epochs, trainer.warmup_penalty)
    return train_models(inits, env_lists, trainer.options(), shuffles, trainer.penalty_schedule())
