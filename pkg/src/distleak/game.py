"""The distribution inference game and the adversary's advantage.

The trainer draws r uniformly from the index set, samples a training set from
D^r and trains a model M; the adversary answers with a guess H(M). Advantage
is d0 minus the expected distance of the guess, where d0 is the best expected
distance achievable without looking at M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .datagen import BINARY, INTERVAL
from .errors import InvalidConfigurationError, InvalidParameterError, UnsupportedConfigurationError
from .numerics import SeededRng

Z95 = 1.959963984540054


@dataclass(frozen=True)
class DistanceFn:
    """d(r, r'): ``absolute`` is |r - r'|, ``squared`` is (r - r')^2.

    A custom callable may be supplied as ``evaluator``; d0 is then only
    available on the binary index set.
    """

    kind: str = "absolute"
    evaluator: object = None

    def __post_init__(self):
        if self.evaluator is None and self.kind not in ("absolute", "squared"):
            raise InvalidParameterError(f"unknown distance {self.kind!r}")

    def __call__(self, r, r_hat) -> float:
        if self.evaluator is not None:
            return float(self.evaluator(r, r_hat))
        diff = float(r) - float(r_hat)
        return abs(diff) if self.kind == "absolute" else diff * diff


ABSOLUTE = DistanceFn("absolute")
SQUARED = DistanceFn("squared")


@dataclass(frozen=True)
class GameTrial:
    true_r: float
    guess_r: float
    distance: float
    ordinal: int = 0


@dataclass(frozen=True)
class AdvantageReport:
    d_zero: float
    mean_distance: float
    advantage: float
    trial_count: int
    ci95_halfwidth: float

    @property
    def accuracy(self) -> float:
        """1 - mean distance; the accuracy of a binary guesser under |r - r'|."""
        return 1.0 - self.mean_distance


def _expected_distance_uniform_interval(distance: DistanceFn):
    if distance.evaluator is None and distance.kind == "absolute":
        # integral over r in [0, 1] of |r - t| dr
        return lambda t: 0.5 * (t * t + (1.0 - t) ** 2)
    if distance.evaluator is None and distance.kind == "squared":
        return lambda t: t * t - t + 1.0 / 3.0
    return None


def d_zero(index_set: str, distance: DistanceFn = ABSOLUTE, prior: str = "uniform") -> float:
    """inf over r' in R of E[d(r, r')] for r uniform on R."""
    if prior != "uniform":
        raise UnsupportedConfigurationError(f"only the uniform prior is supported, got {prior!r}")
    if index_set == BINARY:
        return min(0.5 * (distance(0, t) + distance(1, t)) for t in (0, 1))
    if index_set == INTERVAL:
        expected = _expected_distance_uniform_interval(distance)
        if expected is None:
            raise UnsupportedConfigurationError(f"no closed form for {distance.kind!r} on [0, 1]")
        res = minimize_scalar(expected, bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-10})
        return float(min(res.fun, expected(0.0), expected(1.0)))
    raise UnsupportedConfigurationError(f"unsupported index set {index_set!r}")


def draw_indices(index_set: str, trials: int, rng: SeededRng) -> list:
    """r drawn uniformly from the index set, one per trial, each from its own stream."""
    out = []
    for t in range(trials):
        gen = rng.spawn("game-index", t).generator
        out.append(int(gen.integers(0, 2)) if index_set == BINARY else float(gen.random()))
    return out


@dataclass
class TargetPool:
    """Target models produced by the trainer side of the game."""

    rs: list
    models: list
    histories: list
    streams: frozenset


def draw_targets(family, trainer, trials: int, rng: SeededRng) -> TargetPool:
    if trials < 0:
        raise InvalidParameterError(f"trial count must be non-negative, got {trials}")
    rs = draw_indices(family.index_set, trials, rng)
    rngs = [rng.spawn("target", t) for t in range(trials)]
    if trials == 0:
        return TargetPool([], [], [], frozenset())
    models, histories = trainer.train_many(family, rs, rngs)
    return TargetPool(rs, models, histories, frozenset(g.stream_index for g in rngs))


def check_compatible(adversary, family, trainer, target_streams=frozenset()):
    fam = getattr(adversary, "family_fingerprint", None)
    if fam is not None and fam != family.fingerprint():
        raise InvalidConfigurationError("adversary was trained on a different distribution family")
    tr = getattr(adversary, "trainer_fingerprint", None)
    if tr is not None and hasattr(trainer, "fingerprint") and tr != trainer.fingerprint():
        raise InvalidConfigurationError("adversary was trained with a different trainer configuration")
    shadow = getattr(adversary, "seed_streams", None)
    if shadow and target_streams & frozenset(shadow):
        raise InvalidConfigurationError("target models reuse random streams of the shadow models")


def score(adversary, pool: TargetPool, distance: DistanceFn = ABSOLUTE) -> list:
    guesses = [adversary(m) for m in pool.models]
    return [GameTrial(float(r), float(g), distance(r, g), t)
            for t, (r, g) in enumerate(zip(pool.rs, guesses))]


def play_game(family, trainer, adversary, trials: int, rng: SeededRng,
              distance: DistanceFn = ABSOLUTE) -> list:
    """Play ``trials`` independent rounds and return one :class:`GameTrial` per round.

    ``trainer`` is anything with ``train_many(family, rs, rngs)``; ``adversary``
    is a callable ``model -> guess``. Target streams are derived from ``rng``
    under their own task kind and are checked against the adversary's shadow
    streams when the adversary exposes them.
    """
    check_compatible(adversary, family, trainer)
    pool = draw_targets(family, trainer, trials, rng)
    check_compatible(adversary, family, trainer, pool.streams)
    return score(adversary, pool, distance)


def advantage(trials, d0: float) -> AdvantageReport:
    """Mean distance, advantage d0 - mean distance, and a normal-approximation 95% CI."""
    trials = list(trials)
    if not trials:
        raise InvalidParameterError("advantage needs at least one trial")
    dist = np.array([t.distance for t in trials], dtype=np.float64)
    mean = math.fsum(dist) / dist.size
    half = Z95 * float(np.std(dist, ddof=1)) / math.sqrt(dist.size) if dist.size > 1 else 0.0
    return AdvantageReport(d0, mean, d0 - mean, dist.size, half)
