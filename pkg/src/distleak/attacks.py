"""Shadow-model meta-classifier attacks.

The adversary trains shadow models exactly like the target (same family,
trainer configuration and dataset size) for known indices r, turns each shadow
model into an attack feature vector and fits a linear meta-model on those
vectors:

* white-box features are the canonicalised flattened parameters;
* black-box features are the model outputs on a fixed probe set.

Classification attacks fit an L2-regularised logistic regression, regression
attacks a ridge regression whose predictions are clamped to [0, 1]. The ridge
penalty is chosen by leave-one-out error on the shadow corpus, since a fixed
penalty overfits the wide white-box feature vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.linear_model import LogisticRegression, RidgeCV

from .datagen import BINARY, INTERVAL
from .errors import DegenerateCorpusError, InvalidConfigurationError, InvalidParameterError
from .game import ABSOLUTE, AdvantageReport, Z95, advantage, check_compatible, d_zero, draw_targets, score
from .nets import MlpModel, flatten_params, forward
from .numerics import SeededRng

WHITEBOX = "whitebox"
BLACKBOX = "blackbox"
CLASSIFY = "classify"
REGRESS = "regress"

PROBE_SIZE = 64
SHADOW_COUNT = 512
LOGISTIC_C = 1.0
# Ridge penalties searched by leave-one-out on the shadow corpus.
RIDGE_ALPHAS = tuple(float(a) for a in np.logspace(-2, 5, 15))


@dataclass
class ShadowCorpus:
    features: np.ndarray
    rs: np.ndarray
    mode: str
    task: str
    layer_dims: tuple
    activation: str
    input_columns: tuple | None = None
    probe_set: np.ndarray | None = None
    probe_stream: int | None = None
    seed_streams: frozenset = frozenset()
    family_fingerprint: str | None = None
    trainer_fingerprint: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.rs = np.asarray(self.rs, dtype=np.float64).reshape(-1)
        if self.features.ndim != 2 or self.features.shape[0] != self.rs.size:
            raise InvalidParameterError("one feature row per shadow record is required")
        if self.mode == BLACKBOX and self.probe_set is None:
            raise InvalidParameterError("black-box corpora must carry their probe set")

    def __len__(self):
        return self.rs.size

    @property
    def records(self):
        return list(zip(self.features, self.rs))

    def subset(self, rows) -> "ShadowCorpus":
        return replace(self, features=self.features[rows], rs=self.rs[rows])

    def to_csv(self, path_or_buf) -> None:
        """Columns ``shadow_id,r,f0..fK``, one row per shadow model in ordinal order."""
        k = self.features.shape[1]
        lines = ["shadow_id,r," + ",".join(f"f{j}" for j in range(k))]
        for i, (row, r) in enumerate(zip(self.features, self.rs)):
            lines.append(f"{i},{float(r)!r}," + ",".join(repr(float(v)) for v in row))
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)


@dataclass
class MetaModel:
    mode: str
    task: str
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float
    layer_dims: tuple
    activation: str = "relu"
    input_columns: tuple | None = None
    probe_set: np.ndarray | None = None
    family_fingerprint: str | None = None
    trainer_fingerprint: str | None = None
    seed_streams: frozenset = field(default=frozenset(), repr=False)

    def decision(self, features: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.scale
        return z @ self.coef + self.intercept

    def predict(self, features: np.ndarray) -> np.ndarray:
        s = self.decision(features)
        if self.task == CLASSIFY:
            return (s > 0.0).astype(np.float64)  # ties go to 0
        return np.clip(s, 0.0, 1.0)

    def __call__(self, model: MlpModel) -> float:
        return attack(self, model)


# -- features ---------------------------------------------------------------

def whitebox_features(model: MlpModel) -> np.ndarray:
    return flatten_params(model, canonicalize_units=True)


def blackbox_features(model: MlpModel, probe_set: np.ndarray, input_columns=None) -> np.ndarray:
    x = probe_set if input_columns is None else probe_set[:, list(input_columns)]
    return forward(model, x)[:, 0]


def extract_features(models, mode: str, probe_set=None, input_columns=None) -> np.ndarray:
    if mode == WHITEBOX:
        return np.stack([whitebox_features(m) for m in models])
    if mode == BLACKBOX:
        return np.stack([blackbox_features(m, probe_set, input_columns) for m in models])
    raise InvalidParameterError(f"unknown attack mode {mode!r}")


# -- corpus construction ----------------------------------------------------

def shadow_indices(task: str, k: int) -> list:
    """Balanced 0/1 labels for classification, a uniform grid over [0, 1] for regression."""
    if k < 2:
        raise InvalidParameterError(f"need at least 2 shadow models, got {k}")
    if task == CLASSIFY:
        half = k // 2
        return [0] * half + [1] * (k - half)
    if task == REGRESS:
        return [float(v) for v in np.linspace(0.0, 1.0, k)]
    raise InvalidParameterError(f"unknown attack task {task!r}")


def make_probe_set(family, task: str, rng: SeededRng, size: int = PROBE_SIZE) -> np.ndarray:
    """Inputs drawn from the equal mixture of the index values' feature marginals."""
    if task == CLASSIFY:
        rs = [i % 2 for i in range(size)]
    else:
        rs = [float(v) for v in np.linspace(0.0, 1.0, size)]
    rows = [family.sample_features(r, 1, rng.spawn("probe-point", i))[0] for i, r in enumerate(rs)]
    return np.stack(rows)


@dataclass
class ShadowModels:
    rs: list
    models: list
    histories: list
    streams: frozenset
    probe_set: np.ndarray
    probe_stream: int


def train_shadow_models(family, trainer, k: int, task: str, rng: SeededRng) -> ShadowModels:
    rs = shadow_indices(task, k)
    if task == CLASSIFY and family.index_set != BINARY:
        raise InvalidConfigurationError("classification attacks need a binary index set")
    if task == REGRESS and family.index_set != INTERVAL:
        raise InvalidConfigurationError("regression attacks need the [0, 1] index set")
    rngs = [rng.spawn("shadow", j) for j in range(k)]
    models, histories = trainer.train_many(family, rs, rngs)
    probe_rng = rng.spawn("probe")
    probe = make_probe_set(family, task, probe_rng)
    return ShadowModels(rs, models, histories, frozenset(g.stream_index for g in rngs), probe,
                        probe_rng.stream_index)


def corpus_from_models(shadows: ShadowModels, family, trainer, mode: str, task: str) -> ShadowCorpus:
    feats = extract_features(shadows.models, mode, shadows.probe_set, trainer.input_columns)
    return ShadowCorpus(
        features=feats, rs=np.array(shadows.rs, dtype=np.float64), mode=mode, task=task,
        layer_dims=tuple(trainer.layer_dims), activation=trainer.activation,
        input_columns=trainer.input_columns,
        probe_set=shadows.probe_set if mode == BLACKBOX else None,
        probe_stream=shadows.probe_stream if mode == BLACKBOX else None,
        seed_streams=shadows.streams, family_fingerprint=family.fingerprint(),
        trainer_fingerprint=trainer.fingerprint())


def build_shadow_corpus(family, trainer, k: int, mode: str, task: str, rng: SeededRng) -> ShadowCorpus:
    """Train ``k`` shadow models and turn them into labelled attack features."""
    return build_shadow_corpora(family, trainer, k, (mode,), task, rng)[mode]


def build_shadow_corpora(family, trainer, k: int, modes, task: str, rng: SeededRng) -> dict:
    """Like :func:`build_shadow_corpus` for several modes, sharing the shadow models."""
    shadows = train_shadow_models(family, trainer, k, task, rng)
    return {mode: corpus_from_models(shadows, family, trainer, mode, task) for mode in modes}


# -- meta-model -------------------------------------------------------------

def train_meta(corpus: ShadowCorpus, c: float = LOGISTIC_C, alphas=RIDGE_ALPHAS) -> MetaModel:
    """Standardise the corpus features and fit the linear meta-model.

    ``c`` is the inverse L2 strength of the logistic model; ``alphas`` are the
    candidate ridge penalties (a single value fixes it).
    """
    if len(corpus) == 0:
        raise DegenerateCorpusError("empty shadow corpus")
    x = corpus.features
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (x - mean) / scale
    if corpus.task == CLASSIFY:
        labels = corpus.rs.astype(int)
        if np.unique(labels).size < 2:
            raise DegenerateCorpusError("classification corpus contains a single class")
        fit = LogisticRegression(C=c, max_iter=5000).fit(z, labels)
        coef, intercept = fit.coef_[0], float(fit.intercept_[0])
    elif corpus.task == REGRESS:
        fit = RidgeCV(alphas=np.atleast_1d(np.asarray(alphas, dtype=np.float64))).fit(z, corpus.rs)
        coef, intercept = np.asarray(fit.coef_, dtype=np.float64), float(fit.intercept_)
    else:
        raise InvalidParameterError(f"unknown attack task {corpus.task!r}")
    return MetaModel(corpus.mode, corpus.task, mean, scale, coef, intercept, corpus.layer_dims,
                     corpus.activation, corpus.input_columns, corpus.probe_set,
                     corpus.family_fingerprint, corpus.trainer_fingerprint, corpus.seed_streams)


def target_features(meta: MetaModel, target: MlpModel) -> np.ndarray:
    if target.layer_dims != tuple(meta.layer_dims) or target.hidden_activation != meta.activation:
        raise InvalidConfigurationError(
            f"target architecture {target.layer_dims}/{target.hidden_activation} does not match "
            f"shadow architecture {tuple(meta.layer_dims)}/{meta.activation}")
    if meta.mode == WHITEBOX:
        return whitebox_features(target)
    return blackbox_features(target, meta.probe_set, meta.input_columns)


def attack(meta: MetaModel, target: MlpModel) -> float:
    """The adversary's guess for the target's training index."""
    return float(meta.predict(target_features(meta, target))[0])


# -- evaluation -------------------------------------------------------------

@dataclass
class AttackReport:
    task: str
    metric: str
    value: float
    ci95_halfwidth: float
    n_attacks: int
    advantage: AdvantageReport | None = None


def report_from_guesses(task: str, rs, guesses, index_set: str) -> AttackReport:
    rs = np.asarray(rs, dtype=np.float64)
    guesses = np.asarray(guesses, dtype=np.float64)
    n = rs.size
    if n == 0:
        raise InvalidParameterError("no attacks to report")
    err = np.abs(rs - guesses)
    if task == CLASSIFY:
        acc = float(np.mean(err == 0.0))
        half = Z95 * math.sqrt(acc * (1.0 - acc) / n)
        metric, value = "accuracy", acc
    else:
        value = math.fsum(err) / n
        half = Z95 * float(np.std(err, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
        metric = "mae"
    from .game import GameTrial

    trials = [GameTrial(float(r), float(g), float(e), t) for t, (r, g, e) in enumerate(zip(rs, guesses, err))]
    adv = advantage(trials, d_zero(index_set, ABSOLUTE))
    return AttackReport(task, metric, value, half, n, adv)


def evaluate_attacks(metas: dict, family, trainer, n_attacks: int, rng: SeededRng) -> dict:
    """Play the game once and score every meta-model on the same target models."""
    if n_attacks < 1:
        raise InvalidParameterError(f"n_attacks must be at least 1, got {n_attacks}")
    for meta in metas.values():
        check_compatible(meta, family, trainer)
    pool = draw_targets(family, trainer, n_attacks, rng)
    out = {}
    for name, meta in metas.items():
        check_compatible(meta, family, trainer, pool.streams)
        trials = score(meta, pool, ABSOLUTE)
        out[name] = report_from_guesses(meta.task, [t.true_r for t in trials],
                                        [t.guess_r for t in trials], family.index_set)
    return out


def evaluate_attack(meta: MetaModel, family, trainer, n_attacks: int, rng: SeededRng) -> AttackReport:
    """Accuracy (classification) or mean absolute error (regression) over ``n_attacks`` games."""
    return evaluate_attacks({"meta": meta}, family, trainer, n_attacks, rng)["meta"]


# -- serialisation ------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps_meta(meta: MetaModel) -> str:
    lines = [f"META {meta.mode} {meta.task} {meta.activation} " + " ".join(str(d) for d in meta.layer_dims)]
    cols = "all" if meta.input_columns is None else " ".join(str(c) for c in meta.input_columns)
    lines.append("columns " + cols)
    lines.append("family " + str(meta.family_fingerprint))
    lines.append("trainer " + str(meta.trainer_fingerprint))
    lines.append("mean " + _fmt(meta.mean))
    lines.append("scale " + _fmt(meta.scale))
    lines.append("coef " + _fmt(meta.coef))
    lines.append("intercept " + _fmt([meta.intercept]))
    if meta.probe_set is not None:
        rows, cols_n = meta.probe_set.shape
        lines.append(f"probe {rows} {cols_n}")
        lines += [_fmt(row) for row in meta.probe_set]
    return "\n".join(lines) + "\n"


def loads_meta(text: str) -> MetaModel:
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] != "META":
        raise InvalidParameterError(f"not a meta-model header: {lines[0]!r}")
    mode, task, act = head[1], head[2], head[3]
    dims = tuple(int(t) for t in head[4:])
    fields = {}
    probe = None
    i = 1
    while i < len(lines):
        key, _, rest = lines[i].partition(" ")
        if key == "probe":
            rows, ncol = (int(t) for t in rest.split())
            probe = np.array([[float(t) for t in lines[i + 1 + j].split()] for j in range(rows)])
            probe = probe.reshape(rows, ncol)
            i += rows + 1
            continue
        fields[key] = rest
        i += 1

    def vec(name):
        return np.array([float(t) for t in fields[name].split()])

    cols = None if fields["columns"] == "all" else tuple(int(t) for t in fields["columns"].split())
    fam = None if fields["family"] == "None" else fields["family"]
    tr = None if fields["trainer"] == "None" else fields["trainer"]
    return MetaModel(mode, task, vec("mean"), vec("scale"), vec("coef"), float(vec("intercept")[0]),
                     dims, act, cols, probe, fam, tr)
