"""Pre-wired experiment families.

Each ``run_*`` function is a pure function of an :class:`ExperimentConfig`:
all randomness is derived from ``config.seed``. Sweep points share their
random streams (common random numbers), so differences between points come
from the swept parameter and not from fresh sampling noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import attacks as A
from .datagen import BINARY, INTERVAL, ExpAFamily, ExpAParams, ExpBFamily, MembershipFamily, default_parties, make_teacher
from .errors import InvalidParameterError
from .game import ABSOLUTE, SQUARED, Z95, advantage, d_zero, draw_targets, score
from .nets import mse
from .numerics import Dataset, SeededRng
from .trainer import TrainerConfig

EXPA_EPS = "expA_eps_sweep"
EXPA_MSE = "expA_mse_sweep"
EXPB_MSE = "expB_mse_sweep"
EXPC_SIZE = "expC_size_sweep"
MEMBERSHIP = "membership"
EXPERIMENTS = (EXPA_EPS, EXPA_MSE, EXPB_MSE, EXPC_SIZE, MEMBERSHIP)

RESULT_COLUMNS = ("experiment", "variant", "sweep_param", "sweep_value", "attack_mode", "task",
                  "metric", "value", "ci95", "n")

EPS_GRID = (0.0, 0.01, 0.02, 0.05, 0.1)
MSE_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)
SIZE_GRID = (512, 1024, 2048)

# name -> (sweep parameter, default grid, default task, max epochs)
_LAYOUT = {
    EXPA_EPS: ("eps", EPS_GRID, A.CLASSIFY, 30),
    EXPA_MSE: ("target_mse", MSE_GRID, A.CLASSIFY, 300),
    EXPB_MSE: ("target_mse", MSE_GRID, A.REGRESS, 300),
    EXPC_SIZE: ("n", SIZE_GRID, A.REGRESS, 30),
    MEMBERSHIP: ("variant", (), A.CLASSIFY, 150),
}


@dataclass(frozen=True)
class ModelVariant:
    """Target-model type of the membership experiment."""

    kind: str
    inputs: tuple

    def __post_init__(self):
        if self.kind not in ("erm_full", "erm_causal", "irm"):
            raise InvalidParameterError(f"unknown model variant {self.kind!r}")
        if self.kind == "erm_causal" and tuple(self.inputs) != (0,):
            raise InvalidParameterError("erm_causal sees X1 only")

    def trainer(self, base: TrainerConfig, hidden: int = 2) -> TrainerConfig:
        method = "irm" if self.kind == "irm" else "erm"
        return replace(base, layer_dims=(len(self.inputs), hidden, 1), input_columns=tuple(self.inputs),
                       method=method)


VARIANTS = (ModelVariant("erm_full", (0, 1)), ModelVariant("erm_causal", (0,)), ModelVariant("irm", (0, 1)))


@dataclass
class ExperimentConfig:
    """Everything that determines one experiment run.

    ``sweep_values``, ``task`` and ``max_epochs`` default per experiment;
    ``shadows`` defaults to 256 for the sweeps and to the attack-module default
    for the membership experiment, whose ``trials`` is the number of target
    models per variant.
    """

    name: str
    sweep_values: tuple | None = None
    task: str | None = None
    modes: tuple = (A.WHITEBOX, A.BLACKBOX)
    shadows: int | None = None
    trials: int | None = None
    seed: int = 0
    teacher_seed: int = 0
    n: int = 2048
    eps: float = 0.05
    max_epochs: int | None = None
    learning_rate: float = 0.01
    init_variance: float = 0.25
    batch_size: int = 64
    hidden: int | None = None
    n_attacks: int = 100
    parties: int = 4
    records_per_party: int = 512
    absent_party: int = 3
    penalty_weight: float = 100.0
    warmup_epochs: int = 50

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.name!r}; expected one of {EXPERIMENTS}")
        param, grid, task, epochs = _LAYOUT[self.name]
        membership = self.name == MEMBERSHIP
        if self.sweep_values is None:
            self.sweep_values = tuple(v.kind for v in VARIANTS) if membership else grid
        self.sweep_values = tuple(self.sweep_values)
        self.task = self.task or task
        self.max_epochs = int(self.max_epochs or epochs)
        self.shadows = int(self.shadows or (A.SHADOW_COUNT if membership else 256))
        self.trials = int(self.trials or (256 if membership else 200))
        self.hidden = int(self.hidden or (2 if membership else 16))
        self.modes = tuple(self.modes)
        self._validate(param)

    def _validate(self, param):
        if self.task not in (A.CLASSIFY, A.REGRESS):
            raise InvalidParameterError(f"task must be classify or regress, got {self.task!r}")
        for mode in self.modes:
            if mode not in (A.WHITEBOX, A.BLACKBOX):
                raise InvalidParameterError(f"unknown attack mode {mode!r}")
        if not self.modes:
            raise InvalidParameterError("at least one attack mode is required")
        if not self.sweep_values:
            raise InvalidParameterError(f"{param} needs at least one value")
        for v in self.sweep_values:
            if param == "eps" and not v >= 0:
                raise InvalidParameterError(f"eps must be non-negative, got {v}")
            if param == "target_mse" and not v > 0:
                raise InvalidParameterError(f"target_mse must be positive, got {v}")
            if param == "n" and (int(v) != v or v < 1):
                raise InvalidParameterError(f"n must be a positive integer, got {v}")
            if param == "variant" and v not in {x.kind for x in VARIANTS}:
                raise InvalidParameterError(f"unknown variant {v!r}")
        if self.eps < 0:
            raise InvalidParameterError(f"eps must be non-negative, got {self.eps}")
        if self.shadows < 2:
            raise InvalidParameterError(f"shadows must be at least 2, got {self.shadows}")
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be at least 1, got {self.trials}")
        if self.n_attacks < 1:
            raise InvalidParameterError(f"n_attacks must be at least 1, got {self.n_attacks}")
        if self.name == MEMBERSHIP and self.task != A.CLASSIFY:
            raise InvalidParameterError("the membership experiment is a classification task")
        if self.name == EXPA_EPS or self.name == EXPA_MSE:
            if self.task != A.CLASSIFY:
                raise InvalidParameterError("expA has a binary index set; use task = classify")

    @property
    def sweep_param(self) -> str:
        return _LAYOUT[self.name][0]

    def trainer(self, **overrides) -> TrainerConfig:
        base = TrainerConfig(layer_dims=(4, self.hidden, 1), init_variance=self.init_variance,
                             learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                             batch_size=self.batch_size, penalty_weight=self.penalty_weight,
                             warmup_epochs=self.warmup_epochs)
        return replace(base, **overrides)


@dataclass
class ResultRow:
    experiment: str
    variant: str
    sweep_param: str
    sweep_value: object
    attack_mode: str
    task: str
    metric: str
    value: float
    ci95: float
    n: int

    def cells(self) -> list:
        return [self.experiment, self.variant, self.sweep_param, _cell(self.sweep_value), self.attack_mode,
                self.task, self.metric, _cell(self.value), _cell(self.ci95), str(int(self.n))]


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class ExperimentResult:
    """Rows in CSV order plus the underlying reports keyed by (sweep value, mode)."""

    config: ExperimentConfig
    rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def value(self, sweep_value, mode: str, metric: str | None = None) -> float:
        for row in self.rows:
            if row.sweep_value == sweep_value and row.attack_mode == mode and (metric is None or row.metric == metric):
                return row.value
        raise KeyError((sweep_value, mode, metric))


def write_results(rows, path_or_buf) -> None:
    """Results CSV with the fixed column order and ``\\n`` line endings."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(row.cells())

    if hasattr(path_or_buf, "write"):
        emit(path_or_buf)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            emit(fh)


def median_with_ci(values):
    """Sample median and a distribution-free 95% half-width from binomial order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    m = v.size
    med = float(np.median(v))
    if m < 2:
        return med, 0.0
    k = Z95 * math.sqrt(m) / 2.0
    lo = v[max(0, int(math.floor(m / 2.0 - k)))]
    hi = v[min(m - 1, int(math.ceil(m / 2.0 + k)))]
    return med, float(hi - lo) / 2.0


def _attack_rows(result, variant, sweep_value, reports: dict):
    cfg = result.config
    for mode, rep in reports.items():
        result.reports[(sweep_value, mode)] = rep
        base = (cfg.name, variant, cfg.sweep_param, sweep_value, mode, rep.task)
        result.rows.append(ResultRow(*base, rep.metric, rep.value, rep.ci95_halfwidth, rep.n_attacks))
        adv = rep.advantage
        result.rows.append(ResultRow(*base, "advantage", adv.advantage, adv.ci95_halfwidth, adv.trial_count))


def _fit_row(result, variant, sweep_value, histories):
    final = [h.mse[-1] for h in histories]
    med, half = median_with_ci(final)
    cfg = result.config
    result.rows.append(ResultRow(cfg.name, variant, cfg.sweep_param, sweep_value, "none", cfg.task,
                                 "train_mse_median", med, half, len(final)))


def _attack_point(result, family, trainer, sweep_value, root: SeededRng, variant="-"):
    """Shadow corpus, meta-models and one shared target pool for one sweep point."""
    cfg = result.config
    corpora = A.build_shadow_corpora(family, trainer, cfg.shadows, cfg.modes, cfg.task, root.spawn("shadows"))
    metas = {mode: A.train_meta(c) for mode, c in corpora.items()}
    pool = draw_targets(family, trainer, cfg.trials, root.spawn("targets"))
    reports = {}
    for mode, meta in metas.items():
        trials = score(meta, pool, ABSOLUTE)
        reports[mode] = A.report_from_guesses(meta.task, [t.true_r for t in trials],
                                              [t.guess_r for t in trials], family.index_set)
    _attack_rows(result, variant, sweep_value, reports)
    _fit_row(result, variant, sweep_value, pool.histories)
    return reports


def run_expA(config: ExperimentConfig) -> ExperimentResult:
    """Two teachers differing by N(0, eps^2) weight noise; binary attack per sweep point.

    For ``expA_eps_sweep`` the sweep runs over eps with full training; for
    ``expA_mse_sweep`` eps is fixed and training stops at each target MSE.
    """
    if config.name not in (EXPA_EPS, EXPA_MSE):
        raise InvalidParameterError(f"run_expA cannot run {config.name!r}")
    result = ExperimentResult(config)
    root = SeededRng(config.seed)
    for value in config.sweep_values:
        if config.name == EXPA_EPS:
            params, trainer = ExpAParams(float(value), config.teacher_seed, config.n), config.trainer()
        else:
            params = ExpAParams(config.eps, config.teacher_seed, config.n)
            trainer = config.trainer(target_train_mse=float(value))
        family = ExpAFamily(params, root.spawn("teacher-noise"))
        _attack_point(result, family, trainer, value, root)
    return result


def _expb_family(config: ExperimentConfig, n: int) -> ExpBFamily:
    index_set = INTERVAL if config.task == A.REGRESS else BINARY
    return ExpBFamily(make_teacher(config.teacher_seed), n=n, index_set=index_set)


def run_expB(config: ExperimentConfig) -> ExperimentResult:
    """Mean-shifted features under one teacher; early stopping at each target MSE."""
    if config.name != EXPB_MSE:
        raise InvalidParameterError(f"run_expB cannot run {config.name!r}")
    result = ExperimentResult(config)
    root = SeededRng(config.seed)
    family = _expb_family(config, config.n)
    for value in config.sweep_values:
        _attack_point(result, family, config.trainer(target_train_mse=float(value)), value, root)
    return result


def run_expC(config: ExperimentConfig) -> ExperimentResult:
    """The expB distributions with a fixed training budget and varying dataset size."""
    if config.name != EXPC_SIZE:
        raise InvalidParameterError(f"run_expC cannot run {config.name!r}")
    result = ExperimentResult(config)
    root = SeededRng(config.seed)
    for value in config.sweep_values:
        _attack_point(result, _expb_family(config, int(value)), config.trainer(), int(value), root)
    return result


def _stratified_bootstrap(labels: np.ndarray, rng: SeededRng) -> np.ndarray:
    gen = rng.generator
    rows = []
    for cls in np.unique(labels):
        pool = np.flatnonzero(labels == cls)
        rows.append(pool[gen.integers(0, pool.size, pool.size)])
    return np.sort(np.concatenate(rows))


def run_membership(config: ExperimentConfig) -> ExperimentResult:
    """Distributional membership inference against ERM, causal ERM and IRM targets.

    Per variant: one shadow pool (its own trainer), ``trials`` target models
    with validation and inverted-correlation test MSE, and ``n_attacks``
    attacks. Each attack is a meta-model fitted on a class-stratified bootstrap
    resample of the shadow corpus and scored on every target model; the
    reported accuracy is the mean over attacks with a 95% half-width across
    attacks.
    """
    if config.name != MEMBERSHIP:
        raise InvalidParameterError(f"run_membership cannot run {config.name!r}")
    result = ExperimentResult(config)
    root = SeededRng(config.seed)
    parties = default_parties(config.parties, config.records_per_party)
    family = MembershipFamily(parties, config.absent_party)
    inverted = family.inverted()
    by_kind = {v.kind: v for v in VARIANTS}
    for kind in config.sweep_values:
        variant = by_kind[kind]
        trainer = variant.trainer(config.trainer(), config.hidden)
        corpora = A.build_shadow_corpora(family, trainer, config.shadows, config.modes, A.CLASSIFY,
                                         root.spawn("shadows"))
        target_rng = root.spawn("targets")
        pool = draw_targets(family, trainer, config.trials, target_rng)
        val, test = [], []
        for j, (r, model) in enumerate(zip(pool.rs, pool.models)):
            v = family.sample(r, target_rng.spawn("validation", j))
            t = inverted.sample(r, target_rng.spawn("test", j))
            val.append(mse(model, Dataset(trainer.project(v.features), v.labels)))
            test.append(mse(model, Dataset(trainer.project(t.features), t.labels)))
        for metric, values in (("validation_mse_median", val), ("test_mse_median", test)):
            med, half = median_with_ci(values)
            result.rows.append(ResultRow(config.name, kind, "variant", kind, "none", A.CLASSIFY, metric,
                                         med, half, len(values)))
        result.extras[kind] = {"validation_mse": val, "test_mse": test}
        d0 = d_zero(BINARY, ABSOLUTE)
        for mode, corpus in corpora.items():
            accs = []
            for a in range(config.n_attacks):
                rows = _stratified_bootstrap(corpus.rs, root.spawn("bootstrap", a))
                meta = A.train_meta(corpus.subset(rows))
                trials = score(meta, pool, ABSOLUTE)
                accs.append(1.0 - math.fsum(t.distance for t in trials) / len(trials))
            accs = np.array(accs)
            mean = math.fsum(accs) / accs.size
            half = Z95 * float(np.std(accs, ddof=1)) / math.sqrt(accs.size) if accs.size > 1 else 0.0
            rep = A.AttackReport(A.CLASSIFY, "accuracy", mean, half, accs.size)
            rep.advantage = _accuracy_advantage(d0, mean, half, accs.size)
            result.extras[(kind, mode)] = accs
            _attack_rows(result, kind, kind, {mode: rep})
    return result


def _accuracy_advantage(d0, accuracy, half, count):
    from .game import AdvantageReport

    return AdvantageReport(d0, 1.0 - accuracy, d0 - (1.0 - accuracy), count, half)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.name in (EXPA_EPS, EXPA_MSE):
        return run_expA(config)
    if config.name == EXPB_MSE:
        return run_expB(config)
    if config.name == EXPC_SIZE:
        return run_expC(config)
    return run_membership(config)


# -- a single game, for inspection ------------------------------------------

GAME_COLUMNS = ("trial", "true_r", "guess_r", "distance")


@dataclass
class GameConfig:
    """One attack played as the distribution inference game."""

    family: str = "expA"
    eps: float = 0.05
    task: str = A.CLASSIFY
    mode: str = A.BLACKBOX
    shadows: int = 256
    trials: int = 200
    distance: str = "absolute"
    seed: int = 0
    teacher_seed: int = 0
    n: int = 2048
    max_epochs: int = 30
    target_mse: float | None = None

    def __post_init__(self):
        if self.family not in ("expA", "expB"):
            raise InvalidParameterError(f"family must be expA or expB, got {self.family!r}")
        if self.eps < 0:
            raise InvalidParameterError(f"eps must be non-negative, got {self.eps}")
        if self.family == "expA" and self.task != A.CLASSIFY:
            raise InvalidParameterError("expA has a binary index set; use task = classify")
        if self.distance not in ("absolute", "squared"):
            raise InvalidParameterError(f"distance must be absolute or squared, got {self.distance!r}")
        if self.mode not in (A.WHITEBOX, A.BLACKBOX):
            raise InvalidParameterError(f"unknown attack mode {self.mode!r}")


def run_game(config: GameConfig):
    """Train one adversary and play ``trials`` rounds. Returns ``(trials, AdvantageReport)``."""
    root = SeededRng(config.seed)
    if config.family == "expA":
        family = ExpAFamily(ExpAParams(config.eps, config.teacher_seed, config.n), root.spawn("teacher-noise"))
    else:
        index_set = INTERVAL if config.task == A.REGRESS else BINARY
        family = ExpBFamily(make_teacher(config.teacher_seed), n=config.n, index_set=index_set)
    trainer = TrainerConfig(max_epochs=config.max_epochs, target_train_mse=config.target_mse)
    corpus = A.build_shadow_corpus(family, trainer, config.shadows, config.mode, config.task, root.spawn("shadows"))
    meta = A.train_meta(corpus)
    from .game import play_game

    distance = ABSOLUTE if config.distance == "absolute" else SQUARED
    trials = play_game(family, trainer, meta, config.trials, root.spawn("targets"), distance)
    return trials, advantage(trials, d_zero(family.index_set, distance))
